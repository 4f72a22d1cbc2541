use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::train::{Adam, AdamConfig, BinaryCrossEntropy};

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn random_targets(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| f64::from(rng.gen_bool(0.4) as u8)).collect(),
    )
    .unwrap()
}

fn loss_at(net: &Network<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    let tape = net.forward_train(x).unwrap();
    BinaryCrossEntropy::default()
        .value(tape.output().data(), y.data())
        .unwrap()
}

/// Central differences on `samples` random trainable coordinates. Each
/// coordinate keeps the best agreement over `steps`. Returns the worst
/// relative error.
fn finite_difference_check(
    net: &mut Network<f64>,
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    samples: usize,
    steps: &[f64],
    seed: u64,
) -> f64 {
    let pass = net.gradients(x, y, &BinaryCrossEntropy::default()).unwrap();
    let coords: Vec<(ParamId, usize)> = pass
        .grads
        .entries
        .iter()
        .flat_map(|e| (0..e.grad.len()).map(move |i| (e.param, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let (param, i) = coords[rng.gen_range(0..coords.len())];
        let analytic = pass
            .grads
            .entries
            .iter()
            .find(|e| e.param == param)
            .unwrap()
            .grad
            .data()[i];
        let orig = net.params()[param].tensor.data()[i];
        let mut best = f64::INFINITY;
        for &h in steps {
            net.param_data_mut(param)[i] = orig + h;
            let up = loss_at(net, x, y);
            net.param_data_mut(param)[i] = orig - h;
            let down = loss_at(net, x, y);
            net.param_data_mut(param)[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            best =
                best.min((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        }
        worst = worst.max(best);
    }
    worst
}

fn small_graph() -> Network<f64> {
    let mut b = GraphBuilder::<f64>::new(3, (8, 8), 7);
    let x = b.input();
    b.set_section(Section::Encoder);
    let e = b.conv_bn_relu(x, "c1", 4, (3, 3), 2);
    let p = b.max_pool(e, "pool", 3, 2);
    let a = b.avg_pool(p, "avg", 3);
    b.set_section(Section::Decoder);
    let u = b.conv_transpose(a, "up", 3, 2);
    let cat = b.concat(&[u, e], "cat");
    let u2 = b.conv_transpose(cat, "up2", 2, 2);
    let cat2 = b.concat(&[u2, x], "cat2");
    let d = b.conv_bn_relu(cat2, "d", 3, (1, 3), 1);
    let head = b.conv(d, "head", 1, (1, 1), 1, true);
    let out = b.sigmoid(head, "sig");
    b.finish(out)
}

#[test]
fn small_graph_gradients_match_finite_differences() {
    let mut net = small_graph();
    let x = random_tensor(&[2, 3, 8, 8], 1);
    let y = random_targets(&[2, 1, 8, 8], 2);
    let worst = finite_difference_check(&mut net, &x, &y, 80, &[1e-6], 3);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn toy_network_gradients_match_finite_differences() {
    let mut net = build_network::<f64>(&NetworkConfig::toy(32)).unwrap();
    let x = random_tensor(&[2, 3, 32, 32], 4);
    let y = random_targets(&[2, 1, 32, 32], 5);
    let worst = finite_difference_check(&mut net, &x, &y, 60, &[1e-6], 6);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn unfrozen_toy_network_gradients_match_finite_differences() {
    // Batch-statistics BN on 1x1 and 2x2 maps makes the deep encoder sharply
    // curved, so a second, smaller step is tried per coordinate.
    let mut net = build_network::<f64>(&NetworkConfig::toy(32)).unwrap();
    net.set_encoder_frozen(false);
    let x = random_tensor(&[2, 3, 32, 32], 4);
    let y = random_targets(&[2, 1, 32, 32], 5);
    let worst = finite_difference_check(&mut net, &x, &y, 60, &[1e-6, 1e-9], 6);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn frozen_encoder_yields_decoder_gradients_only() {
    let net = build_network::<f64>(&NetworkConfig::toy(32)).unwrap();
    let x = random_tensor(&[1, 3, 32, 32], 8);
    let y = random_targets(&[1, 1, 32, 32], 9);
    let pass = net
        .gradients(&x, &y, &BinaryCrossEntropy::default())
        .unwrap();
    assert!(pass.grads.names().all(|n| n.starts_with("decoder.")));
    let trainable = net.params().iter().filter(|p| p.trainable).count();
    assert_eq!(pass.grads.entries.len(), trainable);
    // encoder BN layers use running statistics while frozen
    assert!(pass
        .batch_stats
        .iter()
        .all(|s| net.params()[s.mean_param].section == Section::Decoder));
}

#[test]
fn shapes_at_every_tap() {
    let net = build_network::<f32>(&NetworkConfig::toy(64)).unwrap();
    let w = WidthMultiplier::new(1, 8).unwrap();
    let expect = [
        ("S1", w.scale(64), 2),
        ("S2", w.scale(192), 4),
        ("S3", w.scale(288), 8),
        ("S4", w.scale(768), 16),
        ("bottleneck", w.scale(2048), 32),
    ];
    for (mark, c, scale) in expect {
        let node = &net.nodes()[net.mark(mark).unwrap()];
        assert_eq!((node.channels, node.scale), (c, scale), "{mark}");
    }
    for (i, base) in DEFAULT_DECODER_CHANNELS.iter().enumerate() {
        let node = &net.nodes()[net.mark(&format!("stage{}", i + 1)).unwrap()];
        assert_eq!(node.channels, w.scale(*base));
        assert_eq!(node.scale, 16 >> i);
    }

    let x = Tensor::<f32>::full(&[1, 3, 64, 64], 0.3);
    let tape = net.forward_train(&x).unwrap();
    for (mark, c, scale) in expect {
        let t = tape.activation(net.mark(mark).unwrap()).unwrap();
        assert_eq!(t.shape(), &[1, c, 64 / scale, 64 / scale], "{mark}");
    }
    assert_eq!(tape.output().shape(), &[1, 1, 64, 64]);
}

#[test]
fn skip_concat_carries_the_encoder_tap_unchanged() {
    let net = build_network::<f32>(&NetworkConfig::toy(32)).unwrap();
    let x = random_tensor(&[1, 3, 32, 32], 10).cast::<f32>();
    let tape = net.forward_train(&x).unwrap();
    let taps = ["S4", "S3", "S2", "S1"];
    for (i, tap) in taps.iter().enumerate() {
        let stage = i + 1;
        let up = tape
            .activation(net.mark(&format!("stage{stage}.up")).unwrap())
            .unwrap();
        let cat = tape
            .activation(net.mark(&format!("stage{stage}.concat")).unwrap())
            .unwrap();
        let skip = tape.activation(net.mark(tap).unwrap()).unwrap();
        let [_, cu, h, w] = up.dims4();
        let plane = h * w;
        assert_eq!(&cat.data()[..cu * plane], up.data());
        assert_eq!(&cat.data()[cu * plane..], skip.data(), "stage {stage}");
    }
    let cat5 = tape.activation(net.mark("stage5.concat").unwrap()).unwrap();
    let cu = cat5.shape()[1] - 3;
    assert_eq!(&cat5.data()[cu * 32 * 32..], x.data());
}

#[test]
fn builds_are_deterministic_and_seeded() {
    let cfg = NetworkConfig::toy(32);
    let a = build_network::<f32>(&cfg).unwrap();
    let b = build_network::<f32>(&cfg).unwrap();
    assert_eq!(a, b);
    let other = build_network::<f32>(&NetworkConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.params()[0].tensor, other.params()[0].tensor);

    let x = random_tensor(&[2, 3, 32, 32], 11).cast::<f32>();
    let ya = a.forward(&x).unwrap();
    let yb = b.forward(&x).unwrap();
    assert_eq!(ya, yb);
}

#[test]
fn single_conv_parameter_count() {
    let mut b = GraphBuilder::<f32>::new(3, (8, 8), 0);
    let x = b.input();
    let c = b.conv(x, "c", 8, (3, 3), 1, true);
    let net = b.finish(c);
    assert_eq!(
        net.count_parameters(),
        ParamCount {
            total: 224,
            trainable: 224
        }
    );
}

/// Parameter count worked out from the block tables, independently of the
/// graph builder.
fn expected_parameter_count(w: WidthMultiplier, decoder: [usize; 5]) -> (usize, usize) {
    let s = |c: usize| w.scale(c);
    let enc = std::cell::Cell::new(0);
    // conv without bias plus four BN vectors
    let cbr = |cin: usize, cout: usize, kh: usize, kw: usize| {
        enc.set(enc.get() + cout * cin * kh * kw + 4 * cout);
        cout
    };
    let c = cbr(3, s(32), 3, 3);
    let c = cbr(c, s(32), 3, 3);
    let s1 = cbr(c, s(64), 3, 3);
    let c = cbr(s1, s(80), 1, 1);
    let s2 = cbr(c, s(192), 3, 3);
    let mut c = s2;
    for pf in [32, 64, 64] {
        let b1 = cbr(c, s(64), 1, 1);
        let b5 = cbr(cbr(c, s(48), 1, 1), s(64), 5, 5);
        let b3 = cbr(cbr(cbr(c, s(64), 1, 1), s(96), 3, 3), s(96), 3, 3);
        let bp = cbr(c, s(pf), 1, 1);
        c = b1 + b5 + b3 + bp;
    }
    let s3 = c;
    let r3 = cbr(c, s(384), 3, 3);
    let rd = cbr(cbr(cbr(c, s(64), 1, 1), s(96), 3, 3), s(96), 3, 3);
    c += r3 + rd;
    for c7 in [128, 160, 160, 192] {
        let b1 = cbr(c, s(192), 1, 1);
        let b7 = cbr(cbr(cbr(c, s(c7), 1, 1), s(c7), 1, 7), s(192), 7, 1);
        let mut d = cbr(c, s(c7), 1, 1);
        d = cbr(d, s(c7), 7, 1);
        d = cbr(d, s(c7), 1, 7);
        d = cbr(d, s(c7), 7, 1);
        d = cbr(d, s(192), 1, 7);
        let bp = cbr(c, s(192), 1, 1);
        c = b1 + b7 + d + bp;
    }
    let s4 = c;
    let r3 = cbr(cbr(c, s(192), 1, 1), s(320), 3, 3);
    let mut r7 = cbr(c, s(192), 1, 1);
    r7 = cbr(r7, s(192), 1, 7);
    r7 = cbr(r7, s(192), 7, 1);
    r7 = cbr(r7, s(192), 3, 3);
    c += r3 + r7;
    for _ in 0..2 {
        let b1 = cbr(c, s(320), 1, 1);
        let b3 = cbr(c, s(384), 1, 1);
        let b3 = cbr(b3, s(384), 1, 3) + cbr(b3, s(384), 3, 1);
        let d = cbr(cbr(c, s(448), 1, 1), s(384), 3, 3);
        let d = cbr(d, s(384), 1, 3) + cbr(d, s(384), 3, 1);
        let bp = cbr(c, s(192), 1, 1);
        c = b1 + b3 + d + bp;
    }
    assert_eq!(c, s(2048));

    let mut dec = 0;
    let mut dec_running = 0;
    let mut x = c;
    for (base, tap) in decoder.iter().zip([s4, s3, s2, s1, 3]) {
        let o = s(*base);
        dec += x * o * 4 + o;
        dec += o * (o + tap) * 9 + 2 * o + o * o * 9 + 2 * o;
        dec_running += 4 * o;
        x = o;
    }
    dec += x + 1;
    (enc.get() + dec + dec_running, dec)
}

#[test]
fn parameter_counts_match_closed_form() {
    for (n, d) in [(1, 8), (1, 4), (1, 1)] {
        let cfg = NetworkConfig {
            input_size: (32, 32),
            width: WidthMultiplier::new(n, d).unwrap(),
            ..Default::default()
        };
        let net = build_network::<f32>(&cfg).unwrap();
        let (total, trainable) = expected_parameter_count(cfg.width, cfg.decoder_channels);
        let count = net.count_parameters();
        assert_eq!(count, ParamCount { total, trainable }, "w = {n}/{d}");
        assert!(count.trainable < count.total);
    }
}

#[test]
fn weights_roundtrip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.lsw");
    let a = build_network::<f32>(&NetworkConfig::toy(32)).unwrap();
    save_weights(&a, &path).unwrap();
    let mut b = build_network::<f32>(&NetworkConfig {
        seed: 99,
        ..NetworkConfig::toy(32)
    })
    .unwrap();
    let report = load_weights(&mut b, &path, true).unwrap();
    assert!(report.unmatched.is_empty() && report.missing.is_empty());
    assert_eq!(a.params(), b.params());
}

#[test]
fn non_strict_load_of_encoder_only_container() {
    let src = build_network::<f32>(&NetworkConfig {
        seed: 5,
        ..NetworkConfig::toy(32)
    })
    .unwrap();
    let mut container = WeightContainer::from_network(&src);
    container.records.retain(|r| r.name.starts_with("encoder."));
    container.records.push(WeightRecord {
        name: "classifier.fc.weight".into(),
        dims: vec![2],
        data: vec![0.0, 1.0],
    });
    let mut dst = build_network::<f32>(&NetworkConfig::toy(32)).unwrap();
    let before = dst.clone();
    assert!(matches!(
        apply_container(&mut dst, &container, true),
        Err(Error::NameMismatch(_))
    ));
    assert_eq!(dst, before);

    let report = apply_container(&mut dst, &container, false).unwrap();
    assert_eq!(report.unmatched, vec!["classifier.fc.weight".to_string()]);
    assert!(report.missing.iter().all(|n| n.starts_with("decoder.")));
    for (p, q) in dst.params().iter().zip(src.params()) {
        match p.section {
            Section::Encoder => assert_eq!(p.tensor, q.tensor, "{}", p.name),
            Section::Decoder => {}
        }
    }
    for (p, q) in dst.params().iter().zip(before.params()) {
        if p.section == Section::Decoder {
            assert_eq!(p.tensor, q.tensor);
        }
    }
}

#[test]
fn batched_forward_matches_single_samples() {
    let net = build_network::<f32>(&NetworkConfig::toy(32)).unwrap();
    let x = random_tensor(&[2, 3, 32, 32], 12).cast::<f32>();
    let batched = net.forward(&x).unwrap();
    for n in 0..2 {
        let single = net
            .forward(&Tensor::from_vec(&[1, 3, 32, 32], x.sample(n).to_vec()).unwrap())
            .unwrap();
        for (a, b) in single.data().iter().zip(batched.sample(n)) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn head_bias_gradient_is_mean_residual() {
    // d/db of mean BCE through a sigmoid is mean(p - y)
    let net = build_network::<f64>(&NetworkConfig::toy(32)).unwrap();
    let x = random_tensor(&[2, 3, 32, 32], 13);
    let y = random_targets(&[2, 1, 32, 32], 14);
    let pass = net
        .gradients(&x, &y, &BinaryCrossEntropy::default())
        .unwrap();
    let expected: f64 = pass
        .output
        .data()
        .iter()
        .zip(y.data())
        .map(|(p, t)| p - t)
        .sum::<f64>()
        / y.len() as f64;
    let got = pass.grads.get("decoder.head.conv.bias").unwrap().data()[0];
    assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
}

#[test]
fn adam_leaves_frozen_encoder_untouched() {
    let mut net = build_network::<f32>(&NetworkConfig::toy(32)).unwrap();
    let before = net.clone();
    let mut adam = Adam::new(AdamConfig::default());
    let x = random_tensor(&[2, 3, 32, 32], 15).cast::<f32>();
    let y = random_targets(&[2, 1, 32, 32], 16).cast::<f32>();
    for _ in 0..3 {
        let pass = net
            .gradients(&x, &y, &BinaryCrossEntropy::default())
            .unwrap();
        adam.step(&mut net, &pass.grads, 1e-3).unwrap();
        net.update_running_stats(&pass.batch_stats);
    }
    for (p, q) in net.params().iter().zip(before.params()) {
        if p.section == Section::Encoder {
            assert_eq!(p.tensor, q.tensor, "{}", p.name);
        }
    }
    assert_ne!(net.params(), before.params());
}

#[test]
fn cast_preserves_values() {
    let a = build_network::<f32>(&NetworkConfig::toy(32)).unwrap();
    let b: Network<f32> = a.cast::<f64>().cast();
    assert_eq!(a, b);
}
