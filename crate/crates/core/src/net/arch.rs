//! Inception-encoder U-Net.
//!
//! Encoder (channel counts at width 1; every convolution is followed by
//! normalization and rectification, all padding is "same"):
//!
//! | tap        | resolution | channels | produced by                                   |
//! |------------|------------|----------|-----------------------------------------------|
//! | S1         | H/2        | 64       | 3x3/2 32, 3x3 32, 3x3 64                      |
//! | S2         | H/4        | 192      | max-pool 3x3/2, 1x1 80, 3x3 192               |
//! | S3         | H/8        | 288      | max-pool 3x3/2, three Inception-A blocks      |
//! | S4         | H/16       | 768      | grid reduction, four Inception-B blocks       |
//! | bottleneck | H/32       | 2048     | grid reduction, two Inception-C blocks        |
//!
//! Decoder: five stages of 2x2/2 transposed convolution, concatenation with
//! S4, S3, S2, S1 and finally the network input, then two 3x3 convolutions.
//! A 1x1 convolution and a sigmoid produce the probability map.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use super::{GraphBuilder, Network, NodeId, Section};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_DECODER_CHANNELS: [usize; 5] = [512, 256, 128, 64, 32];

/// Channel-width multiplier in (0, 1], kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WidthMultiplier(Ratio<u64>);

impl WidthMultiplier {
    pub const FULL: WidthMultiplier = WidthMultiplier(Ratio::new_raw(1, 1));

    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if denom == 0 || numer == 0 || numer > denom {
            return Err(Error::InvalidConfig(format!(
                "width multiplier {numer}/{denom} outside (0, 1]"
            )));
        }
        Ok(WidthMultiplier(Ratio::new(numer, denom)))
    }

    pub fn ratio(self) -> Ratio<u64> {
        self.0
    }

    /// `max(1, round(c * w))`, halves rounded up.
    pub fn scale(self, channels: usize) -> usize {
        let (n, d) = (*self.0.numer() as u128, *self.0.denom() as u128);
        let scaled = (2 * channels as u128 * n + d) / (2 * d);
        (scaled as usize).max(1)
    }
}

impl fmt::Display for WidthMultiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for WidthMultiplier {
    type Err = Error;

    /// Accepts `a/b`, an integer, or a terminating decimal such as `0.125`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad width multiplier `{s}`"));
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            let a = a.trim().parse().map_err(|_| bad())?;
            let b = b.trim().parse().map_err(|_| bad())?;
            return Self::new(a, b);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 12 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let denom = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| bad())?
        };
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        Self::new(int * denom + frac, denom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// `(height, width)`, each a positive multiple of 32.
    pub input_size: (usize, usize),
    pub width: WidthMultiplier,
    pub decoder_channels: [usize; 5],
    pub freeze_encoder: bool,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: (512, 512),
            width: WidthMultiplier::FULL,
            decoder_channels: DEFAULT_DECODER_CHANNELS,
            freeze_encoder: true,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Eighth-width network at `size x size`.
    pub fn toy(size: usize) -> Self {
        NetworkConfig {
            input_size: (size, size),
            width: WidthMultiplier::new(1, 8).expect("valid"),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {h}x{w} must be positive multiples of 32"
            )));
        }
        if self.decoder_channels.contains(&0) {
            return Err(Error::InvalidConfig(
                "decoder channel counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

struct Encoder<'b, T> {
    b: &'b mut GraphBuilder<T>,
    w: WidthMultiplier,
}

impl<T: Scalar> Encoder<'_, T> {
    fn cbr(&mut self, x: NodeId, name: &str, c: usize, k: (usize, usize), stride: usize) -> NodeId {
        let c = self.w.scale(c);
        self.b.conv_bn_relu(x, name, c, k, stride)
    }

    fn inception_a(&mut self, x: NodeId, name: &str, pool_features: usize) -> NodeId {
        let b1 = self.cbr(x, &format!("{name}.b1x1"), 64, (1, 1), 1);
        let b5 = self.cbr(x, &format!("{name}.b5x5_1"), 48, (1, 1), 1);
        let b5 = self.cbr(b5, &format!("{name}.b5x5_2"), 64, (5, 5), 1);
        let b3 = self.cbr(x, &format!("{name}.b3x3dbl_1"), 64, (1, 1), 1);
        let b3 = self.cbr(b3, &format!("{name}.b3x3dbl_2"), 96, (3, 3), 1);
        let b3 = self.cbr(b3, &format!("{name}.b3x3dbl_3"), 96, (3, 3), 1);
        let bp = self.b.avg_pool(x, &format!("{name}.pool"), 3);
        let bp = self.cbr(bp, &format!("{name}.bpool"), pool_features, (1, 1), 1);
        self.b.concat(&[b1, b5, b3, bp], &format!("{name}.concat"))
    }

    fn reduction_a(&mut self, x: NodeId, name: &str) -> NodeId {
        let b3 = self.cbr(x, &format!("{name}.b3x3"), 384, (3, 3), 2);
        let bd = self.cbr(x, &format!("{name}.b3x3dbl_1"), 64, (1, 1), 1);
        let bd = self.cbr(bd, &format!("{name}.b3x3dbl_2"), 96, (3, 3), 1);
        let bd = self.cbr(bd, &format!("{name}.b3x3dbl_3"), 96, (3, 3), 2);
        let bp = self.b.max_pool(x, &format!("{name}.pool"), 3, 2);
        self.b.concat(&[b3, bd, bp], &format!("{name}.concat"))
    }

    fn inception_b(&mut self, x: NodeId, name: &str, c7: usize) -> NodeId {
        let b1 = self.cbr(x, &format!("{name}.b1x1"), 192, (1, 1), 1);
        let b7 = self.cbr(x, &format!("{name}.b7x7_1"), c7, (1, 1), 1);
        let b7 = self.cbr(b7, &format!("{name}.b7x7_2"), c7, (1, 7), 1);
        let b7 = self.cbr(b7, &format!("{name}.b7x7_3"), 192, (7, 1), 1);
        let bd = self.cbr(x, &format!("{name}.b7x7dbl_1"), c7, (1, 1), 1);
        let bd = self.cbr(bd, &format!("{name}.b7x7dbl_2"), c7, (7, 1), 1);
        let bd = self.cbr(bd, &format!("{name}.b7x7dbl_3"), c7, (1, 7), 1);
        let bd = self.cbr(bd, &format!("{name}.b7x7dbl_4"), c7, (7, 1), 1);
        let bd = self.cbr(bd, &format!("{name}.b7x7dbl_5"), 192, (1, 7), 1);
        let bp = self.b.avg_pool(x, &format!("{name}.pool"), 3);
        let bp = self.cbr(bp, &format!("{name}.bpool"), 192, (1, 1), 1);
        self.b.concat(&[b1, b7, bd, bp], &format!("{name}.concat"))
    }

    fn reduction_b(&mut self, x: NodeId, name: &str) -> NodeId {
        let b3 = self.cbr(x, &format!("{name}.b3x3_1"), 192, (1, 1), 1);
        let b3 = self.cbr(b3, &format!("{name}.b3x3_2"), 320, (3, 3), 2);
        let b7 = self.cbr(x, &format!("{name}.b7x7x3_1"), 192, (1, 1), 1);
        let b7 = self.cbr(b7, &format!("{name}.b7x7x3_2"), 192, (1, 7), 1);
        let b7 = self.cbr(b7, &format!("{name}.b7x7x3_3"), 192, (7, 1), 1);
        let b7 = self.cbr(b7, &format!("{name}.b7x7x3_4"), 192, (3, 3), 2);
        let bp = self.b.max_pool(x, &format!("{name}.pool"), 3, 2);
        self.b.concat(&[b3, b7, bp], &format!("{name}.concat"))
    }

    fn inception_c(&mut self, x: NodeId, name: &str) -> NodeId {
        let b1 = self.cbr(x, &format!("{name}.b1x1"), 320, (1, 1), 1);
        let b3 = self.cbr(x, &format!("{name}.b3x3_1"), 384, (1, 1), 1);
        let b3a = self.cbr(b3, &format!("{name}.b3x3_2a"), 384, (1, 3), 1);
        let b3b = self.cbr(b3, &format!("{name}.b3x3_2b"), 384, (3, 1), 1);
        let bd = self.cbr(x, &format!("{name}.b3x3dbl_1"), 448, (1, 1), 1);
        let bd = self.cbr(bd, &format!("{name}.b3x3dbl_2"), 384, (3, 3), 1);
        let bda = self.cbr(bd, &format!("{name}.b3x3dbl_3a"), 384, (1, 3), 1);
        let bdb = self.cbr(bd, &format!("{name}.b3x3dbl_3b"), 384, (3, 1), 1);
        let bp = self.b.avg_pool(x, &format!("{name}.pool"), 3);
        let bp = self.cbr(bp, &format!("{name}.bpool"), 192, (1, 1), 1);
        self.b
            .concat(&[b1, b3a, b3b, bda, bdb, bp], &format!("{name}.concat"))
    }
}

/// Builds the segmentation network described by `cfg`. Two builds with the
/// same configuration are bitwise identical.
pub fn build_network<T: Scalar>(cfg: &NetworkConfig) -> Result<Network<T>> {
    cfg.validate()?;
    let mut b = GraphBuilder::<T>::new(3, cfg.input_size, cfg.seed);
    let input = b.input();

    b.set_section(Section::Encoder);
    let mut enc = Encoder {
        b: &mut b,
        w: cfg.width,
    };
    let x = enc.cbr(input, "stem.conv1", 32, (3, 3), 2);
    let x = enc.cbr(x, "stem.conv2", 32, (3, 3), 1);
    let s1 = enc.cbr(x, "stem.conv3", 64, (3, 3), 1);
    let x = enc.b.max_pool(s1, "stem.pool1", 3, 2);
    let x = enc.cbr(x, "stem.conv4", 80, (1, 1), 1);
    let s2 = enc.cbr(x, "stem.conv5", 192, (3, 3), 1);
    let mut x = enc.b.max_pool(s2, "stem.pool2", 3, 2);
    for (i, pf) in [32, 64, 64].into_iter().enumerate() {
        x = enc.inception_a(x, &format!("mixed{i}"), pf);
    }
    let s3 = x;
    x = enc.reduction_a(x, "mixed3");
    for (i, c7) in [128, 160, 160, 192].into_iter().enumerate() {
        x = enc.inception_b(x, &format!("mixed{}", i + 4), c7);
    }
    let s4 = x;
    x = enc.reduction_b(x, "mixed8");
    x = enc.inception_c(x, "mixed9");
    let bottleneck = enc.inception_c(x, "mixed10");

    b.mark("S1", s1);
    b.mark("S2", s2);
    b.mark("S3", s3);
    b.mark("S4", s4);
    b.mark("bottleneck", bottleneck);

    b.set_section(Section::Decoder);
    let taps = [s4, s3, s2, s1, input];
    let mut x = bottleneck;
    for (i, (&base, &tap)) in cfg.decoder_channels.iter().zip(&taps).enumerate() {
        let stage = i + 1;
        let c = cfg.width.scale(base);
        let up = b.conv_transpose(x, &format!("stage{stage}.up"), c, 2);
        let cat = b.concat(&[up, tap], &format!("stage{stage}.concat"));
        b.mark(&format!("stage{stage}.up"), up);
        b.mark(&format!("stage{stage}.concat"), cat);
        let y = b.conv_bn_relu(cat, &format!("stage{stage}.block1"), c, (3, 3), 1);
        x = b.conv_bn_relu(y, &format!("stage{stage}.block2"), c, (3, 3), 1);
        b.mark(&format!("stage{stage}"), x);
    }
    let logits = b.conv(x, "head.conv", 1, (1, 1), 1, true);
    let out = b.sigmoid(logits, "head.sigmoid");

    let mut net = b.finish(out);
    net.config = Some(cfg.clone());
    net.set_encoder_frozen(cfg.freeze_encoder);
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_scaling_rounds_and_floors_at_one() {
        let w = WidthMultiplier::new(1, 8).unwrap();
        assert_eq!(w.scale(32), 4);
        assert_eq!(w.scale(48), 6);
        assert_eq!(w.scale(4), 1); // 0.5 rounds up
        assert_eq!(w.scale(3), 1);
        assert_eq!(w.scale(2048), 256);
        assert_eq!(WidthMultiplier::FULL.scale(7), 7);
        let third = WidthMultiplier::new(1, 3).unwrap();
        assert_eq!(third.scale(80), 27);
        assert_eq!(WidthMultiplier::new(1, 100).unwrap().scale(3), 1);
    }

    #[test]
    fn width_parsing() {
        assert_eq!(
            "1/8".parse::<WidthMultiplier>().unwrap(),
            WidthMultiplier::new(1, 8).unwrap()
        );
        assert_eq!(
            "0.125".parse::<WidthMultiplier>().unwrap(),
            WidthMultiplier::new(1, 8).unwrap()
        );
        assert_eq!(
            "1".parse::<WidthMultiplier>().unwrap(),
            WidthMultiplier::FULL
        );
        assert!("0".parse::<WidthMultiplier>().is_err());
        assert!("3/2".parse::<WidthMultiplier>().is_err());
        assert!("abc".parse::<WidthMultiplier>().is_err());
    }

    #[test]
    fn config_rejects_bad_sizes() {
        let mut cfg = NetworkConfig::toy(64);
        cfg.input_size = (48, 64);
        assert!(matches!(
            build_network::<f32>(&cfg),
            Err(Error::InvalidConfig(_))
        ));
        cfg.input_size = (0, 64);
        assert!(cfg.validate().is_err());
    }
}
