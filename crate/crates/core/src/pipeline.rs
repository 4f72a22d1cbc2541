//! End-to-end commands: preprocess, train, cross-validate, predict, evaluate
//! and overlay. Scans are `*.mhd` files; a scan's id is its file stem and its
//! ground truth is the file with the same stem in the label directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, binarize, evaluate_scan, interior_range, DiceReport, ScanDice};
use crate::net::{
    apply_container, build_network, load_weights, save_weights, Network, WeightContainer,
};
use crate::overlay::{render_overlay, ColorCounts};
use crate::preprocess::{preprocess, WindowedVolume};
use crate::report::{format_scans_csv, format_slices_csv, format_table};
use crate::scalar::Scalar;
use crate::slab::{slab_from_windowed, SlabConfig, SlabMode};
use crate::tensor::Tensor;
use crate::train::{fit_with, kfold_split, split_validation, SlabSet, TrainHistory};
use crate::volume::{
    read_mhd, to_binary_lung, write_mhd, BinaryMask, CtVolume, LabelMap, LabelVolume, MhdVolume,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanEntry {
    pub id: String,
    pub path: PathBuf,
}

/// `*.mhd` files of a directory, sorted by id.
pub fn discover_scans(dir: &Path) -> Result<Vec<ScanEntry>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("mhd"))
        {
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(ScanEntry {
                    id: id.to_string(),
                    path: path.clone(),
                });
            }
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

pub fn load_ct(path: &Path) -> Result<CtVolume> {
    read_mhd(path)?.into_ct()
}

/// Ground truth through the label map (lungs merged, trachea dropped).
pub fn load_ground_truth(path: &Path, map: &LabelMap, strict: bool) -> Result<BinaryMask> {
    let labels = match read_mhd(path)? {
        MhdVolume::Label(v) => v,
        MhdVolume::Ct(v) => {
            if let Some(&bad) = v.voxels().iter().find(|&&x| !(0..=255).contains(&x)) {
                return Err(Error::UnsupportedType(format!(
                    "label value {bad} in MET_SHORT ground truth"
                )));
            }
            v.map(|x| x as u8)
        }
    };
    to_binary_lung(&LabelVolume::new(labels, *map, strict)?)
}

/// A predicted mask (voxels must already be 0 or 1).
pub fn load_binary(path: &Path) -> Result<BinaryMask> {
    BinaryMask::from_volume(read_mhd(path)?.into_labels()?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Windowed CT plus binary ground truth, ready for slab generation.
#[derive(Debug, Clone)]
pub struct PreparedScan {
    pub id: String,
    pub windowed: WindowedVolume,
    pub gt: BinaryMask,
}

pub fn prepare_scan(cfg: &RunConfig, entry: &ScanEntry) -> Result<PreparedScan> {
    let labels_dir = cfg
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("`labels` directory not configured".into()))?;
    let gt_path = labels_dir.join(format!("{}.mhd", entry.id));
    if !gt_path.exists() {
        return Err(Error::MissingPair(entry.id.clone()));
    }
    let windowed = preprocess(&load_ct(&entry.path)?);
    let gt = load_ground_truth(&gt_path, &cfg.label_map, cfg.strict_labels)?;
    if gt.dims() != windowed.geometry().dims {
        return Err(Error::GeometryMismatch(format!(
            "{}: CT {:?} vs ground truth {:?}",
            entry.id,
            windowed.geometry().dims,
            gt.dims()
        )));
    }
    Ok(PreparedScan {
        id: entry.id.clone(),
        windowed,
        gt,
    })
}

/// Lazily generated slabs over several scans, indexed scan by scan in
/// ascending centre order.
pub struct ScanSlabs<'a> {
    scans: Vec<&'a PreparedScan>,
    cfg: SlabConfig,
    index: Vec<(usize, usize)>,
}

impl<'a> ScanSlabs<'a> {
    pub fn new(scans: Vec<&'a PreparedScan>, mode: SlabMode) -> Self {
        let index = scans
            .iter()
            .enumerate()
            .flat_map(|(s, scan)| {
                interior_range(scan.windowed.geometry().depth()).map(move |n| (s, n))
            })
            .collect();
        ScanSlabs {
            scans,
            cfg: SlabConfig { mode },
            index,
        }
    }
}

impl<T: Scalar> SlabSet<T> for ScanSlabs<'_> {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn slab(&self, i: usize) -> Result<crate::slab::Slab<T>> {
        let (s, n) = self.index[i];
        let scan = self.scans[s];
        slab_from_windowed(&scan.id, &scan.windowed, Some(&scan.gt), n, self.cfg)
    }
}

/// Runs the network over every interior slice. Edge slices stay zero.
pub fn predict_volume<T: Scalar>(
    net: &Network<T>,
    windowed: &WindowedVolume,
    mode: SlabMode,
    threshold: f64,
    batch_size: usize,
) -> Result<BinaryMask> {
    let geometry = *windowed.geometry();
    let [nx, ny, _] = geometry.dims;
    if net.input_size() != (ny, nx) {
        return Err(Error::GeometryMismatch(format!(
            "slices are {ny}x{nx} but the network expects {:?}",
            net.input_size()
        )));
    }
    let cfg = SlabConfig { mode };
    let plane = nx * ny;
    let mut voxels = vec![0u8; geometry.voxel_count()];
    let centers: Vec<usize> = interior_range(geometry.depth()).collect();
    for chunk in centers.chunks(batch_size.max(1)) {
        let slabs = chunk
            .iter()
            .map(|&n| slab_from_windowed::<T>("", windowed, None, n, cfg))
            .collect::<Result<Vec<_>>>()?;
        let inputs: Vec<&[T]> = slabs.iter().map(|s| s.channels.as_slice()).collect();
        let probs = net.forward(&Tensor::stack(&inputs, [3, ny, nx])?)?;
        for (k, &n) in chunk.iter().enumerate() {
            let mask = binarize(probs.sample(k), threshold);
            voxels[n * plane..(n + 1) * plane].copy_from_slice(&mask);
        }
    }
    BinaryMask::new(geometry, voxels)
}

/// Network for `cfg` with weights loaded strictly from `weights`.
pub fn load_network(cfg: &RunConfig, weights: &Path) -> Result<Network<f32>> {
    let mut net = build_network::<f32>(&cfg.network)?;
    let container = WeightContainer::read(weights)?;
    apply_container(&mut net, &container, true).map_err(|e| match e {
        Error::NameMismatch(m) => Error::BadWeights(m),
        Error::DimMismatch { expected, found } => Error::BadWeights(format!(
            "tensor of {found} values where {expected} expected"
        )),
        other => other,
    })?;
    Ok(net)
}

fn edge_note(depth: usize) -> String {
    let predicted = interior_range(depth);
    let edges: Vec<String> = (0..depth)
        .filter(|z| !predicted.contains(z))
        .map(|z| z.to_string())
        .collect();
    format!(
        "edge_slices = {}\nfill = 0\nreason = no neighbouring slice on one side, so no 2.5D input exists\n",
        edges.join(",")
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutput {
    pub id: String,
    pub mask: PathBuf,
    pub note: PathBuf,
}

fn predict_one(
    cfg: &RunConfig,
    net: &Network<f32>,
    entry: &ScanEntry,
    out_dir: &Path,
) -> Result<PredictOutput> {
    let windowed = preprocess(&load_ct(&entry.path)?);
    let mask = predict_volume(
        net,
        &windowed,
        cfg.mode,
        cfg.train.threshold,
        cfg.train.batch_size,
    )?;
    let mask_path = out_dir.join(format!("{}.mhd", entry.id));
    write_mhd(mask.as_volume(), &mask_path)?;
    let note = out_dir.join(format!("{}.edges.txt", entry.id));
    write_text(&note, &edge_note(mask.dims()[2]))?;
    info!("predicted {}", entry.id);
    Ok(PredictOutput {
        id: entry.id.clone(),
        mask: mask_path,
        note,
    })
}

/// Predicts every scan (up to `jobs` concurrently) into `out_dir`, writing
/// `<id>.mhd`/`.raw` masks and an `<id>.edges.txt` note per scan.
pub fn cmd_predict(
    cfg: &RunConfig,
    scans: &[PathBuf],
    weights: &Path,
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<PredictOutput>> {
    let net = load_network(cfg, weights)?;
    create_dir(out_dir)?;
    let entries: Vec<ScanEntry> = scans
        .iter()
        .map(|p| {
            let id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::InvalidConfig(format!("bad scan path {}", p.display())))?;
            Ok(ScanEntry {
                id: id.to_string(),
                path: p.clone(),
            })
        })
        .collect::<Result<_>>()?;
    predict_entries(cfg, &net, &entries, out_dir, jobs)
}

fn predict_entries(
    cfg: &RunConfig,
    net: &Network<f32>,
    entries: &[ScanEntry],
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<PredictOutput>> {
    pool(jobs)?.install(|| {
        entries
            .par_iter()
            .map(|e| predict_one(cfg, net, e, out_dir))
            .collect()
    })
}

/// Label for a prediction set: slab-mode names map to their display form.
pub fn group_label(name: &str) -> String {
    name.parse::<SlabMode>()
        .map(|m| m.label().to_string())
        .unwrap_or_else(|_| name.to_string())
}

fn score_dirs(
    cfg: &RunConfig,
    pred_sets: &[(String, PathBuf)],
    gt_dir: &Path,
    jobs: usize,
) -> Result<Vec<ScanDice>> {
    let gt_entries = discover_scans(gt_dir)?;
    let gt_ids: BTreeSet<&str> = gt_entries.iter().map(|e| e.id.as_str()).collect();
    let mut jobs_list = Vec::new();
    for (group, dir) in pred_sets {
        let preds = discover_scans(dir)?;
        let pred_ids: BTreeSet<&str> = preds.iter().map(|e| e.id.as_str()).collect();
        if let Some(missing) = pred_ids.symmetric_difference(&gt_ids).next() {
            return Err(Error::MissingPair((*missing).to_string()));
        }
        for p in preds {
            let gt_path = gt_dir.join(format!("{}.mhd", p.id));
            jobs_list.push((group.clone(), p, gt_path));
        }
    }
    pool(jobs)?.install(|| {
        jobs_list
            .par_iter()
            .map(|(group, p, gt_path)| {
                let pred = load_binary(&p.path)?;
                let gt = load_ground_truth(gt_path, &cfg.label_map, cfg.strict_labels)?;
                evaluate_scan(&p.id, group, &pred, &gt, interior_range(pred.dims()[2]))
            })
            .collect()
    })
}

fn file_token(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `report.txt`, `scans.csv` and one `slices_<block>_<group>.csv` per
/// block and configuration.
pub fn write_reports(reports: &[DiceReport], out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    write_text(&out_dir.join("report.txt"), &format_table(reports))?;
    write_text(&out_dir.join("scans.csv"), &format_scans_csv(reports))?;
    for r in reports {
        for g in &r.groups {
            let scans = r.scans.iter().filter(|s| s.group == g.group);
            let name = format!(
                "slices_{}_{}.csv",
                file_token(&r.block),
                file_token(&g.group)
            );
            write_text(&out_dir.join(name), &format_slices_csv(scans))?;
        }
    }
    Ok(())
}

/// Scores each prediction set against each reference set. Every reference
/// set becomes one report block whose columns are the prediction sets.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    pred_sets: &[(String, PathBuf)],
    gt_sets: &[(String, PathBuf)],
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<DiceReport>> {
    let mut reports = Vec::new();
    for (block, gt_dir) in gt_sets {
        let scans = score_dirs(cfg, pred_sets, gt_dir, jobs)?;
        reports.push(aggregate(block, scans)?);
    }
    write_reports(&reports, out_dir)?;
    Ok(reports)
}

/// Renders slice `z` of a scan as a PPM overlay.
pub fn cmd_overlay(
    cfg: &RunConfig,
    ct: &Path,
    pred: &Path,
    gt: &Path,
    z: usize,
    out: &Path,
) -> Result<ColorCounts> {
    let windowed = preprocess(&load_ct(ct)?);
    let pred = load_binary(pred)?;
    let gt = load_ground_truth(gt, &cfg.label_map, cfg.strict_labels)?;
    let [nx, ny, nz] = windowed.geometry().dims;
    if pred.dims() != windowed.geometry().dims || gt.dims() != windowed.geometry().dims {
        return Err(Error::GeometryMismatch(
            "overlay inputs differ in size".into(),
        ));
    }
    if z >= nz {
        return Err(Error::OutOfRange {
            index: z,
            depth: nz,
        });
    }
    let img = render_overlay(windowed.slice(z), pred.slice(z), gt.slice(z), ny, nx)?;
    if let Some(dir) = out.parent() {
        create_dir(dir)?;
    }
    fs::write(out, img.to_ppm()).map_err(|e| Error::io(out, e))?;
    Ok(img.counts())
}

/// Writes the calibrated and windowed volume as `<out_dir>/<id>.mhd`.
pub fn cmd_preprocess(ct: &Path, out_dir: &Path) -> Result<PathBuf> {
    let windowed = preprocess(&load_ct(ct)?);
    create_dir(out_dir)?;
    let stem = ct
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidConfig(format!("bad scan path {}", ct.display())))?;
    let out = out_dir.join(format!("{stem}.mhd"));
    write_mhd(windowed.as_volume(), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub history: TrainHistory,
    pub weights: PathBuf,
    pub history_file: PathBuf,
}

fn train_scans(
    cfg: &RunConfig,
    train: &[&PreparedScan],
    val: &[&PreparedScan],
    out_dir: &Path,
) -> Result<(Network<f32>, TrainOutput)> {
    let mut net = build_network::<f32>(&cfg.network)?;
    if let Some(pre) = &cfg.pretrained {
        let report = load_weights(&mut net, pre, false)?;
        info!(
            "pretrained: {} tensors loaded, {} unmatched",
            report.loaded.len(),
            report.unmatched.len()
        );
    }
    let train_set = ScanSlabs::new(train.to_vec(), cfg.mode);
    // a single training scan leaves nothing to hold out
    let val_set = ScanSlabs::new(
        if val.is_empty() {
            train.to_vec()
        } else {
            val.to_vec()
        },
        cfg.mode,
    );
    if SlabSet::<f32>::is_empty(&train_set) {
        return Err(Error::EmptyDataset);
    }
    let history = fit_with(&mut net, &train_set, &val_set, &cfg.train, |r| {
        info!(
            "epoch {} train {:.6} val {:.6} lr {}",
            r.epoch, r.train_loss, r.val_loss, r.lr
        )
    })?;
    create_dir(out_dir)?;
    let weights = out_dir.join("weights.lsw");
    save_weights(&net, &weights)?;
    let history_file = out_dir.join("history.csv");
    history.write(&history_file)?;
    Ok((
        net,
        TrainOutput {
            train_ids: train.iter().map(|s| s.id.clone()).collect(),
            val_ids: val.iter().map(|s| s.id.clone()).collect(),
            history,
            weights,
            history_file,
        },
    ))
}

fn prepare_all(cfg: &RunConfig, entries: &[ScanEntry], jobs: usize) -> Result<Vec<PreparedScan>> {
    pool(jobs)?.install(|| entries.par_iter().map(|e| prepare_scan(cfg, e)).collect())
}

fn scans_dir(cfg: &RunConfig) -> Result<Vec<ScanEntry>> {
    let dir = cfg
        .scans
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("`scans` directory not configured".into()))?;
    let entries = discover_scans(dir)?;
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(entries)
}

/// Trains on every configured scan, holding out whole scans for validation.
pub fn cmd_train(cfg: &RunConfig, jobs: usize) -> Result<TrainOutput> {
    let entries = scans_dir(cfg)?;
    let prepared = prepare_all(cfg, &entries, jobs)?;
    let refs: Vec<&PreparedScan> = prepared.iter().collect();
    let (train, val) = split_validation(&refs, cfg.train.val_fraction, cfg.train.seed)?;
    Ok(train_scans(cfg, &train, &val, &cfg.out)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutput {
    pub fold: usize,
    pub test_ids: Vec<String>,
    pub train: TrainOutput,
    pub report: DiceReport,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalOutput {
    pub folds: Vec<FoldOutput>,
    pub pooled: DiceReport,
}

/// k-fold cross-validation by scan: train on k-1 folds (minus a validation
/// share), predict and score the held-out fold, then pool all held-out scores.
pub fn cmd_crossval(cfg: &RunConfig, jobs: usize) -> Result<CrossvalOutput> {
    let entries = scans_dir(cfg)?;
    let prepared = prepare_all(cfg, &entries, jobs)?;
    let ids: Vec<usize> = (0..prepared.len()).collect();
    let folds = kfold_split(&ids, cfg.train.k, cfg.train.seed)?;
    let group = cfg.mode.label().to_string();
    let mut outputs = Vec::new();
    let mut pooled = Vec::new();

    for (f, test) in folds.iter().enumerate() {
        let fold_dir = cfg.out.join(format!("fold_{f}"));
        let rest: Vec<&PreparedScan> = ids
            .iter()
            .filter(|i| !test.contains(i))
            .map(|&i| &prepared[i])
            .collect();
        let (train, val) = split_validation(
            &rest,
            cfg.train.val_fraction,
            cfg.train.seed.wrapping_add(f as u64),
        )?;
        info!(
            "fold {f}: {} train, {} validation, {} test scans",
            train.len(),
            val.len(),
            test.len()
        );
        let (net, train_out) = train_scans(cfg, &train, &val, &fold_dir)?;

        let pred_dir = fold_dir.join("pred");
        create_dir(&pred_dir)?;
        let test_scans: Vec<&PreparedScan> = test.iter().map(|&i| &prepared[i]).collect();
        let scores = pool(jobs)?.install(|| {
            test_scans
                .par_iter()
                .map(|scan| {
                    let mask = predict_volume(
                        &net,
                        &scan.windowed,
                        cfg.mode,
                        cfg.train.threshold,
                        cfg.train.batch_size,
                    )?;
                    write_mhd(mask.as_volume(), pred_dir.join(format!("{}.mhd", scan.id)))?;
                    write_text(
                        &pred_dir.join(format!("{}.edges.txt", scan.id)),
                        &edge_note(mask.dims()[2]),
                    )?;
                    evaluate_scan(
                        &scan.id,
                        &group,
                        &mask,
                        &scan.gt,
                        interior_range(mask.dims()[2]),
                    )
                })
                .collect::<Result<Vec<_>>>()
        })?;
        pooled.extend(scores.iter().cloned());
        let report = aggregate(&format!("fold {f}"), scores)?;
        write_reports(std::slice::from_ref(&report), &fold_dir)?;
        outputs.push(FoldOutput {
            fold: f,
            test_ids: test_scans.iter().map(|s| s.id.clone()).collect(),
            train: train_out,
            report,
            dir: fold_dir,
        });
    }
    let pooled = aggregate("pooled", pooled)?;
    write_reports(std::slice::from_ref(&pooled), &cfg.out)?;
    Ok(CrossvalOutput {
        folds: outputs,
        pooled,
    })
}

/// Human-readable summary of a volume, a weight container, or (for `None`)
/// the configured network.
pub fn describe(cfg: &RunConfig, path: Option<&Path>) -> Result<String> {
    let mut out = String::new();
    match path {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("mhd")) => {
            let v = read_mhd(p)?;
            let g = v.geometry();
            let kind = match &v {
                MhdVolume::Ct(_) => "MET_SHORT",
                MhdVolume::Label(_) => "MET_UCHAR",
            };
            let _ = writeln!(out, "type = {kind}");
            let _ = writeln!(out, "dims = {} {} {}", g.dims[0], g.dims[1], g.dims[2]);
            let _ = writeln!(
                out,
                "spacing = {} {} {}",
                g.spacing[0], g.spacing[1], g.spacing[2]
            );
            let _ = writeln!(
                out,
                "origin = {} {} {}",
                g.origin[0], g.origin[1], g.origin[2]
            );
            let _ = writeln!(out, "interior_slices = {}", interior_range(g.depth()).len());
        }
        Some(p) => {
            let c = WeightContainer::read(p)?;
            let total: usize = c.records.iter().map(|r| r.data.len()).sum();
            let _ = writeln!(out, "records = {}", c.records.len());
            let _ = writeln!(out, "values = {total}");
        }
        None => {
            let net = build_network::<f32>(&cfg.network)?;
            let count = net.count_parameters();
            let _ = writeln!(
                out,
                "input_size = {}x{}",
                cfg.network.input_size.0, cfg.network.input_size.1
            );
            let _ = writeln!(out, "width_multiplier = {}", cfg.network.width);
            let _ = writeln!(out, "nodes = {}", net.nodes().len());
            let _ = writeln!(out, "tensors = {}", net.params().len());
            let _ = writeln!(out, "parameters_total = {}", count.total);
            let _ = writeln!(out, "parameters_trainable = {}", count.trainable);
        }
    }
    Ok(out)
}
