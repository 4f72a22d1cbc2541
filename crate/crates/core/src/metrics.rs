//! Thresholding and Dice scoring.
//!
//! 2D Dice is computed per axial slice and averaged over the slices where at
//! least one of the two masks is non-empty; 3D Dice treats the evaluated
//! slices as one voxel set.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{BinaryMask, Geometry};

/// `1` where `p >= threshold`.
pub fn binarize<T: Scalar>(probs: &[T], threshold: f64) -> Vec<u8> {
    let t = T::lit(threshold);
    probs.iter().map(|&p| u8::from(p >= t)).collect()
}

pub fn binarize_mask<T: Scalar>(
    geometry: Geometry,
    probs: &[T],
    threshold: f64,
) -> Result<BinaryMask> {
    BinaryMask::new(geometry, binarize(probs, threshold))
}

/// Set cardinalities `|S|`, `|G|` and `|S ∩ G|`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overlap {
    pub predicted: u64,
    pub truth: u64,
    pub intersection: u64,
}

impl Overlap {
    pub fn count(s: &[u8], g: &[u8]) -> Self {
        let mut o = Overlap::default();
        for (&a, &b) in s.iter().zip(g) {
            let (a, b) = (a != 0, b != 0);
            o.predicted += u64::from(a);
            o.truth += u64::from(b);
            o.intersection += u64::from(a && b);
        }
        o
    }

    pub fn is_empty(&self) -> bool {
        self.predicted + self.truth == 0
    }

    /// `2|S ∩ G| / (|S| + |G|)`.
    pub fn dice(&self) -> Result<f64> {
        let denom = self.predicted + self.truth;
        if denom == 0 {
            return Err(Error::BothEmpty);
        }
        Ok((2 * self.intersection) as f64 / denom as f64)
    }
}

impl std::ops::Add for Overlap {
    type Output = Overlap;

    fn add(self, other: Overlap) -> Overlap {
        Overlap {
            predicted: self.predicted + other.predicted,
            truth: self.truth + other.truth,
            intersection: self.intersection + other.intersection,
        }
    }
}

pub fn dice(s: &[u8], g: &[u8]) -> Result<f64> {
    if s.len() != g.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} voxels",
            s.len(),
            g.len()
        )));
    }
    Overlap::count(s, g).dice()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceDice {
    pub slice: usize,
    /// Zero for excluded slices.
    pub dice: f64,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dice2d {
    pub mean: f64,
    /// Population standard deviation over included slices.
    pub std: f64,
    pub slices: Vec<SliceDice>,
}

/// Slices that carry a 2.5D prediction: `1 ..= depth - 2`.
pub fn interior_range(depth: usize) -> Range<usize> {
    if depth < 3 {
        1..1
    } else {
        1..depth - 1
    }
}

fn check_pair(pred: &BinaryMask, gt: &BinaryMask, range: &Range<usize>) -> Result<()> {
    if !pred.geometry().same_grid(gt.geometry()) {
        return Err(Error::GeometryMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    if range.end > pred.dims()[2] {
        return Err(Error::OutOfRange {
            index: range.end,
            depth: pred.dims()[2],
        });
    }
    Ok(())
}

fn per_slice<'a>(
    pred: &'a BinaryMask,
    gt: &'a BinaryMask,
    range: Range<usize>,
) -> impl Iterator<Item = (usize, Overlap)> + 'a {
    range.map(move |z| (z, Overlap::count(pred.slice(z), gt.slice(z))))
}

pub fn dice_2d(pred: &BinaryMask, gt: &BinaryMask, range: Range<usize>) -> Result<Dice2d> {
    check_pair(pred, gt, &range)?;
    let slices: Vec<SliceDice> = per_slice(pred, gt, range)
        .map(|(z, o)| SliceDice {
            slice: z,
            dice: o.dice().unwrap_or(0.0),
            included: !o.is_empty(),
        })
        .collect();
    let values: Vec<f64> = slices
        .iter()
        .filter(|s| s.included)
        .map(|s| s.dice)
        .collect();
    if values.is_empty() {
        return Err(Error::NoIncludedSlices);
    }
    let (mean, std) = mean_std(&values);
    Ok(Dice2d { mean, std, slices })
}

pub fn dice_3d(pred: &BinaryMask, gt: &BinaryMask, range: Range<usize>) -> Result<f64> {
    check_pair(pred, gt, &range)?;
    per_slice(pred, gt, range)
        .fold(Overlap::default(), |acc, (_, o)| acc + o)
        .dice()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Scores of one scan under one prediction configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanDice {
    pub scan_id: String,
    pub group: String,
    pub dice2d_mean: f64,
    pub dice2d_std: f64,
    pub dice3d: f64,
    pub slices: Vec<SliceDice>,
}

pub fn evaluate_scan(
    scan_id: &str,
    group: &str,
    pred: &BinaryMask,
    gt: &BinaryMask,
    range: Range<usize>,
) -> Result<ScanDice> {
    let d2 = dice_2d(pred, gt, range.clone())?;
    let d3 = dice_3d(pred, gt, range)?;
    Ok(ScanDice {
        scan_id: scan_id.to_string(),
        group: group.to_string(),
        dice2d_mean: d2.mean,
        dice2d_std: d2.std,
        dice3d: d3,
        slices: d2.slices,
    })
}

/// Across-scan summary of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub group: String,
    pub scans: usize,
    pub dice2d_mean: f64,
    pub dice2d_std: f64,
    pub dice3d_mean: f64,
    pub dice3d_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    /// Reference set the predictions were scored against.
    pub block: String,
    pub scans: Vec<ScanDice>,
    pub groups: Vec<GroupSummary>,
}

/// Groups per-scan scores by configuration label (in first-seen order) and
/// summarizes each group with the mean and population std across scans.
pub fn aggregate(block: &str, scans: Vec<ScanDice>) -> Result<DiceReport> {
    if scans.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_group: BTreeMap<&str, Vec<&ScanDice>> = BTreeMap::new();
    for s in &scans {
        if !by_group.contains_key(s.group.as_str()) {
            order.push(s.group.clone());
        }
        by_group.entry(s.group.as_str()).or_default().push(s);
    }
    let groups = order
        .iter()
        .map(|g| {
            let members = &by_group[g.as_str()];
            let d2: Vec<f64> = members.iter().map(|s| s.dice2d_mean).collect();
            let d3: Vec<f64> = members.iter().map(|s| s.dice3d).collect();
            let (dice2d_mean, dice2d_std) = mean_std(&d2);
            let (dice3d_mean, dice3d_std) = mean_std(&d3);
            GroupSummary {
                group: g.clone(),
                scans: members.len(),
                dice2d_mean,
                dice2d_std,
                dice3d_mean,
                dice3d_std,
            }
        })
        .collect();
    Ok(DiceReport {
        block: block.to_string(),
        scans,
        groups,
    })
}
