//! 2.5D samples: three consecutive normalized slices packed as the three
//! input channels, labelled with the ground truth of the centre slice.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::preprocess::{normalize, NormalizedSlice, WindowedVolume};
use crate::scalar::Scalar;
use crate::volume::BinaryMask;

/// Channel assignment of the slices `n-1, n, n+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlabMode {
    /// red, green, blue = n-1, n, n+1
    Rgb,
    /// blue, green, red = n-1, n, n+1
    Bgr,
    /// slice n in every channel
    Gray,
}

impl SlabMode {
    /// Source slice offsets (relative to n) for channels 0, 1, 2 (red, green, blue).
    pub fn channel_offsets(self) -> [isize; 3] {
        match self {
            SlabMode::Rgb => [-1, 0, 1],
            SlabMode::Bgr => [1, 0, -1],
            SlabMode::Gray => [0, 0, 0],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SlabMode::Rgb => "RGB",
            SlabMode::Bgr => "BGR",
            SlabMode::Gray => "Gray",
        }
    }
}

impl fmt::Display for SlabMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlabMode::Rgb => "rgb",
            SlabMode::Bgr => "bgr",
            SlabMode::Gray => "gray",
        })
    }
}

impl FromStr for SlabMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(SlabMode::Rgb),
            "bgr" => Ok(SlabMode::Bgr),
            "gray" | "grey" => Ok(SlabMode::Gray),
            _ => Err(Error::InvalidConfig(format!("unknown slab mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlabConfig {
    pub mode: SlabMode,
}

/// One three-channel training or inference sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Slab<T> {
    pub scan_id: String,
    pub center: usize,
    pub height: usize,
    pub width: usize,
    /// `3 x height x width`, channel-major.
    pub channels: Vec<T>,
    /// Ground truth of the centre slice, `height x width`, values in {0, 1}.
    pub target: Vec<u8>,
}

impl<T: Scalar> Slab<T> {
    pub fn channel(&self, c: usize) -> &[T] {
        let len = self.height * self.width;
        &self.channels[c * len..(c + 1) * len]
    }

    pub fn target_as<S: Scalar>(&self) -> Vec<S> {
        self.target
            .iter()
            .map(|&v| if v == 1 { S::one() } else { S::zero() })
            .collect()
    }
}

fn check_geometry<T>(stack: &[NormalizedSlice<T>], gt: &BinaryMask) -> Result<()> {
    let [nx, ny, nz] = gt.dims();
    if stack.len() != nz {
        return Err(Error::GeometryMismatch(format!(
            "volume depth {} but ground truth depth {nz}",
            stack.len()
        )));
    }
    if let Some(s) = stack.iter().find(|s| s.width != nx || s.height != ny) {
        return Err(Error::GeometryMismatch(format!(
            "slice {}x{} but ground truth {ny}x{nx}",
            s.height, s.width
        )));
    }
    Ok(())
}

/// Builds the slab centred on slice `n`. Slices whose neighbours fall outside
/// the volume are rejected.
pub fn make_slab<T: Scalar>(
    scan_id: &str,
    stack: &[NormalizedSlice<T>],
    gt: &BinaryMask,
    n: usize,
    cfg: SlabConfig,
) -> Result<Slab<T>> {
    check_geometry(stack, gt)?;
    build(scan_id, stack, gt, n, cfg)
}

fn build<T: Scalar>(
    scan_id: &str,
    stack: &[NormalizedSlice<T>],
    gt: &BinaryMask,
    n: usize,
    cfg: SlabConfig,
) -> Result<Slab<T>> {
    let depth = stack.len();
    if n == 0 || n + 1 >= depth {
        return Err(Error::OutOfRange { index: n, depth });
    }
    let (height, width) = (stack[n].height, stack[n].width);
    let mut channels = Vec::with_capacity(3 * height * width);
    for offset in cfg.mode.channel_offsets() {
        let z = (n as isize + offset) as usize;
        channels.extend_from_slice(&stack[z].pixels);
    }
    Ok(Slab {
        scan_id: scan_id.to_string(),
        center: n,
        height,
        width,
        channels,
        target: gt.slice(n).to_vec(),
    })
}

/// Lazy, random-access view over every valid slab of one scan, in ascending
/// centre order. Shared references may be consumed from several threads over
/// disjoint index ranges.
#[derive(Debug, Clone, Copy)]
pub struct SlabSource<'a, T> {
    scan_id: &'a str,
    stack: &'a [NormalizedSlice<T>],
    gt: &'a BinaryMask,
    cfg: SlabConfig,
}

pub fn iterate_slabs<'a, T: Scalar>(
    scan_id: &'a str,
    stack: &'a [NormalizedSlice<T>],
    gt: &'a BinaryMask,
    cfg: SlabConfig,
) -> Result<SlabSource<'a, T>> {
    check_geometry(stack, gt)?;
    Ok(SlabSource {
        scan_id,
        stack,
        gt,
        cfg,
    })
}

impl<'a, T: Scalar> SlabSource<'a, T> {
    pub fn len(&self) -> usize {
        self.stack.len().saturating_sub(2)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Valid centre indices.
    pub fn centers(&self) -> Range<usize> {
        1..1 + self.len()
    }

    /// Slab centred at slice `n`.
    pub fn get(&self, n: usize) -> Result<Slab<T>> {
        build(self.scan_id, self.stack, self.gt, n, self.cfg)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = Slab<T>> + 'a {
        self.iter_range(self.centers())
    }

    /// Slabs for the centre indices in `range`, which must be valid.
    pub fn iter_range(&self, range: Range<usize>) -> impl ExactSizeIterator<Item = Slab<T>> + 'a {
        let this = *self;
        range.map(move |n| this.get(n).expect("centre index inside the valid range"))
    }
}

/// Builds the slab centred on `n` straight from a windowed volume,
/// normalizing only the three slices it needs. Without ground truth the
/// target is all zero.
pub fn slab_from_windowed<T: Scalar>(
    scan_id: &str,
    volume: &WindowedVolume,
    gt: Option<&BinaryMask>,
    n: usize,
    cfg: SlabConfig,
) -> Result<Slab<T>> {
    let [nx, ny, nz] = volume.geometry().dims;
    if let Some(gt) = gt {
        if gt.dims() != volume.geometry().dims {
            return Err(Error::GeometryMismatch(format!(
                "volume {:?} vs ground truth {:?}",
                volume.geometry().dims,
                gt.dims()
            )));
        }
    }
    if n == 0 || n + 1 >= nz {
        return Err(Error::OutOfRange {
            index: n,
            depth: nz,
        });
    }
    let mut channels = Vec::with_capacity(3 * nx * ny);
    for offset in cfg.mode.channel_offsets() {
        let z = (n as isize + offset) as usize;
        channels.extend(normalize::<T>(volume.slice(z), ny, nx)?.pixels);
    }
    Ok(Slab {
        scan_id: scan_id.to_string(),
        center: n,
        height: ny,
        width: nx,
        channels,
        target: gt.map_or_else(|| vec![0; nx * ny], |g| g.slice(n).to_vec()),
    })
}
