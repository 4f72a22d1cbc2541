//! False-colour overlays: true positives blue, false positives red, false
//! negatives green, everything else the windowed CT intensity in grey.

use crate::error::{Error, Result};
use crate::preprocess::{WINDOW_MAX, WINDOW_MIN};

pub const TP: [u8; 3] = [0, 0, 255];
pub const FP: [u8; 3] = [255, 0, 0];
pub const FN: [u8; 3] = [0, 255, 0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ColorCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub background: usize,
}

/// Windowed HU to an 8-bit grey level, `round((v + 1000) * 255 / 1400)`.
pub fn gray_level(hu: i16) -> u8 {
    let v = hu.clamp(WINDOW_MIN, WINDOW_MAX) as i32 - WINDOW_MIN as i32;
    let span = (WINDOW_MAX as i32 - WINDOW_MIN as i32) as u32;
    ((v as u32 * 255 * 2 + span) / (2 * span)) as u8
}

pub fn render_overlay(
    windowed: &[i16],
    pred: &[u8],
    gt: &[u8],
    height: usize,
    width: usize,
) -> Result<OverlayImage> {
    let n = height * width;
    if windowed.len() != n || pred.len() != n || gt.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "overlay of {height}x{width} from {}/{}/{} pixels",
            windowed.len(),
            pred.len(),
            gt.len()
        )));
    }
    let pixels = windowed
        .iter()
        .zip(pred.iter().zip(gt))
        .map(|(&hu, (&p, &g))| match (p != 0, g != 0) {
            (true, true) => TP,
            (true, false) => FP,
            (false, true) => FN,
            (false, false) => [gray_level(hu); 3],
        })
        .collect();
    Ok(OverlayImage {
        width,
        height,
        pixels,
    })
}

impl OverlayImage {
    /// Binary PPM (`P6`).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for px in &self.pixels {
            out.extend_from_slice(px);
        }
        out
    }

    pub fn counts(&self) -> ColorCounts {
        let mut c = ColorCounts::default();
        for px in &self.pixels {
            match *px {
                TP => c.true_positive += 1,
                FP => c.false_positive += 1,
                FN => c.false_negative += 1,
                [r, g, b] if r == g && g == b => c.background += 1,
                other => unreachable!("pixel {other:?} outside the four classes"),
            }
        }
        c
    }
}
