//! Hounsfield-unit preprocessing: boundary calibration, windowing to
//! [-1000, 400] HU and the affine map to [0, 1] used as network input.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{CtVolume, Geometry, Volume};

/// Scanner fill value outside the reconstruction circle.
pub const BOUNDARY_HU: i16 = -3000;
pub const WINDOW_MIN: i16 = -1000;
pub const WINDOW_MAX: i16 = 400;
const WINDOW_WIDTH: f64 = (WINDOW_MAX as f64) - (WINDOW_MIN as f64);

/// CT volume whose voxels all lie in `[WINDOW_MIN, WINDOW_MAX]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedVolume(Volume<i16>);

impl WindowedVolume {
    pub fn new(volume: Volume<i16>) -> Result<Self> {
        if let Some(&v) = volume
            .voxels()
            .iter()
            .find(|&&v| !(WINDOW_MIN..=WINDOW_MAX).contains(&v))
        {
            return Err(Error::OutOfWindow(v.into()));
        }
        Ok(WindowedVolume(volume))
    }

    pub fn as_volume(&self) -> &Volume<i16> {
        &self.0
    }

    pub fn into_volume(self) -> Volume<i16> {
        self.0
    }

    pub fn geometry(&self) -> &Geometry {
        self.0.geometry()
    }

    pub fn slice(&self, z: usize) -> &[i16] {
        self.0.slice(z)
    }
}

/// Rewrites the `-3000` boundary sentinel to air (`-1000`).
pub fn calibrate_boundary(volume: &CtVolume) -> CtVolume {
    volume.map(|v| if v == BOUNDARY_HU { WINDOW_MIN } else { v })
}

pub fn clip_value(v: i16) -> i16 {
    v.clamp(WINDOW_MIN, WINDOW_MAX)
}

pub fn clip_window(volume: &CtVolume) -> WindowedVolume {
    WindowedVolume(volume.map(clip_value))
}

/// Calibration followed by windowing.
pub fn preprocess(volume: &CtVolume) -> WindowedVolume {
    clip_window(&calibrate_boundary(volume))
}

/// One axial slice scaled to [0, 1], row-major `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSlice<T> {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<T>,
}

pub fn normalize_value<T: Scalar>(v: i16) -> Result<T> {
    if !(WINDOW_MIN..=WINDOW_MAX).contains(&v) {
        return Err(Error::OutOfWindow(v.into()));
    }
    Ok(T::lit(
        (f64::from(v) - f64::from(WINDOW_MIN)) / WINDOW_WIDTH,
    ))
}

/// Inverse of [`normalize_value`], in HU.
pub fn denormalize_value<T: Scalar>(p: T) -> f64 {
    p.to_f64().unwrap_or(f64::NAN) * WINDOW_WIDTH + f64::from(WINDOW_MIN)
}

/// `(v + 1000) / 1400` for every pixel of a windowed slice.
pub fn normalize<T: Scalar>(
    values: &[i16],
    height: usize,
    width: usize,
) -> Result<NormalizedSlice<T>> {
    if values.len() != height * width {
        return Err(Error::DimMismatch {
            expected: height * width,
            found: values.len(),
        });
    }
    let pixels = values
        .iter()
        .map(|&v| normalize_value(v))
        .collect::<Result<_>>()?;
    Ok(NormalizedSlice {
        height,
        width,
        pixels,
    })
}

/// Normalizes every axial slice of a windowed volume.
pub fn normalize_volume<T: Scalar>(volume: &WindowedVolume) -> Vec<NormalizedSlice<T>> {
    let [nx, ny, nz] = volume.geometry().dims;
    (0..nz)
        .map(|z| normalize(volume.slice(z), ny, nx).expect("windowed volume stays in window"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(values: Vec<i16>) -> CtVolume {
        let g = Geometry::with_dims([values.len(), 1, 1]).unwrap();
        CtVolume::new(g, values).unwrap()
    }

    #[test]
    fn calibration_only_touches_sentinel() {
        let out = calibrate_boundary(&line(vec![-3000, -1000, 400, -2999, -3001]));
        assert_eq!(out.voxels(), &[-1000, -1000, 400, -2999, -3001]);
    }

    #[test]
    fn clipping_examples() {
        let out = clip_window(&line(vec![500, -1200, 37, 400, -1000]));
        assert_eq!(out.as_volume().voxels(), &[400, -1000, 37, 400, -1000]);
    }

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize_value::<f32>(-1000).unwrap(), 0.0);
        assert_eq!(normalize_value::<f32>(400).unwrap(), 1.0);
        let mid = normalize_value::<f64>(0).unwrap();
        assert!((mid - 5.0 / 7.0).abs() < 1e-12);
        assert!((normalize_value::<f32>(0).unwrap() - 0.714_286).abs() < 1e-6);
    }

    #[test]
    fn normalize_rejects_out_of_window() {
        assert!(matches!(
            normalize::<f32>(&[0, 401], 1, 2),
            Err(Error::OutOfWindow(401))
        ));
        assert!(matches!(
            WindowedVolume::new(line(vec![-1001])),
            Err(Error::OutOfWindow(-1001))
        ));
    }

    proptest! {
        #[test]
        fn clip_is_idempotent_and_monotone(a in any::<i16>(), b in any::<i16>()) {
            prop_assert_eq!(clip_value(clip_value(a)), clip_value(a));
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(clip_value(lo) <= clip_value(hi));
        }

        #[test]
        fn normalize_inverts_within_tolerance(v in WINDOW_MIN..=WINDOW_MAX) {
            let p: f32 = normalize_value(v).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!((denormalize_value(p) - f64::from(v)).abs() < 1e-3);
        }
    }
}
