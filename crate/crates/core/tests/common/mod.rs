//! Synthetic scans shared by the integration tests.
#![allow(dead_code)]

use lungseg::volume::{CtVolume, Geometry, Volume};

pub const BODY_HU: i16 = 40;
pub const LUNG_HU: i16 = -850;
pub const AIR_HU: i16 = -1000;
pub const PADDING_HU: i16 = -3000;

/// Chest phantom: a body ellipse holding two lung disks whose radii vary with
/// z, air around the body and the scanner padding value in the corners.
/// Labels are 1 (left lung) and 2 (right lung).
pub fn phantom(size: usize, depth: usize, seed: u64) -> (CtVolume, Volume<u8>) {
    let geometry = Geometry::new(
        [size, size, depth],
        [0.7, 0.7, 1.25],
        [-170.0, -170.0, -300.0],
    )
    .unwrap();
    let s = size as f64;
    let jitter = (seed % 7) as f64 / 7.0;
    let mut ct = Vec::with_capacity(size * size * depth);
    let mut labels = Vec::with_capacity(size * size * depth);
    for z in 0..depth {
        let phase = z as f64 / depth.max(1) as f64;
        let r = s * (0.12 + 0.08 * (std::f64::consts::PI * (phase + 0.5 * jitter)).sin().abs());
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let (cx, cy) = (s / 2.0, s / 2.0);
                let corner = (fx - cx).powi(2) + (fy - cy).powi(2) > (0.5 * s).powi(2);
                let body =
                    ((fx - cx) / (0.45 * s)).powi(2) + ((fy - cy) / (0.35 * s)).powi(2) <= 1.0;
                let left = (fx - 0.3 * s).powi(2) + (fy - cy).powi(2) <= r * r;
                let right = (fx - 0.7 * s).powi(2) + (fy - cy).powi(2) <= r * r;
                let (v, l) = if corner {
                    (PADDING_HU, 0)
                } else if body && left {
                    (LUNG_HU, 1)
                } else if body && right {
                    (LUNG_HU, 2)
                } else if body {
                    (BODY_HU, 0)
                } else {
                    (AIR_HU, 0)
                };
                ct.push(v);
                labels.push(l);
            }
        }
    }
    (
        Volume::new(geometry, ct).unwrap(),
        Volume::new(geometry, labels).unwrap(),
    )
}
