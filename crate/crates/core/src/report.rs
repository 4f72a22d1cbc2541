//! Text renderings of Dice reports.
//!
//! `format_table` mirrors the layout of a results table: one block per
//! reference set, one column per slab configuration, rows for the 2D and 3D
//! scores and their across-scan spread.

use std::fmt::Write as _;

use crate::metrics::{DiceReport, ScanDice};

pub const RANGE_NOTE: &str =
    "# evaluated slices: 1..=depth-2 of each scan (edge slices carry no 2.5D prediction)";

type Column = fn(&crate::metrics::GroupSummary) -> f64;

pub fn format_table(reports: &[DiceReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{RANGE_NOTE}");
    for r in reports {
        let _ = writeln!(out, "[{}]", r.block);
        let header: Vec<String> = r
            .groups
            .iter()
            .map(|g| format!("Total ({})", g.group))
            .collect();
        let _ = writeln!(out, "metric,{}", header.join(","));
        let rows: [(&str, Column); 4] = [
            ("Dice score (2D)", |g| g.dice2d_mean),
            ("STD (2D)", |g| g.dice2d_std),
            ("Dice score (3D)", |g| g.dice3d_mean),
            ("STD (3D)", |g| g.dice3d_std),
        ];
        for (label, get) in rows {
            let cells: Vec<String> = r.groups.iter().map(|g| format!("{:.6}", get(g))).collect();
            let _ = writeln!(out, "{label},{}", cells.join(","));
        }
        let counts: Vec<String> = r.groups.iter().map(|g| g.scans.to_string()).collect();
        let _ = writeln!(out, "scans,{}", counts.join(","));
    }
    out
}

/// `block,group,scan_id,dice2d_mean,dice2d_std,dice3d`
pub fn format_scans_csv(reports: &[DiceReport]) -> String {
    let mut out = String::from("block,group,scan_id,dice2d_mean,dice2d_std,dice3d\n");
    for r in reports {
        for s in &r.scans {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.block, s.group, s.scan_id, s.dice2d_mean, s.dice2d_std, s.dice3d
            );
        }
    }
    out
}

/// `scan_id,slice,dice,included`
pub fn format_slices_csv<'a>(scans: impl IntoIterator<Item = &'a ScanDice>) -> String {
    let mut out = String::from("scan_id,slice,dice,included\n");
    for s in scans {
        for d in &s.slices {
            let _ = writeln!(
                out,
                "{},{},{:.6},{}",
                s.scan_id,
                d.slice,
                d.dice,
                u8::from(d.included)
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aggregate, SliceDice};

    #[test]
    fn table_layout() {
        let scans = vec![
            ScanDice {
                scan_id: "s1".into(),
                group: "RGB".into(),
                dice2d_mean: 1.0,
                dice2d_std: 0.0,
                dice3d: 1.0,
                slices: vec![SliceDice {
                    slice: 1,
                    dice: 1.0,
                    included: true,
                }],
            },
            ScanDice {
                scan_id: "s1".into(),
                group: "Gray".into(),
                dice2d_mean: 0.5,
                dice2d_std: 0.25,
                dice3d: 0.75,
                slices: vec![],
            },
        ];
        let r = aggregate("Radiologist 1", scans).unwrap();
        let text = format_table(std::slice::from_ref(&r));
        assert_eq!(
            text,
            format!(
                "{RANGE_NOTE}\n[Radiologist 1]\nmetric,Total (RGB),Total (Gray)\n\
                 Dice score (2D),1.000000,0.500000\nSTD (2D),0.000000,0.000000\n\
                 Dice score (3D),1.000000,0.750000\nSTD (3D),0.000000,0.000000\nscans,1,1\n"
            )
        );
        assert_eq!(
            format_slices_csv(&r.scans),
            "scan_id,slice,dice,included\ns1,1,1.000000,1\n"
        );
    }
}
