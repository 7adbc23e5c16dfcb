//! Pixel and target metrics on a hand-drawn prediction.

use lohgnet::metrics::{self, BinaryMask, DetectionReport, DEFAULT_MATCH_RADIUS};

fn mask(rows: &[&str]) -> BinaryMask {
    let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
    BinaryMask::new(rows.len(), rows[0].len(), bits).unwrap()
}

fn main() -> lohgnet::Result<()> {
    let gt = mask(&[
        "..........",
        ".##.......",
        ".##.......",
        "..........",
        "......#...",
        "..........",
    ]);
    let pred = mask(&[
        "..........",
        "..##......",
        "..##......",
        "..........",
        "..........",
        ".........#",
    ]);
    let px = metrics::pixel_metrics(&pred, &gt)?;
    let t = metrics::target_metrics(&pred, &gt)?;
    println!("IoU {:.3}  precision {:.3}  recall {:.3}  F {:.3}", px.iou, px.precision, px.recall, px.f);
    println!("targets {}  detected {}  Pd {:.2}  Fa {:.4}", t.targets, t.detected, t.pd(), t.fa());

    let report = DetectionReport::evaluate(&[("toy".into(), pred, gt)], DEFAULT_MATCH_RADIUS)?;
    print!("{}", report.to_csv());
    Ok(())
}
