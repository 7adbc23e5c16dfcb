//! Pixel-level (IoU, nIoU, F-measure) and target-level (Pd, Fa) metrics.
//!
//! Conventions:
//! * IoU and F are 1 when both masks are empty and 0 when exactly one is.
//! * Targets are 8-connected components. A ground-truth target is detected
//!   when a predicted component's centroid lies within the match radius of
//!   its centroid; pairs are matched greedily by distance, one-to-one.
//! * Fa counts pixels of unmatched predicted components over all pixels.
//! * Pd is 1 for images without ground-truth targets.

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MATCH_RADIUS: f64 = 3.0;

/// Row-major binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::dim(format!(
                "{} bits for a {height}×{width} mask",
                bits.len()
            )));
        }
        Ok(BinaryMask { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    /// Accepts only values that are exactly 0 or 1.
    pub fn from_values(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let bits = values
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                _ => Err(Error::contract(format!("mask value {v} at index {i} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(height, width, bits)
    }

    /// Uses the last two axes of `t` as the image plane.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = plane(t)?;
        Self::from_values(h, w, &t.to_f64().into_data())
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_values(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

fn plane<T: Real>(t: &Tensor<T>) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::dim(format!("expected a single image plane, got {s:?}")));
    }
    Ok((s[s.len() - 2], s[s.len() - 1]))
}

/// `pred > τ`, strict.
pub fn binarize<T: Real>(pred: &Tensor<T>, tau: f64) -> Result<BinaryMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::contract(format!("threshold must lie in (0, 1), got {tau}")));
    }
    let (h, w) = plane(pred)?;
    BinaryMask::new(h, w, pred.data().iter().map(|v| v.f64() > tau).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PixelCounts {
    pub fn gt(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn pred(&self) -> usize {
        self.tp + self.fp
    }

    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }

    pub fn precision(&self) -> f64 {
        match self.pred() {
            0 if self.gt() == 0 => 1.0,
            0 => 0.0,
            p => self.tp as f64 / p as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        match self.gt() {
            0 if self.pred() == 0 => 1.0,
            0 => 0.0,
            g => self.tp as f64 / g as f64,
        }
    }

    pub fn f_measure(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn metrics(&self) -> PixelMetrics {
        PixelMetrics {
            iou: self.iou(),
            precision: self.precision(),
            recall: self.recall(),
            f: self.f_measure(),
        }
    }
}

impl std::ops::Add for PixelCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        PixelCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn same_shape(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::dim(format!(
            "mask shapes differ: {}×{} vs {}×{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

pub fn pixel_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<PixelCounts> {
    same_shape(pred, gt)?;
    let mut c = PixelCounts::default();
    for (&p, &g) in pred.bits.iter().zip(&gt.bits) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    Ok(c)
}

pub fn pixel_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<PixelMetrics> {
    Ok(pixel_counts(pred, gt)?.metrics())
}

/// Mean per-image IoU from `(TP_i, T_i, P_i)` with `T` the ground-truth and
/// `P` the predicted pixel counts.
pub fn niou(per_image: &[(usize, usize, usize)]) -> Result<f64> {
    if per_image.is_empty() {
        return Err(Error::contract("nIoU needs at least one image"));
    }
    let mut sum = 0.0;
    for &(tp, t, p) in per_image {
        if tp > t.min(p) {
            return Err(Error::contract(format!("TP={tp} exceeds T={t} or P={p}")));
        }
        let union = t + p - tp;
        sum += if union == 0 { 1.0 } else { tp as f64 / union as f64 };
    }
    Ok(sum / per_image.len() as f64)
}

/// An 8-connected component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub pixels: usize,
    /// `(row, col)` mean.
    pub centroid: (f64, f64),
}

/// Components in raster order of their first pixel.
pub fn components(mask: &BinaryMask) -> Vec<Component> {
    let (h, w) = (mask.height, mask.width);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut n, mut sy, mut sx) = (0usize, 0.0, 0.0);
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            n += 1;
            sy += y as f64;
            sx += x as f64;
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.bits[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push(Component {
            pixels: n,
            centroid: (sy / n as f64, sx / n as f64),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetMatch {
    pub gt: usize,
    pub pred: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetCounts {
    pub targets: usize,
    pub detected: usize,
    pub false_alarm_pixels: usize,
    pub total_pixels: usize,
    pub matches: Vec<TargetMatch>,
}

impl TargetCounts {
    pub fn pd(&self) -> f64 {
        ratio_or_one(self.detected, self.targets)
    }

    pub fn fa(&self) -> f64 {
        self.false_alarm_pixels as f64 / self.total_pixels as f64
    }
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn target_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<TargetCounts> {
    target_metrics_with(pred, gt, DEFAULT_MATCH_RADIUS)
}

pub fn target_metrics_with(pred: &BinaryMask, gt: &BinaryMask, radius: f64) -> Result<TargetCounts> {
    same_shape(pred, gt)?;
    let gc = components(gt);
    let pc = components(pred);
    let mut cands = Vec::new();
    for (i, g) in gc.iter().enumerate() {
        for (j, p) in pc.iter().enumerate() {
            let d = (g.centroid.0 - p.centroid.0).hypot(g.centroid.1 - p.centroid.1);
            if d <= radius {
                cands.push(TargetMatch { gt: i, pred: j, distance: d });
            }
        }
    }
    cands.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.gt.cmp(&b.gt)).then(a.pred.cmp(&b.pred)));
    let mut gt_used = vec![false; gc.len()];
    let mut pred_used = vec![false; pc.len()];
    let mut matches = Vec::new();
    for m in cands {
        if !gt_used[m.gt] && !pred_used[m.pred] {
            gt_used[m.gt] = true;
            pred_used[m.pred] = true;
            matches.push(m);
        }
    }
    matches.sort_by_key(|m| m.gt);
    let false_alarm_pixels = pc
        .iter()
        .zip(&pred_used)
        .filter(|(_, &used)| !used)
        .map(|(c, _)| c.pixels)
        .sum();
    Ok(TargetCounts {
        targets: gc.len(),
        detected: matches.len(),
        false_alarm_pixels,
        total_pixels: pred.bits.len(),
        matches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub name: String,
    #[serde(flatten)]
    pub pixels: PixelCounts,
    pub iou: f64,
    #[serde(flatten)]
    pub targets: TargetCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub iou: f64,
    pub niou: f64,
    pub f: f64,
    pub precision: f64,
    pub recall: f64,
    pub pd: f64,
    /// False pixels per image pixel.
    pub fa: f64,
    #[serde(flatten)]
    pub pixels: PixelCounts,
    pub targets: usize,
    pub detected: usize,
    pub false_alarm_pixels: usize,
    pub total_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub match_radius: f64,
    pub images: Vec<ImageRecord>,
    pub aggregate: Aggregate,
}

impl DetectionReport {
    /// Evaluates `(name, pred, gt)` triples in parallel; records keep input
    /// order.
    pub fn evaluate(pairs: &[(String, BinaryMask, BinaryMask)], radius: f64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::contract("no images to evaluate"));
        }
        let images = pairs
            .par_iter()
            .map(|(name, pred, gt)| {
                let pixels = pixel_counts(pred, gt)?;
                Ok(ImageRecord {
                    name: name.clone(),
                    pixels,
                    iou: pixels.iou(),
                    targets: target_metrics_with(pred, gt, radius)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pixels = images.iter().fold(PixelCounts::default(), |a, r| a + r.pixels);
        let sum = |f: fn(&TargetCounts) -> usize| images.iter().map(|r| f(&r.targets)).sum::<usize>();
        let targets = sum(|t| t.targets);
        let detected = sum(|t| t.detected);
        let false_alarm_pixels = sum(|t| t.false_alarm_pixels);
        let total_pixels = sum(|t| t.total_pixels);
        let per: Vec<_> = images.iter().map(|r| (r.pixels.tp, r.pixels.gt(), r.pixels.pred())).collect();
        let aggregate = Aggregate {
            iou: pixels.iou(),
            niou: niou(&per)?,
            f: pixels.f_measure(),
            precision: pixels.precision(),
            recall: pixels.recall(),
            pd: ratio_or_one(detected, targets),
            fa: false_alarm_pixels as f64 / total_pixels as f64,
            pixels,
            targets,
            detected,
            false_alarm_pixels,
            total_pixels,
        };
        Ok(DetectionReport {
            match_radius: radius,
            images,
            aggregate,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const CSV_HEADER: &'static str = "name,tp,fp,fn,iou,targets,detected,false_alarm_pixels,total_pixels";

    /// Header plus one row per image.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.images {
            s.push_str(&format!(
                "{},{},{},{},{:.9},{},{},{},{}\n",
                r.name,
                r.pixels.tp,
                r.pixels.fp,
                r.pixels.fn_,
                r.iou,
                r.targets.targets,
                r.targets.detected,
                r.targets.false_alarm_pixels,
                r.targets.total_pixels
            ));
        }
        s
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// The five headline metrics, Fa scaled by 10⁶.
    pub fn summary(&self) -> String {
        let a = &self.aggregate;
        format!(
            "IoU {:.4}  nIoU {:.4}  F {:.4}  Pd {:.4}  Fa(x1e-6) {:.2}",
            a.iou,
            a.niou,
            a.f,
            a.pd,
            a.fa * 1e6
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::empty(h, w);
        for &(y, x) in on {
            m.bits[y * w + x] = true;
        }
        m
    }

    fn block(h: usize, w: usize, y0: usize, x0: usize, s: usize) -> BinaryMask {
        let mut on = Vec::new();
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                on.push((y, x));
            }
        }
        mask(h, w, &on)
    }

    #[test]
    fn binarize_boundary() {
        let t = Tensor::<f64>::full(&[1, 1, 2, 2], 0.6);
        assert_eq!(binarize(&t, 0.5).unwrap().count(), 4);
        let t = Tensor::<f64>::full(&[1, 1, 2, 2], 0.5);
        assert_eq!(binarize(&t, 0.5).unwrap().count(), 0);
        assert!(binarize(&t, 1.0).is_err());
    }

    #[test]
    fn pixel_examples() {
        let a = block(6, 6, 1, 1, 2);
        assert_eq!(pixel_metrics(&a, &a).unwrap().iou, 1.0);
        assert_eq!(pixel_metrics(&a, &a).unwrap().f, 1.0);
        let b = block(6, 6, 4, 4, 2);
        let m = pixel_metrics(&a, &b).unwrap();
        assert_eq!((m.iou, m.f), (0.0, 0.0));
        let c = block(6, 6, 1, 2, 2);
        assert_eq!(pixel_metrics(&c, &a).unwrap().iou, 1.0 / 3.0);
        let e = BinaryMask::empty(6, 6);
        assert_eq!(pixel_metrics(&e, &e).unwrap().iou, 1.0);
        assert_eq!(pixel_metrics(&e, &e).unwrap().f, 1.0);
        assert_eq!(pixel_metrics(&e, &a).unwrap().f, 0.0);
        assert!(BinaryMask::from_values(1, 2, &[0.0, 0.5]).is_err());
    }

    #[test]
    fn niou_examples() {
        assert_eq!(niou(&[(2, 4, 4)]).unwrap(), 2.0 / 6.0);
        assert_eq!(niou(&[(3, 3, 3), (0, 2, 1)]).unwrap(), 0.5);
        assert!(niou(&[]).is_err());
    }

    #[test]
    fn target_examples() {
        let gt = mask(10, 10, &[(1, 1), (1, 2), (7, 7), (8, 8)]);
        let t = target_metrics(&gt, &gt).unwrap();
        assert_eq!((t.targets, t.detected, t.false_alarm_pixels), (2, 2, 0));

        let pred = mask(10, 10, &[(1, 1), (1, 2)]);
        assert_eq!(target_metrics(&pred, &gt).unwrap().pd(), 0.5);

        let gt = BinaryMask::empty(100, 100);
        let pred = mask(100, 100, &[(50, 50), (50, 51), (51, 50), (51, 51), (52, 52)]);
        let t = target_metrics(&pred, &gt).unwrap();
        assert_eq!(t.fa(), 5e-4);
        assert_eq!(t.pd(), 1.0);
    }

    #[test]
    fn eight_connectivity() {
        let m = mask(4, 4, &[(0, 0), (1, 1), (2, 2), (0, 3)]);
        let c = components(&m);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].pixels, 3);
        assert_eq!(c[0].centroid, (1.0, 1.0));
    }

    #[test]
    fn greedy_matching_is_one_to_one() {
        // two GT dots both within reach of a single prediction
        let gt = mask(9, 9, &[(4, 2), (4, 6)]);
        let pred = mask(9, 9, &[(4, 3)]);
        let t = target_metrics(&pred, &gt).unwrap();
        assert_eq!(t.detected, 1);
        assert_eq!(t.matches[0].gt, 0);
    }

    #[test]
    fn report_identity_and_csv() {
        let gt = block(8, 8, 2, 2, 3);
        let pairs = vec![
            ("a".to_string(), gt.clone(), gt.clone()),
            ("b".to_string(), BinaryMask::empty(8, 8), BinaryMask::empty(8, 8)),
        ];
        let r = DetectionReport::evaluate(&pairs, 3.0).unwrap();
        assert_eq!(r.aggregate.iou, 1.0);
        assert_eq!(r.aggregate.pd, 1.0);
        assert_eq!(r.aggregate.fa, 0.0);
        assert_eq!(r.to_csv().lines().count(), 3);
        let back: DetectionReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
