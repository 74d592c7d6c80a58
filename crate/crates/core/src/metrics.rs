//! Saliency evaluation: MAE, maximum F-measure, S-measure and maximum
//! E-measure, per sample and aggregated over a dataset.
//!
//! Threshold sweeps binarize `pred >= i / 255` for `i = 0..=255`.

use std::fmt::Write as _;

use crate::error::{DlgError, Result};
use crate::tensor::Tensor;

pub const BETA2: f64 = 0.3;
pub const ALPHA: f64 = 0.5;
pub const NUM_THRESHOLDS: usize = 256;

pub fn thresholds() -> impl Iterator<Item = f64> {
    (0..NUM_THRESHOLDS).map(|i| i as f64 / 255.0)
}

/// A prediction in `[0,1]` and its binary ground truth, row-major `h x w`.
#[derive(Clone, Debug)]
pub struct SaliencyPair {
    pub height: usize,
    pub width: usize,
    pub pred: Vec<f64>,
    pub gt: Vec<bool>,
}

impl SaliencyPair {
    /// Both tensors must have the same trailing `H x W` and one channel.
    pub fn new(pred: &Tensor, gt: &Tensor) -> Result<Self> {
        let plane = |t: &Tensor| -> Result<(usize, usize)> {
            let s = t.shape();
            if s.len() < 2 || t.numel() != s[s.len() - 2] * s[s.len() - 1] {
                return Err(DlgError::shape(format!(
                    "expected a single-channel map, got {s:?}"
                )));
            }
            Ok((s[s.len() - 2], s[s.len() - 1]))
        };
        let (h, w) = plane(pred)?;
        if plane(gt)? != (h, w) {
            return Err(DlgError::shape(format!(
                "prediction {:?} and ground truth {:?} differ",
                pred.shape(),
                gt.shape()
            )));
        }
        Self::from_values(
            h,
            w,
            pred.data().iter().map(|&v| v as f64).collect(),
            gt.data()
                .iter()
                .map(|&v| v as f64)
                .collect::<Vec<_>>()
                .as_slice(),
        )
    }

    pub fn from_values(height: usize, width: usize, pred: Vec<f64>, gt: &[f64]) -> Result<Self> {
        if pred.len() != height * width || gt.len() != height * width || pred.is_empty() {
            return Err(DlgError::shape(format!(
                "{}x{} pair with {} and {} values",
                height,
                width,
                pred.len(),
                gt.len()
            )));
        }
        if let Some(v) = pred.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DlgError::invalid(format!(
                "prediction value {v} outside [0,1]"
            )));
        }
        if let Some(v) = gt.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(DlgError::invalid(format!(
                "ground truth value {v} is not binary"
            )));
        }
        Ok(Self {
            height,
            width,
            pred,
            gt: gt.iter().map(|&v| v == 1.0).collect(),
        })
    }

    fn gt_f64(&self, i: usize) -> f64 {
        self.gt[i] as u8 as f64
    }

    fn gt_mean(&self) -> f64 {
        self.gt.iter().filter(|&&g| g).count() as f64 / self.gt.len() as f64
    }
}

pub fn mae(p: &SaliencyPair) -> f64 {
    let s: f64 = (0..p.pred.len())
        .map(|i| (p.pred[i] - p.gt_f64(i)).abs())
        .sum();
    s / p.pred.len() as f64
}

/// Precision and recall at every threshold. Undefined ratios are 0.
pub fn precision_recall(p: &SaliencyPair) -> Vec<(f64, f64)> {
    let positives = p.gt.iter().filter(|&&g| g).count();
    thresholds()
        .map(|t| {
            let (mut tp, mut pp) = (0usize, 0usize);
            for (&v, &g) in p.pred.iter().zip(&p.gt) {
                if v >= t {
                    pp += 1;
                    tp += g as usize;
                }
            }
            let prec = if pp == 0 { 0.0 } else { tp as f64 / pp as f64 };
            let rec = if positives == 0 {
                0.0
            } else {
                tp as f64 / positives as f64
            };
            (prec, rec)
        })
        .collect()
}

pub fn f_beta(precision: f64, recall: f64) -> f64 {
    let den = BETA2 * precision + recall;
    if den <= 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * precision * recall / den
    }
}

pub fn max_f_measure(p: &SaliencyPair) -> f64 {
    if !p.gt.iter().any(|&g| g) {
        log::warn!("max F-measure of an all-background ground truth is defined as 0");
        return 0.0;
    }
    precision_recall(p)
        .into_iter()
        .map(|(pr, re)| f_beta(pr, re))
        .fold(0.0, f64::max)
}

/// Mean and sample standard deviation of `values`; the deviation is 0 for
/// fewer than two values.
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn object_score(values: &[f64]) -> f64 {
    let (m, s) = mean_std(values);
    2.0 * m / (m * m + 1.0 + s)
}

fn s_object(p: &SaliencyPair) -> f64 {
    let fg: Vec<f64> = (0..p.pred.len())
        .filter(|&i| p.gt[i])
        .map(|i| p.pred[i])
        .collect();
    let bg: Vec<f64> = (0..p.pred.len())
        .filter(|&i| !p.gt[i])
        .map(|i| 1.0 - p.pred[i])
        .collect();
    let u = p.gt_mean();
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// Region boundary nearest to the edge coordinate `mean + 0.5` of the
/// foreground centroid, ties going toward the middle so that mirroring
/// the image mirrors the split (exact for even sizes).
fn split_index(mean: f64, len: usize) -> usize {
    let e = mean + 0.5;
    let f = e.floor();
    let b = if e - f == 0.5 {
        if e < len as f64 / 2.0 {
            f + 1.0
        } else {
            f
        }
    } else {
        e.round()
    };
    (b.max(0.0) as usize).min(len)
}

/// Split point `(x, y)` of the four-way region partition.
fn centroid(p: &SaliencyPair) -> (usize, usize) {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
    for y in 0..p.height {
        for x in 0..p.width {
            if p.gt[y * p.width + x] {
                sy += y as f64;
                sx += x as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return (p.width / 2, p.height / 2);
    }
    (
        split_index(sx / n as f64, p.width),
        split_index(sy / n as f64, p.height),
    )
}

/// SSIM-style similarity of one region.
fn region_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    if pred.is_empty() {
        return 0.0;
    }
    let mx = pred.iter().sum::<f64>() / n;
    let my = gt.iter().sum::<f64>() / n;
    let d = (n - 1.0).max(1.0);
    let sxx = pred.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / d;
    let syy = gt.iter().map(|v| (v - my).powi(2)).sum::<f64>() / d;
    let sxy = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / d;
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sxx + syy);
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(p: &SaliencyPair) -> f64 {
    let (cx, cy) = centroid(p);
    let (h, w) = (p.height, p.width);
    let area = (h * w) as f64;
    let mut total = 0.0;
    for (y0, y1, x0, x1) in [
        (0, cy, 0, cx),
        (0, cy, cx, w),
        (cy, h, 0, cx),
        (cy, h, cx, w),
    ] {
        let weight = ((y1 - y0) * (x1 - x0)) as f64 / area;
        if weight == 0.0 {
            continue;
        }
        let mut pr = Vec::new();
        let mut gt = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                pr.push(p.pred[y * w + x]);
                gt.push(p.gt_f64(y * w + x));
            }
        }
        total += weight * region_ssim(&pr, &gt);
    }
    total
}

pub fn s_measure(p: &SaliencyPair) -> f64 {
    let y = p.gt_mean();
    let mean_pred = p.pred.iter().sum::<f64>() / p.pred.len() as f64;
    let q = if y == 0.0 {
        1.0 - mean_pred
    } else if y == 1.0 {
        mean_pred
    } else {
        ALPHA * s_object(p) + (1.0 - ALPHA) * s_region(p)
    };
    q.clamp(0.0, 1.0)
}

/// Enhanced-alignment score of a binary map against the ground truth.
pub fn e_measure_binary(fm: &[bool], gt: &[bool]) -> f64 {
    let n = gt.len() as f64;
    let gt_pos = gt.iter().filter(|&&g| g).count();
    let enhanced: f64 = if gt_pos == 0 {
        fm.iter().filter(|&&f| !f).count() as f64
    } else if gt_pos == gt.len() {
        fm.iter().filter(|&&f| f).count() as f64
    } else {
        let mf = fm.iter().filter(|&&f| f).count() as f64 / n;
        let mg = gt_pos as f64 / n;
        fm.iter()
            .zip(gt)
            .map(|(&f, &g)| {
                let a = f as u8 as f64 - mf;
                let b = g as u8 as f64 - mg;
                let den = a * a + b * b;
                let align = if den == 0.0 { 0.0 } else { 2.0 * a * b / den };
                (1.0 + align).powi(2) / 4.0
            })
            .sum()
    };
    enhanced / n
}

/// E-measure at every threshold.
pub fn e_curve(p: &SaliencyPair) -> Vec<f64> {
    thresholds()
        .map(|t| {
            let fm: Vec<bool> = p.pred.iter().map(|&v| v >= t).collect();
            e_measure_binary(&fm, &p.gt)
        })
        .collect()
}

pub fn max_e_measure(p: &SaliencyPair) -> f64 {
    e_curve(p).into_iter().fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub mae: f64,
    pub max_f: f64,
    pub s_measure: f64,
    pub max_e: f64,
}

impl EvalResult {
    pub fn of(p: &SaliencyPair) -> Self {
        Self {
            mae: mae(p),
            max_f: max_f_measure(p),
            s_measure: s_measure(p),
            max_e: max_e_measure(p),
        }
    }
}

/// Running dataset totals. Max-F and max-E are taken after averaging the
/// per-threshold precision/recall and E curves over samples.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    count: usize,
    mae: f64,
    s: f64,
    precision: Vec<f64>,
    recall: Vec<f64>,
    e: Vec<f64>,
    pub per_sample: Vec<EvalResult>,
}

impl Default for MetricAccumulator {
    fn default() -> Self {
        Self {
            count: 0,
            mae: 0.0,
            s: 0.0,
            precision: vec![0.0; NUM_THRESHOLDS],
            recall: vec![0.0; NUM_THRESHOLDS],
            e: vec![0.0; NUM_THRESHOLDS],
            per_sample: Vec::new(),
        }
    }
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, p: &SaliencyPair) {
        self.count += 1;
        self.mae += mae(p);
        self.s += s_measure(p);
        for (i, (pr, re)) in precision_recall(p).into_iter().enumerate() {
            self.precision[i] += pr;
            self.recall[i] += re;
        }
        for (acc, e) in self.e.iter_mut().zip(e_curve(p)) {
            *acc += e;
        }
        self.per_sample.push(EvalResult::of(p));
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn finish(&self) -> Result<EvalResult> {
        if self.count == 0 {
            return Err(DlgError::invalid("cannot evaluate an empty dataset"));
        }
        let n = self.count as f64;
        let max_f = self
            .precision
            .iter()
            .zip(&self.recall)
            .map(|(p, r)| f_beta(p / n, r / n))
            .fold(0.0, f64::max);
        Ok(EvalResult {
            mae: self.mae / n,
            max_f,
            s_measure: self.s / n,
            max_e: self.e.iter().map(|e| e / n).fold(0.0, f64::max),
        })
    }
}

pub fn evaluate_pairs<'a>(pairs: impl IntoIterator<Item = &'a SaliencyPair>) -> Result<EvalResult> {
    let mut acc = MetricAccumulator::new();
    for p in pairs {
        acc.add(p);
    }
    acc.finish()
}

pub const REPORT_HEADER: &str = "dataset,mae,max_f,s,max_e";

pub fn report_csv(rows: &[(String, EvalResult)]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{name},{:.6},{:.6},{:.6},{:.6}",
            r.mae, r.max_f, r.s_measure, r.max_e
        );
    }
    out
}

/// Fixed-width table with columns S, F, E, MAE.
pub fn report_table(rows: &[(String, EvalResult)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut out = format!(
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}\n",
        "dataset", "S", "F", "E", "MAE"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{name:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}",
            r.s_measure, r.max_f, r.max_e, r.mae
        );
    }
    out
}
