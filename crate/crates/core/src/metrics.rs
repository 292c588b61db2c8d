//! Saliency evaluation: MAE, maximum F-measure over a 256-threshold sweep,
//! S-measure, E-measure (adaptive-threshold variant), and dataset-level
//! aggregation with P-R curves.
//!
//! All functions take single-channel maps; predictions in [0, 1] and binary
//! ground truth. Dataset aggregation skips empty-GT images for the
//! F/S/E measures (recall is undefined there) but keeps them for MAE.

use std::io::Write;
use std::path::Path;

use crate::data::ImageBuf;
use crate::error::{Error, Result};

pub const N_THRESHOLDS: usize = 256;
pub const DEFAULT_BETA2: f64 = 0.3;

fn check_pair(pred: &ImageBuf, gt: &ImageBuf) -> Result<()> {
    if pred.c != 1 || gt.c != 1 {
        return Err(Error::Shape("metrics expect single-channel maps".into()));
    }
    if pred.h != gt.h || pred.w != gt.w {
        return Err(Error::Shape(format!(
            "pred {}x{} vs gt {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    Ok(())
}

fn mean(data: &[f32]) -> f64 {
    data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64
}

/// Mean absolute error.
pub fn mae(pred: &ImageBuf, gt: &ImageBuf) -> Result<f64> {
    check_pair(pred, gt)?;
    Ok(pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(&p, &g)| (p as f64 - g as f64).abs())
        .sum::<f64>()
        / pred.data.len() as f64)
}

/// Per-threshold true/false positive counts over the 256-point sweep with
/// thresholds k/256, k = 0..255, binarizing at `pred >= t`.
fn sweep_counts(pred: &ImageBuf, gt: &ImageBuf) -> (Vec<f64>, Vec<f64>, f64) {
    let n_fg: f64 = gt.data.iter().map(|&g| g as f64).sum();
    // histogram the prediction values of fg / all pixels, then suffix-sum
    let mut tp_hist = vec![0f64; N_THRESHOLDS];
    let mut pp_hist = vec![0f64; N_THRESHOLDS];
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        // largest k with k/256 <= p, i.e. pred >= t for all t <= p
        let bin = ((p as f64) * N_THRESHOLDS as f64).floor() as usize;
        let bin = bin.min(N_THRESHOLDS - 1);
        pp_hist[bin] += 1.0;
        if g > 0.5 {
            tp_hist[bin] += 1.0;
        }
    }
    let mut tp = vec![0f64; N_THRESHOLDS];
    let mut pp = vec![0f64; N_THRESHOLDS];
    let mut acc_tp = 0.0;
    let mut acc_pp = 0.0;
    for k in (0..N_THRESHOLDS).rev() {
        acc_tp += tp_hist[k];
        acc_pp += pp_hist[k];
        tp[k] = acc_tp;
        pp[k] = acc_pp;
    }
    (tp, pp, n_fg)
}

/// F-measure with F := 0 when the denominator vanishes.
pub fn f_measure(precision: f64, recall: f64, beta2: f64) -> f64 {
    let denom = beta2 * precision + recall;
    if denom <= 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / denom
    }
}

/// Maximum F-measure over 256 equally spaced thresholds and the matching
/// precision/recall curve. Errors on empty ground truth (recall undefined).
pub fn max_f_measure(
    pred: &ImageBuf,
    gt: &ImageBuf,
    beta2: f64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    check_pair(pred, gt)?;
    let (tp, pp, n_fg) = sweep_counts(pred, gt);
    if n_fg == 0.0 {
        return Err(Error::Data("empty ground truth: recall undefined".into()));
    }
    let mut curve = Vec::with_capacity(N_THRESHOLDS);
    let mut best = 0.0f64;
    for k in 0..N_THRESHOLDS {
        let precision = if pp[k] > 0.0 { tp[k] / pp[k] } else { 0.0 };
        let recall = tp[k] / n_fg;
        best = best.max(f_measure(precision, recall, beta2));
        curve.push((precision, recall));
    }
    Ok((best, curve))
}

// --- S-measure -------------------------------------------------------------

fn region_stats(pred: &ImageBuf, mask: impl Fn(usize, usize) -> bool) -> (f64, f64, f64) {
    // mean and sample std of pred within the mask; returns (mean, std, count)
    let mut sum = 0.0;
    let mut n = 0.0;
    for y in 0..pred.h {
        for x in 0..pred.w {
            if mask(y, x) {
                sum += pred.get(y, x, 0) as f64;
                n += 1.0;
            }
        }
    }
    if n == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let m = sum / n;
    let mut ss = 0.0;
    for y in 0..pred.h {
        for x in 0..pred.w {
            if mask(y, x) {
                let d = pred.get(y, x, 0) as f64 - m;
                ss += d * d;
            }
        }
    }
    let std = if n > 1.0 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    (m, std, n)
}

fn object_score(x_mean: f64, x_std: f64) -> f64 {
    2.0 * x_mean / (x_mean * x_mean + 1.0 + x_std + f64::EPSILON)
}

fn s_object(pred: &ImageBuf, gt: &ImageBuf) -> f64 {
    let u = mean(&gt.data);
    // foreground similarity on pred, background similarity on 1-pred
    let (fg_mean, fg_std, _) = region_stats(pred, |y, x| gt.get(y, x, 0) > 0.5);
    let inv = ImageBuf {
        h: pred.h,
        w: pred.w,
        c: 1,
        data: pred.data.iter().map(|&v| 1.0 - v).collect(),
    };
    let (bg_mean, bg_std, _) = region_stats(&inv, |y, x| gt.get(y, x, 0) <= 0.5);
    u * object_score(fg_mean, fg_std) + (1.0 - u) * object_score(bg_mean, bg_std)
}

/// Ground-truth centroid, 1-based and rounded as in the reference protocol.
fn gt_centroid(gt: &ImageBuf) -> (usize, usize) {
    let mut sy = 0.0;
    let mut sx = 0.0;
    let mut n = 0.0;
    for y in 0..gt.h {
        for x in 0..gt.w {
            if gt.get(y, x, 0) > 0.5 {
                sy += (y + 1) as f64;
                sx += (x + 1) as f64;
                n += 1.0;
            }
        }
    }
    ((sy / n).round() as usize, (sx / n).round() as usize)
}

struct Block {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

fn block_ssim(pred: &ImageBuf, gt: &ImageBuf, b: &Block) -> f64 {
    let n = ((b.y1 - b.y0) * (b.x1 - b.x0)) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mut mx = 0.0;
    let mut my = 0.0;
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            mx += pred.get(y, x, 0) as f64;
            my += gt.get(y, x, 0) as f64;
        }
    }
    mx /= n;
    my /= n;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxy = 0.0;
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            let dx = pred.get(y, x, 0) as f64 - mx;
            let dy = gt.get(y, x, 0) as f64 - my;
            sx += dx * dx;
            sy += dy * dy;
            sxy += dx * dy;
        }
    }
    let denom = (n - 1.0).max(1.0);
    sx /= denom;
    sy /= denom;
    sxy /= denom;
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: &ImageBuf, gt: &ImageBuf) -> f64 {
    let (cy, cx) = gt_centroid(gt);
    let (h, w) = (gt.h, gt.w);
    let total = (h * w) as f64;
    let blocks = [
        Block { y0: 0, y1: cy, x0: 0, x1: cx },
        Block { y0: 0, y1: cy, x0: cx, x1: w },
        Block { y0: cy, y1: h, x0: 0, x1: cx },
        Block { y0: cy, y1: h, x0: cx, x1: w },
    ];
    blocks
        .iter()
        .map(|b| {
            let weight = ((b.y1 - b.y0) * (b.x1 - b.x0)) as f64 / total;
            weight * block_ssim(pred, gt, b)
        })
        .sum()
}

/// Structure measure: balance * object-aware + (1 - balance) * region-aware
/// similarity, with the standard degenerate branches for empty/full GT.
pub fn s_measure(pred: &ImageBuf, gt: &ImageBuf, balance: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let y = mean(&gt.data);
    let x = mean(&pred.data);
    let s = if y == 0.0 {
        1.0 - x
    } else if y == 1.0 {
        x
    } else {
        (balance * s_object(pred, gt) + (1.0 - balance) * s_region(pred, gt)).max(0.0)
    };
    Ok(s)
}

// --- E-measure -------------------------------------------------------------

/// Enhanced-alignment measure, adaptive-threshold single-value variant:
/// binarize at min(2 * mean(pred), 1), then average the enhanced alignment
/// term over pixels.
pub fn e_measure(pred: &ImageBuf, gt: &ImageBuf) -> Result<f64> {
    check_pair(pred, gt)?;
    let th = (2.0 * mean(&pred.data)).min(1.0);
    let fm: Vec<f64> = pred
        .data
        .iter()
        .map(|&p| if p as f64 >= th { 1.0 } else { 0.0 })
        .collect();
    let gt_mean = mean(&gt.data);
    if gt_mean == 0.0 {
        // no foreground: reward predicting nothing
        return Ok(fm.iter().map(|&f| 1.0 - f).sum::<f64>() / fm.len() as f64);
    }
    if gt_mean == 1.0 {
        return Ok(fm.iter().sum::<f64>() / fm.len() as f64);
    }
    let fm_mean = fm.iter().sum::<f64>() / fm.len() as f64;
    let mut sum = 0.0;
    for (f, &g) in fm.iter().zip(&gt.data) {
        let dfm = f - fm_mean;
        let dgt = g as f64 - gt_mean;
        let align = 2.0 * dgt * dfm / (dgt * dgt + dfm * dfm + f64::EPSILON);
        sum += (align + 1.0) * (align + 1.0) / 4.0;
    }
    Ok(sum / fm.len() as f64)
}

// --- dataset aggregation ----------------------------------------------------

/// Dataset-level evaluation summary.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub mae: f64,
    pub max_f: f64,
    pub s_measure: f64,
    pub e_measure: f64,
    /// 256 per-threshold (precision, recall) pairs, dataset-averaged.
    pub pr_curve: Vec<(f64, f64)>,
    pub images: usize,
    pub empty_gt_skipped: usize,
}

impl MetricReport {
    /// Flat key-value text serialization.
    pub fn write_report(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "format = rtsod-metrics-v1")?;
        writeln!(f, "e_measure_variant = adaptive")?;
        writeln!(f, "images = {}", self.images)?;
        writeln!(f, "empty_gt_skipped = {}", self.empty_gt_skipped)?;
        writeln!(f, "mae = {:.6}", self.mae)?;
        writeln!(f, "max_f = {:.6}", self.max_f)?;
        writeln!(f, "s_measure = {:.6}", self.s_measure)?;
        writeln!(f, "e_measure = {:.6}", self.e_measure)?;
        Ok(())
    }

    /// 256-row CSV of (threshold, precision, recall).
    pub fn write_pr_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "threshold,precision,recall")?;
        for (k, (p, r)) in self.pr_curve.iter().enumerate() {
            writeln!(f, "{:.6},{:.6},{:.6}", k as f64 / N_THRESHOLDS as f64, p, r)?;
        }
        Ok(())
    }
}

/// Evaluates aligned prediction/GT lists: MAE/S/E averaged per image, the
/// P-R curve averaged per threshold, and max-F taken from the averaged
/// curve.
pub fn evaluate_dataset(preds: &[ImageBuf], gts: &[ImageBuf]) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(Error::Data(format!(
            "misaligned lists: {} predictions vs {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("cannot evaluate an empty dataset".into()));
    }
    let mut mae_sum = 0.0;
    let mut s_sum = 0.0;
    let mut e_sum = 0.0;
    let mut curve_sum = vec![(0.0f64, 0.0f64); N_THRESHOLDS];
    let mut scored = 0usize;
    let mut skipped = 0usize;
    for (pred, gt) in preds.iter().zip(gts) {
        mae_sum += mae(pred, gt)?;
        let empty = gt.data.iter().all(|&v| v <= 0.5);
        if empty {
            skipped += 1;
            continue;
        }
        let (_, curve) = max_f_measure(pred, gt, DEFAULT_BETA2)?;
        for (acc, c) in curve_sum.iter_mut().zip(&curve) {
            acc.0 += c.0;
            acc.1 += c.1;
        }
        s_sum += s_measure(pred, gt, 0.5)?;
        e_sum += e_measure(pred, gt)?;
        scored += 1;
    }
    if skipped > 0 {
        log::warn!("{skipped} empty-GT images excluded from max-F/S/E (kept for MAE)");
    }
    if scored == 0 {
        return Err(Error::Data("all ground truths empty: F/S/E undefined".into()));
    }
    let pr_curve: Vec<(f64, f64)> = curve_sum
        .into_iter()
        .map(|(p, r)| (p / scored as f64, r / scored as f64))
        .collect();
    let max_f = pr_curve
        .iter()
        .map(|&(p, r)| f_measure(p, r, DEFAULT_BETA2))
        .fold(0.0, f64::max);
    Ok(MetricReport {
        mae: mae_sum / preds.len() as f64,
        max_f,
        s_measure: s_sum / scored as f64,
        e_measure: e_sum / scored as f64,
        pr_curve,
        images: preds.len(),
        empty_gt_skipped: skipped,
    })
}
