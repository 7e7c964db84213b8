//! Saliency evaluation: MAE, adaptive-threshold F-measure, S-measure and
//! precision-recall curves.

mod report;

pub use report::{evaluate_dir, write_pr_csv, ImageMetrics, MetricsReport};

use crate::error::{Error, Result};

/// Weight of precision relative to recall in the F-measure.
pub const BETA2: f64 = 0.3;
/// Balance between the object- and region-aware S-measure terms.
pub const S_ALPHA: f64 = 0.5;
/// Number of thresholds `0/255 … 255/255` in a precision-recall curve.
pub const PR_POINTS: usize = 256;

const EPS: f64 = f64::EPSILON;

fn check_len(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Metrics(format!(
            "prediction has {} pixels, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::Metrics("empty map".into()));
    }
    Ok(())
}

fn positives(gt: &[f64]) -> Result<usize> {
    let n = gt.iter().filter(|&&g| g > 0.5).count();
    if n == 0 {
        return Err(Error::Metrics("ground truth has no salient pixels".into()));
    }
    Ok(n)
}

/// Mean absolute difference.
pub fn mae(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_len(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// Precision and recall of `pred ≥ t` against `gt > 0.5`. Precision is 1
/// when nothing is predicted positive.
fn precision_recall(pred: &[f64], gt: &[f64], t: f64, gt_pos: usize) -> (f64, f64) {
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        if p >= t {
            if g > 0.5 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    (precision, tp as f64 / gt_pos as f64)
}

/// `(precision, recall)` at thresholds `k/255`, `k = 0..=255`.
pub fn pr_curve(pred: &[f64], gt: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_len(pred, gt)?;
    let n = positives(gt)?;
    Ok((0..PR_POINTS)
        .map(|k| precision_recall(pred, gt, k as f64 / 255.0, n))
        .collect())
}

pub fn adaptive_threshold(pred: &[f64]) -> f64 {
    (2.0 * pred.iter().sum::<f64>() / pred.len() as f64).min(1.0)
}

/// F-measure at the adaptive threshold `min(1, 2·mean(pred))`. Pixels at
/// exactly zero never count as predicted positive, so an empty prediction
/// scores 0.
pub fn f_measure(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_len(pred, gt)?;
    let n = positives(gt)?;
    let t = adaptive_threshold(pred);
    let mut tp = 0usize;
    let mut predicted = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        if p >= t && p > 0.0 {
            predicted += 1;
            tp += usize::from(g > 0.5);
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / predicted as f64;
    let recall = tp as f64 / n as f64;
    Ok((1.0 + BETA2) * precision * recall / (BETA2 * precision + recall))
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Similarity of a region's mean and spread to a uniformly-one map.
fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (x, sigma) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn s_object(pred: &[f64], gt: &[bool]) -> f64 {
    let fg = object_score(pred.iter().zip(gt).filter(|(_, &g)| g).map(|(&p, _)| p));
    let bg = object_score(pred.iter().zip(gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p));
    let u = gt.iter().filter(|&&g| g).count() as f64 / gt.len() as f64;
    u * fg + (1.0 - u) * bg
}

/// Structural similarity of two equally sized regions.
fn ssim(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let denom = n - 1.0 + EPS;
    let sx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / denom;
    let sy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / denom;
    let sxy = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / denom;
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Rounded foreground centroid as 1-based `(column, row)` split points;
/// the image centre when there is no foreground.
fn centroid(gt: &[bool], h: usize, w: usize) -> (usize, usize) {
    let total = gt.iter().filter(|&&g| g).count();
    if total == 0 {
        return ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize);
    }
    let (mut sx, mut sy) = (0usize, 0usize);
    for (i, _) in gt.iter().enumerate().filter(|(_, &g)| g) {
        sy += i / w + 1;
        sx += i % w + 1;
    }
    let t = total as f64;
    ((sx as f64 / t).round() as usize, (sy as f64 / t).round() as usize)
}

fn s_region(pred: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let (cx, cy) = centroid(gt, h, w);
    let quadrants = [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)];
    let area = (h * w) as f64;
    quadrants
        .into_iter()
        .filter(|(rows, cols)| !rows.is_empty() && !cols.is_empty())
        .map(|(rows, cols)| {
            let weight = (rows.len() * cols.len()) as f64 / area;
            let idx: Vec<usize> = rows.flat_map(|r| cols.clone().map(move |c| r * w + c)).collect();
            let p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
            let g: Vec<f64> = idx.iter().map(|&i| f64::from(u8::from(gt[i]))).collect();
            weight * ssim(&p, &g)
        })
        .sum()
}

/// Structure measure of an `h × w` prediction against a binary mask:
/// `α·S_object + (1−α)·S_region`. All-background masks score `1 − mean(pred)`
/// and all-foreground masks score `mean(pred)`.
pub fn s_measure(pred: &[f64], gt: &[f64], h: usize, w: usize) -> Result<f64> {
    check_len(pred, gt)?;
    if pred.len() != h * w {
        return Err(Error::Metrics(format!("{} pixels do not form a {h}x{w} map", pred.len())));
    }
    let mask: Vec<bool> = gt.iter().map(|&g| g > 0.5).collect();
    let y = mask.iter().filter(|&&g| g).count() as f64 / mask.len() as f64;
    let x = pred.iter().sum::<f64>() / pred.len() as f64;
    let q = if y == 0.0 {
        1.0 - x
    } else if y == 1.0 {
        x
    } else {
        S_ALPHA * s_object(pred, &mask) + (1.0 - S_ALPHA) * s_region(pred, &mask, h, w)
    };
    Ok(q.max(0.0))
}
