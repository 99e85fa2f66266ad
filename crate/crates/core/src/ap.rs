//! nuScenes-style detection Average Precision on BEV center distance.
//!
//! Predictions are ranked by score and greedily matched to the nearest
//! unclaimed ground truth of the same class. Precision is sampled on a
//! 101-point recall grid; AP discards recall <= 0.1, subtracts the 0.1
//! precision floor and renormalizes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::Box3D;
use crate::geometry::bev_center_distance;

pub const RECALL_SAMPLES: usize = 101;
pub const MIN_RECALL: f64 = 0.1;
pub const MIN_PRECISION: f64 = 0.1;
pub const MATCH_THRESHOLDS_M: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Error, PartialEq)]
#[error("prediction {index} in frame {frame} (class {class:?}) has no score")]
pub struct MissingScore {
    pub frame: usize,
    pub index: usize,
    pub class: String,
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid precision curve: {0}")]
pub struct CurveError(String);

/// Interpolated precision at recall 0.00, 0.01, ..., 1.00.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    precision: Vec<f64>,
    pub match_threshold_m: f64,
}

impl PrCurve {
    pub fn new(precision: Vec<f64>, match_threshold_m: f64) -> Result<Self, CurveError> {
        if precision.len() != RECALL_SAMPLES {
            return Err(CurveError(format!(
                "expected {RECALL_SAMPLES} samples, got {}",
                precision.len()
            )));
        }
        if let Some(p) = precision.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CurveError(format!("precision {p} outside [0, 1]")));
        }
        Ok(Self {
            precision,
            match_threshold_m,
        })
    }

    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    pub fn recall_samples() -> impl Iterator<Item = f64> {
        (0..RECALL_SAMPLES).map(|i| i as f64 / (RECALL_SAMPLES - 1) as f64)
    }
}

/// Cumulative (tp, fp) after each ranked prediction of `class`.
pub fn operating_points(
    gt: &[&[Box3D]],
    pred: &[&[Box3D]],
    class: &str,
    threshold_m: f64,
) -> Result<Vec<(u64, u64)>, MissingScore> {
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    for (fi, frame) in pred.iter().enumerate() {
        for (bi, b) in frame.iter().enumerate() {
            if b.class_label != class {
                continue;
            }
            let score = b.score.ok_or_else(|| MissingScore {
                frame: fi,
                index: bi,
                class: class.to_string(),
            })?;
            ranked.push((score, fi, bi));
        }
    }
    // Stable: equal scores keep input order.
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut claimed: Vec<Vec<bool>> = gt.iter().map(|f| vec![false; f.len()]).collect();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut points = Vec::with_capacity(ranked.len());
    for (_, fi, bi) in ranked {
        let p = &pred[fi][bi];
        let mut best: Option<(usize, f64)> = None;
        if let Some(frame_gt) = gt.get(fi) {
            for (gi, g) in frame_gt.iter().enumerate() {
                if claimed[fi][gi] || g.class_label != class {
                    continue;
                }
                let d = bev_center_distance(g, p);
                if d < threshold_m && best.is_none_or(|b| d < b.1) {
                    best = Some((gi, d));
                }
            }
        }
        match best {
            Some((gi, _)) => {
                claimed[fi][gi] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        points.push((tp, fp));
    }
    Ok(points)
}

/// Precision on the recall grid: the best precision among operating points
/// whose recall reaches the grid value, 0 where none does.
pub fn interpolate(points: &[(u64, u64)], n_pos: u64, threshold_m: f64) -> PrCurve {
    let mut precision = vec![0.0; RECALL_SAMPLES];
    if n_pos > 0 && !points.is_empty() {
        let mut suffix_max = vec![0.0f64; points.len()];
        let mut running = 0.0f64;
        for (k, &(tp, fp)) in points.iter().enumerate().rev() {
            running = running.max(tp as f64 / (tp + fp) as f64);
            suffix_max[k] = running;
        }
        let steps = (RECALL_SAMPLES - 1) as u64;
        let mut k = 0;
        for (i, slot) in precision.iter_mut().enumerate() {
            // recall tp/n_pos >= i/100, compared exactly in integers
            while k < points.len() && points[k].0 * steps < i as u64 * n_pos {
                k += 1;
            }
            if k == points.len() {
                break;
            }
            *slot = suffix_max[k];
        }
    }
    PrCurve {
        precision,
        match_threshold_m: threshold_m,
    }
}

pub fn pr_curve(gt: &[&[Box3D]], pred: &[&[Box3D]], class: &str, threshold_m: f64) -> Result<PrCurve, MissingScore> {
    let n_pos = gt
        .iter()
        .flat_map(|f| f.iter())
        .filter(|b| b.class_label == class)
        .count() as u64;
    let points = operating_points(gt, pred, class, threshold_m)?;
    Ok(interpolate(&points, n_pos, threshold_m))
}

/// AP of one curve. Computed as `mean(max(p/m - 1, 0)) / (1/m - 1)`, which
/// equals `mean(max(p - m, 0)) / (1 - m)` but stays exact for p = 1.
pub fn ap_at_threshold(curve: &PrCurve) -> f64 {
    let first = (MIN_RECALL * (RECALL_SAMPLES - 1) as f64).round() as usize + 1;
    let inv = 1.0 / MIN_PRECISION;
    let kept = &curve.precision[first..];
    let sum = exact_sum(kept.iter().map(|p| (inv * p - 1.0).max(0.0)));
    sum / kept.len() as f64 / (inv - 1.0)
}

/// Neumaier compensated summation.
fn exact_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    #[serde(rename = "class")]
    pub class_label: String,
    /// (match threshold in meters, AP)
    pub per_threshold: Vec<(f64, f64)>,
    pub mean_ap: f64,
    /// Set when the class has no ground truth; AP is then reported as 0.
    pub no_ground_truth: bool,
}

/// Mean of [`ap_at_threshold`] over the 0.5/1/2/4 m match thresholds.
pub fn mean_ap(gt: &[&[Box3D]], pred: &[&[Box3D]], class: &str) -> Result<ApSummary, MissingScore> {
    let no_gt = !gt.iter().flat_map(|f| f.iter()).any(|b| b.class_label == class);
    if no_gt {
        log::warn!("class {class:?} has no ground truth; AP defined as 0");
    }
    let mut per_threshold = Vec::with_capacity(MATCH_THRESHOLDS_M.len());
    for th in MATCH_THRESHOLDS_M {
        let curve = pr_curve(gt, pred, class, th)?;
        per_threshold.push((th, ap_at_threshold(&curve)));
    }
    let mean = per_threshold.iter().map(|(_, ap)| ap).sum::<f64>() / per_threshold.len() as f64;
    Ok(ApSummary {
        class_label: class.to_string(),
        per_threshold,
        mean_ap: mean,
        no_ground_truth: no_gt,
    })
}
