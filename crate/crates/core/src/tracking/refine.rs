use nalgebra::{DMatrix, DVector};

use super::TrackError;
use crate::annotation::Box3D;
use crate::geometry::{bev_center_distance, wrap_angle};

/// Below this BEV speed (m/s) the smoothed heading keeps the input yaw.
pub const HEADING_MIN_SPEED: f64 = 0.5;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Replace every box size by the per-axis median over the track.
pub fn enforce_size_consistency(boxes: &[Box3D]) -> Vec<Box3D> {
    if boxes.is_empty() {
        return Vec::new();
    }
    let mut size = [0.0; 3];
    for (axis, out) in size.iter_mut().enumerate() {
        let mut v: Vec<f64> = boxes.iter().map(|b| b.size[axis]).collect();
        *out = median(&mut v);
    }
    boxes
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.size = size;
            b
        })
        .collect()
}

/// Flag the track as stationary when no two centers are `stationary_disp_m`
/// or more apart in BEV; flagged tracks get every center pinned to the
/// per-axis mean.
pub fn detect_stationary(boxes: &mut [Box3D], stationary_disp_m: f64) -> Result<bool, TrackError> {
    if boxes.len() < 2 {
        return Err(TrackError::Precondition(format!(
            "stationary detection needs at least 2 boxes, got {}",
            boxes.len()
        )));
    }
    let mut max_disp = 0.0f64;
    for (i, a) in boxes.iter().enumerate() {
        for b in &boxes[i + 1..] {
            max_disp = max_disp.max(bev_center_distance(a, b));
        }
    }
    if max_disp >= stationary_disp_m {
        return Ok(false);
    }
    let n = boxes.len() as f64;
    let mut mean = [0.0; 3];
    for b in boxes.iter() {
        for (m, c) in mean.iter_mut().zip(b.center) {
            *m += c;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for b in boxes.iter_mut() {
        b.center = mean;
    }
    Ok(true)
}

/// Least-squares polynomial in a shifted and scaled time variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    /// Coefficients in ascending power of `(t - offset) / scale`.
    pub coeffs: Vec<f64>,
    pub offset: f64,
    pub scale: f64,
}

impl Polynomial {
    pub fn eval(&self, t: f64) -> f64 {
        let u = (t - self.offset) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }

    /// First derivative with respect to `t`.
    pub fn derivative(&self, t: f64) -> f64 {
        let u = (t - self.offset) / self.scale;
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * u + k as f64 * c;
        }
        acc / self.scale
    }
}

/// Fit `y(t)` with a degree-`degree` polynomial against mean-centered times.
pub fn polyfit(t: &[f64], y: &[f64], degree: usize) -> Result<Polynomial, TrackError> {
    let n = t.len();
    if n != y.len() {
        return Err(TrackError::Precondition(format!("{n} times but {} values", y.len())));
    }
    if n < degree + 1 {
        return Err(TrackError::DegenerateFit(format!(
            "{n} samples cannot determine a degree-{degree} polynomial"
        )));
    }
    let offset = t.iter().sum::<f64>() / n as f64;
    let spread = t.iter().map(|v| (v - offset).abs()).fold(0.0, f64::max);
    let scale = if spread > 0.0 { spread } else { 1.0 };

    let a = DMatrix::from_fn(n, degree + 1, |r, c| ((t[r] - offset) / scale).powi(c as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > smax * 1e-10) {
        return Err(TrackError::DegenerateFit(format!(
            "rank-deficient design (singular values {smin:e} / {smax:e}); repeated timestamps?"
        )));
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| TrackError::DegenerateFit(e.to_string()))?;
    Ok(Polynomial {
        coeffs: x.iter().copied().collect(),
        offset,
        scale,
    })
}

/// Replace centers with independent per-axis polynomial fits over time.
/// Where the fitted BEV speed exceeds [`HEADING_MIN_SPEED`] the yaw is
/// re-derived from the fitted velocity direction.
pub fn smooth_trajectory(boxes: &[Box3D], timestamps_s: &[f64], degree: usize) -> Result<Vec<Box3D>, TrackError> {
    if boxes.len() != timestamps_s.len() {
        return Err(TrackError::Precondition(format!(
            "{} boxes but {} timestamps",
            boxes.len(),
            timestamps_s.len()
        )));
    }
    let fits: Vec<Polynomial> = (0..3)
        .map(|axis| {
            let y: Vec<f64> = boxes.iter().map(|b| b.center[axis]).collect();
            polyfit(timestamps_s, &y, degree)
        })
        .collect::<Result<_, _>>()?;
    Ok(boxes
        .iter()
        .zip(timestamps_s)
        .map(|(b, &t)| {
            let mut out = b.clone();
            out.center = [fits[0].eval(t), fits[1].eval(t), fits[2].eval(t)];
            let (vx, vy) = (fits[0].derivative(t), fits[1].derivative(t));
            if vx.hypot(vy) > HEADING_MIN_SPEED {
                out.yaw = wrap_angle(vy.atan2(vx));
            }
            out
        })
        .collect())
}
