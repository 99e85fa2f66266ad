//! Geometric primitives on [`Box3D`]: BEV distances, yaw wrapping, size
//! similarity and distance bands.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{Box3D, EgoPose};

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid maps onto [0, 2pi), which puts -pi in range and pi out of it.
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Euclidean distance between box centers projected onto the ground plane.
pub fn bev_center_distance(a: &Box3D, b: &Box3D) -> f64 {
    (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1])
}

/// Absolute heading difference in [0, pi]. A 180 degree flip counts as pi.
pub fn wrapped_yaw_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// 3D IoU of the two boxes after aligning their centers and headings.
pub fn aligned_size_similarity(a: &Box3D, b: &Box3D) -> f64 {
    let mut inter = 1.0;
    let mut union = 1.0;
    for (x, y) in a.size.iter().zip(b.size.iter()) {
        inter *= x.min(*y);
        union *= x.max(*y);
    }
    inter / union
}

/// `1 - aligned_size_similarity`, the quantity thresholded as scale error.
pub fn scale_deficit(a: &Box3D, b: &Box3D) -> f64 {
    1.0 - aligned_size_similarity(a, b)
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid range band [{min_m}, {max_m}): need 0 <= min < max")]
pub struct RangeBandError {
    pub min_m: f64,
    pub max_m: f64,
}

/// Half-open distance band `[min_m, max_m)` around the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct RangeBand {
    min_m: f64,
    max_m: f64,
}

impl RangeBand {
    pub fn new(min_m: f64, max_m: f64) -> Result<Self, RangeBandError> {
        // NaN fails both comparisons; max may be +inf.
        if min_m >= 0.0 && max_m > min_m && min_m.is_finite() {
            Ok(Self { min_m, max_m })
        } else {
            Err(RangeBandError { min_m, max_m })
        }
    }

    pub fn min_m(&self) -> f64 {
        self.min_m
    }

    pub fn max_m(&self) -> f64 {
        self.max_m
    }

    pub fn contains(&self, dist: f64) -> bool {
        dist >= self.min_m && dist < self.max_m
    }
}

impl TryFrom<[f64; 2]> for RangeBand {
    type Error = RangeBandError;

    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        RangeBand::new(v[0], v[1])
    }
}

impl From<RangeBand> for [f64; 2] {
    fn from(b: RangeBand) -> Self {
        [b.min_m, b.max_m]
    }
}

impl fmt::Display for RangeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.min_m, self.max_m)
    }
}

/// Whether the box center lies inside `band`, measured in BEV from the ego
/// origin. Pass `ego` when the box is expressed in scene-global coordinates.
pub fn in_range(b: &Box3D, band: &RangeBand, ego: Option<&EgoPose>) -> bool {
    let (ox, oy) = ego.map_or((0.0, 0.0), |p| (p.translation[0], p.translation[1]));
    band.contains((b.center[0] - ox).hypot(b.center[1] - oy))
}

/// Map a box from frame coordinates into the scene-global frame.
pub fn to_global(b: &Box3D, pose: &EgoPose) -> Box3D {
    let (s, c) = pose.yaw.sin_cos();
    let [x, y, z] = b.center;
    let mut out = b.clone();
    out.center = [
        c * x - s * y + pose.translation[0],
        s * x + c * y + pose.translation[1],
        z + pose.translation[2],
    ];
    out.yaw = wrap_angle(b.yaw + pose.yaw);
    out
}

/// Inverse of [`to_global`].
pub fn to_local(b: &Box3D, pose: &EgoPose) -> Box3D {
    let (s, c) = pose.yaw.sin_cos();
    let dx = b.center[0] - pose.translation[0];
    let dy = b.center[1] - pose.translation[1];
    let mut out = b.clone();
    out.center = [c * dx + s * dy, -s * dx + c * dy, b.center[2] - pose.translation[2]];
    out.yaw = wrap_angle(b.yaw - pose.yaw);
    out
}
