use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::TrackError;
use crate::annotation::Box3D;
use crate::geometry::wrap_angle;

/// State layout: x, y, z, yaw, l, w, h, vx, vy, vz.
pub const MEAN_DIM: usize = 10;
/// Observation layout: x, y, z, yaw, l, w, h.
pub const OBS_DIM: usize = 7;

pub type StateVec = SVector<f64, MEAN_DIM>;
pub type StateCov = SMatrix<f64, MEAN_DIM, MEAN_DIM>;
type ObsVec = SVector<f64, OBS_DIM>;
type ObsCov = SMatrix<f64, OBS_DIM, OBS_DIM>;
type ObsModel = SMatrix<f64, OBS_DIM, MEAN_DIM>;

const SYMMETRY_TOL: f64 = 1e-9;

/// Process noise variances per second, by channel group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoise {
    pub position: f64,
    pub yaw: f64,
    pub size: f64,
    pub velocity: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            position: 0.05,
            yaw: 0.01,
            size: 0.001,
            velocity: 1.0,
        }
    }
}

impl ProcessNoise {
    fn diagonal(&self) -> StateVec {
        let p = self.position;
        let s = self.size;
        let v = self.velocity;
        StateVec::from([p, p, p, self.yaw, s, s, s, v, v, v])
    }
}

/// Measurement noise variances, by channel group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoise {
    pub position: f64,
    pub yaw: f64,
    pub size: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self {
            position: 0.1,
            yaw: 0.05,
            size: 0.05,
        }
    }
}

impl MeasurementNoise {
    fn covariance(&self) -> ObsCov {
        let p = self.position;
        let s = self.size;
        ObsCov::from_diagonal(&ObsVec::from([p, p, p, self.yaw, s, s, s]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub mean: StateVec,
    pub covariance: StateCov,
    pub track_id: String,
    pub age: u32,
    pub hits: u32,
    /// Consecutive frames without an associated detection.
    pub misses: u32,
}

impl TrackState {
    /// New track at `obs` with zero velocity. Observed channels start at the
    /// measurement variance, velocity at `velocity_var`.
    pub fn from_observation(
        obs: &Box3D,
        track_id: impl Into<String>,
        noise: &MeasurementNoise,
        velocity_var: f64,
    ) -> Self {
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<OBS_DIM>(0).copy_from(&observation(obs));
        let mut covariance = StateCov::zeros();
        covariance
            .fixed_view_mut::<OBS_DIM, OBS_DIM>(0, 0)
            .copy_from(&noise.covariance());
        for i in OBS_DIM..MEAN_DIM {
            covariance[(i, i)] = velocity_var;
        }
        Self {
            mean,
            covariance,
            track_id: track_id.into(),
            age: 1,
            hits: 1,
            misses: 0,
        }
    }

    pub fn center(&self) -> [f64; 3] {
        [self.mean[0], self.mean[1], self.mean[2]]
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.mean[7], self.mean[8], self.mean[9]]
    }

    pub fn yaw(&self) -> f64 {
        self.mean[3]
    }

    pub fn size(&self) -> [f64; 3] {
        [self.mean[4], self.mean[5], self.mean[6]]
    }

    /// Box at the current mean with the given class label.
    pub fn to_box(&self, class_label: &str) -> Box3D {
        Box3D::new(self.center(), self.size(), wrap_angle(self.yaw()), class_label)
    }
}

fn observation(b: &Box3D) -> ObsVec {
    ObsVec::from([
        b.center[0],
        b.center[1],
        b.center[2],
        b.yaw,
        b.size[0],
        b.size[1],
        b.size[2],
    ])
}

fn observation_model() -> ObsModel {
    ObsModel::from_fn(|r, c| if r == c { 1.0 } else { 0.0 })
}

/// Constant-velocity prediction: position advances by velocity * dt, yaw and
/// size persist, covariance becomes `F P F^T + Q dt`.
pub fn predict(state: &TrackState, dt: f64, noise: &ProcessNoise) -> Result<TrackState, TrackError> {
    if !(dt > 0.0) {
        return Err(TrackError::NonPositiveDt(dt));
    }
    let mut f = StateCov::identity();
    for i in 0..3 {
        f[(i, 7 + i)] = dt;
    }
    let mut out = state.clone();
    out.mean = f * state.mean;
    out.covariance = f * state.covariance * f.transpose() + StateCov::from_diagonal(&(noise.diagonal() * dt));
    Ok(out)
}

/// Kalman measurement update with a wrapped yaw innovation.
///
/// Fails rather than repairing when the posterior covariance is no longer
/// symmetric positive semidefinite within tolerance.
pub fn update(state: &TrackState, obs: &Box3D, noise: &MeasurementNoise) -> Result<TrackState, TrackError> {
    let numerical = |reason: &str| TrackError::Numerical {
        track_id: state.track_id.clone(),
        frame: None,
        reason: reason.to_string(),
    };
    let h = observation_model();
    let p = &state.covariance;
    let mut innovation = observation(obs) - h * state.mean;
    innovation[3] = wrap_angle(innovation[3]);

    let s = h * p * h.transpose() + noise.covariance();
    let s_inv = s
        .cholesky()
        .ok_or_else(|| numerical("innovation covariance is not positive definite"))?
        .inverse();
    let gain = p * h.transpose() * s_inv;

    let mut mean = state.mean + gain * innovation;
    mean[3] = wrap_angle(mean[3]);
    let cov = (StateCov::identity() - gain * h) * p;
    check_psd(&cov).map_err(|r| numerical(&r))?;

    Ok(TrackState {
        mean,
        covariance: (cov + cov.transpose()) * 0.5,
        track_id: state.track_id.clone(),
        age: state.age,
        hits: state.hits + 1,
        misses: 0,
    })
}

fn check_psd(cov: &StateCov) -> Result<(), String> {
    let scale = cov.amax().max(1.0);
    let asym = (cov - cov.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(format!("posterior covariance asymmetric by {asym:e}"));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let jitter = StateCov::identity() * (SYMMETRY_TOL * scale);
    if (sym + jitter).cholesky().is_none() {
        return Err("posterior covariance is not positive semidefinite".into());
    }
    Ok(())
}
