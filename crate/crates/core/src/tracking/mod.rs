//! Tracking-based refinement of frame-wise detections.
//!
//! Detections are associated over time by a constant-velocity Kalman
//! tracker; the filter's posterior states become the refined boxes. Each
//! confirmed track is then post-processed in a fixed order: size
//! consistency, stationary pinning, polynomial trajectory smoothing.

mod kalman;
mod refine;
mod tracker;

pub use kalman::{predict, update, MeasurementNoise, ProcessNoise, TrackState, MEAN_DIM, OBS_DIM};
pub use refine::{detect_stationary, enforce_size_consistency, polyfit, smooth_trajectory, Polynomial};
pub use tracker::{track_scene, TrackerConfig};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("time step must be positive, got {0} s")]
    NonPositiveDt(f64),
    #[error("numerical failure on track {track_id}{}: {reason}", .frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    Numerical {
        track_id: String,
        frame: Option<usize>,
        reason: String,
    },
    #[error("degenerate polynomial fit: {0}")]
    DegenerateFit(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid tracker config: {0}")]
    Config(String),
}
