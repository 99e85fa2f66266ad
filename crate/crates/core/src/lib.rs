//! Annotation-effort evaluation for 3D object detection.
//!
//! The central quantity is the correction acceleration ratio
//! `CAR = 1 - C / B`: the share of manual labeling time saved by correcting
//! model pre-annotations instead of labeling from scratch. Around it sit
//! gated box matching, an error taxonomy with threshold calibration,
//! nuScenes-style AP, a Kalman tracking refiner and an error injector.
//!
//! ```
//! use annocar::car::{car, correction_time, baseline_time, CorrectionTimeTable};
//! use annocar::taxonomy::{ErrorCounts, ErrorType};
//!
//! let table = CorrectionTimeTable::default();
//! let mut counts = ErrorCounts::default();
//! counts.n_gt = 10;
//! counts.set(ErrorType::FN, 1);
//! let c = correction_time(&counts, &table);
//! let b = baseline_time(counts.n_gt, &table);
//! assert_eq!(car(c, b).value(), Some(0.9));
//! ```

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annotation;
pub mod ap;
pub mod car;
pub mod cli;
pub mod config;
pub mod geometry;
pub mod inject;
pub mod matching;
pub mod report;
pub mod taxonomy;
pub mod tracking;

use thiserror::Error;

/// Process exit codes of the command-line tool.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const DATA: i32 = 2;
    pub const CALIBRATION: i32 = 3;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Load(#[from] annotation::LoadError),
    #[error(transparent)]
    Save(#[from] annotation::SaveError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Alignment(#[from] car::AlignmentError),
    #[error(transparent)]
    Diff(#[from] taxonomy::DiffError),
    #[error(transparent)]
    Calibration(#[from] taxonomy::CalibrationError),
    #[error(transparent)]
    Track(#[from] tracking::TrackError),
    #[error(transparent)]
    Inject(#[from] inject::InfeasibleSpec),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use config::ConfigError;
        match self {
            Error::Load(annotation::LoadError::Io { .. })
            | Error::Save(_)
            | Error::Config(ConfigError::Io { .. })
            | Error::Io { .. } => exit_code::IO,
            Error::Calibration(_) => exit_code::CALIBRATION,
            _ => exit_code::DATA,
        }
    }
}
