//! Error types for pre-annotations, per-pair classification, threshold
//! calibration from repeated manual annotations, and version diffs.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{Box3D, Scene};
use crate::geometry::{bev_center_distance, scale_deficit, wrapped_yaw_delta};
use crate::matching::{match_frame, MatchResult};

/// The ten error kinds a pre-annotation can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorType {
    FP,
    FN,
    T,
    R,
    S,
    CLS,
    TR,
    RS,
    TS,
    TRS,
}

impl ErrorType {
    pub const ALL: [ErrorType; 10] = [
        ErrorType::FP,
        ErrorType::FN,
        ErrorType::T,
        ErrorType::R,
        ErrorType::S,
        ErrorType::CLS,
        ErrorType::TR,
        ErrorType::RS,
        ErrorType::TS,
        ErrorType::TRS,
    ];

    /// The seven translation/rotation/scale combinations.
    pub const POSITIONAL: [ErrorType; 7] = [
        ErrorType::T,
        ErrorType::R,
        ErrorType::S,
        ErrorType::TR,
        ErrorType::RS,
        ErrorType::TS,
        ErrorType::TRS,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorType::FP => "FP",
            ErrorType::FN => "FN",
            ErrorType::T => "T",
            ErrorType::R => "R",
            ErrorType::S => "S",
            ErrorType::CLS => "CLS",
            ErrorType::TR => "TR",
            ErrorType::RS => "RS",
            ErrorType::TS => "TS",
            ErrorType::TRS => "TRS",
        }
    }

    /// Positional type for a (translation, rotation, scale) exceedance triple.
    pub fn from_channels(translation: bool, rotation: bool, scale: bool) -> Option<ErrorType> {
        match (translation, rotation, scale) {
            (false, false, false) => None,
            (true, false, false) => Some(ErrorType::T),
            (false, true, false) => Some(ErrorType::R),
            (false, false, true) => Some(ErrorType::S),
            (true, true, false) => Some(ErrorType::TR),
            (false, true, true) => Some(ErrorType::RS),
            (true, false, true) => Some(ErrorType::TS),
            (true, true, true) => Some(ErrorType::TRS),
        }
    }

    /// Inverse of [`ErrorType::from_channels`] for positional types.
    pub fn channels(self) -> Option<(bool, bool, bool)> {
        match self {
            ErrorType::T => Some((true, false, false)),
            ErrorType::R => Some((false, true, false)),
            ErrorType::S => Some((false, false, true)),
            ErrorType::TR => Some((true, true, false)),
            ErrorType::RS => Some((false, true, true)),
            ErrorType::TS => Some((true, false, true)),
            ErrorType::TRS => Some((true, true, true)),
            _ => None,
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ErrorType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorType::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown error type {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub translation_m: f64,
    pub rotation_rad: f64,
    /// Threshold on `1 - aligned_size_similarity`.
    pub scale_deficit: f64,
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid thresholds: {0}")]
pub struct ThresholdsError(pub String);

impl Thresholds {
    pub fn new(translation_m: f64, rotation_rad: f64, scale_deficit: f64) -> Result<Self, ThresholdsError> {
        let th = Self {
            translation_m,
            rotation_rad,
            scale_deficit,
        };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<(), ThresholdsError> {
        if !(self.translation_m > 0.0 && self.translation_m.is_finite()) {
            return Err(ThresholdsError(format!("translation_m {} must be > 0", self.translation_m)));
        }
        if !(self.rotation_rad > 0.0 && self.rotation_rad <= std::f64::consts::PI) {
            return Err(ThresholdsError(format!("rotation_rad {} must be in (0, pi]", self.rotation_rad)));
        }
        if !(self.scale_deficit > 0.0 && self.scale_deficit < 1.0) {
            return Err(ThresholdsError(format!("scale_deficit {} must be in (0, 1)", self.scale_deficit)));
        }
        Ok(())
    }
}

impl Default for Thresholds {
    /// Placeholder values used when no calibration data is available.
    fn default() -> Self {
        Self {
            translation_m: 0.5,
            rotation_rad: 10f64.to_radians(),
            scale_deficit: 0.2,
        }
    }
}

/// Per-type error counts plus the ground-truth and matched totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    counts: [u64; 10],
    pub n_gt: u64,
    pub n_matched: u64,
}

impl ErrorCounts {
    pub fn get(&self, e: ErrorType) -> u64 {
        self.counts[e.index()]
    }

    pub fn set(&mut self, e: ErrorType, n: u64) {
        self.counts[e.index()] = n;
    }

    pub fn bump(&mut self, e: ErrorType) {
        self.counts[e.index()] += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ErrorType, u64)> + '_ {
        ErrorType::ALL.into_iter().map(|e| (e, self.get(e)))
    }

    /// Number of predictions this tally covers (`FP + n_matched`).
    pub fn n_pred(&self) -> u64 {
        self.get(ErrorType::FP) + self.n_matched
    }

    pub fn total_errors(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_clean(&self) -> bool {
        self.total_errors() == 0
    }
}

impl Add for ErrorCounts {
    type Output = ErrorCounts;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for ErrorCounts {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.counts.iter_mut().zip(rhs.counts) {
            *a += b;
        }
        self.n_gt += rhs.n_gt;
        self.n_matched += rhs.n_matched;
    }
}

impl std::iter::Sum for ErrorCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ErrorCounts::default(), Add::add)
    }
}

// Serialized as a flat object: {"n_gt":..,"n_matched":..,"FP":..,...}.
#[derive(Serialize, Deserialize)]
struct CountsRepr {
    n_gt: u64,
    n_matched: u64,
    #[serde(rename = "FP", default)]
    fp: u64,
    #[serde(rename = "FN", default)]
    fn_: u64,
    #[serde(rename = "T", default)]
    t: u64,
    #[serde(rename = "R", default)]
    r: u64,
    #[serde(rename = "S", default)]
    s: u64,
    #[serde(rename = "CLS", default)]
    cls: u64,
    #[serde(rename = "TR", default)]
    tr: u64,
    #[serde(rename = "RS", default)]
    rs: u64,
    #[serde(rename = "TS", default)]
    ts: u64,
    #[serde(rename = "TRS", default)]
    trs: u64,
}

impl Serialize for ErrorCounts {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let c = &self.counts;
        CountsRepr {
            n_gt: self.n_gt,
            n_matched: self.n_matched,
            fp: c[0],
            fn_: c[1],
            t: c[2],
            r: c[3],
            s: c[4],
            cls: c[5],
            tr: c[6],
            rs: c[7],
            ts: c[8],
            trs: c[9],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ErrorCounts {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let r = CountsRepr::deserialize(deserializer)?;
        Ok(ErrorCounts {
            counts: [r.fp, r.fn_, r.t, r.r, r.s, r.cls, r.tr, r.rs, r.ts, r.trs],
            n_gt: r.n_gt,
            n_matched: r.n_matched,
        })
    }
}

/// Outcome for a single matched pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairErrors {
    pub positional: Option<ErrorType>,
    pub cls_error: bool,
}

/// Residuals of `pred` relative to `reference` on the three positional channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub translation_m: f64,
    pub rotation_rad: f64,
    pub scale_deficit: f64,
}

impl Residuals {
    pub fn between(reference: &Box3D, other: &Box3D) -> Self {
        Self {
            translation_m: bev_center_distance(reference, other),
            rotation_rad: wrapped_yaw_delta(reference.yaw, other.yaw),
            scale_deficit: scale_deficit(reference, other),
        }
    }

    pub fn exceeds(&self, th: &Thresholds) -> (bool, bool, bool) {
        (
            self.translation_m > th.translation_m,
            self.rotation_rad > th.rotation_rad,
            self.scale_deficit > th.scale_deficit,
        )
    }
}

pub fn classify_pair(gt: &Box3D, pred: &Box3D, th: &Thresholds) -> PairErrors {
    let (t, r, s) = Residuals::between(gt, pred).exceeds(th);
    PairErrors {
        positional: ErrorType::from_channels(t, r, s),
        cls_error: gt.class_label != pred.class_label,
    }
}

pub fn classify_frame(m: &MatchResult, gt: &[Box3D], pred: &[Box3D], th: &Thresholds) -> ErrorCounts {
    let mut counts = ErrorCounts {
        n_gt: gt.len() as u64,
        n_matched: m.pairs.len() as u64,
        ..Default::default()
    };
    counts.set(ErrorType::FN, m.unmatched_gt.len() as u64);
    counts.set(ErrorType::FP, m.unmatched_pred.len() as u64);
    for pair in &m.pairs {
        let e = classify_pair(&gt[pair.gt], &pred[pair.pred], th);
        if let Some(p) = e.positional {
            counts.bump(p);
        }
        if e.cls_error {
            counts.bump(ErrorType::CLS);
        }
    }
    counts
}

/// A (reference, manual) pair of annotations of the same object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub reference: Box3D,
    pub manual: Box3D,
}

pub const MIN_CALIBRATION_SAMPLES: usize = 10;
pub const DEFAULT_COVERAGE: f64 = 0.9;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("need at least {MIN_CALIBRATION_SAMPLES} calibration samples, got {0}")]
    InsufficientData(usize),
    #[error("coverage {0} must lie strictly between 0 and 1")]
    InvalidCoverage(f64),
    #[error("{channel} threshold degenerates to {value}; residuals carry no spread at this coverage")]
    DegenerateThreshold { channel: &'static str, value: f64 },
}

/// 1-based nearest rank `ceil(coverage * n)`, clamped to `[1, n]`.
///
/// A relative slack of 1e-9 absorbs representation error in `coverage * n`
/// (e.g. `0.7 * 10 = 7.000000000000001`).
pub fn nearest_rank(coverage: f64, n: usize) -> usize {
    let exact = coverage * n as f64;
    let k = (exact - 1e-9 * exact.max(1.0)).ceil() as usize;
    k.clamp(1, n)
}

/// Nearest-rank empirical quantile (no interpolation).
pub fn nearest_rank_quantile(values: &[f64], coverage: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[nearest_rank(coverage, sorted.len()) - 1]
}

/// Per-channel thresholds at the `coverage` nearest-rank quantile of the
/// manual-vs-reference residuals.
pub fn calibrate_thresholds(samples: &[CalibrationSample], coverage: f64) -> Result<Thresholds, CalibrationError> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(CalibrationError::InvalidCoverage(coverage));
    }
    if samples.len() < MIN_CALIBRATION_SAMPLES {
        return Err(CalibrationError::InsufficientData(samples.len()));
    }
    let residuals: Vec<Residuals> = samples
        .iter()
        .map(|s| Residuals::between(&s.reference, &s.manual))
        .collect();
    let pick = |channel: &'static str, f: fn(&Residuals) -> f64| {
        let values: Vec<f64> = residuals.iter().map(f).collect();
        let q = nearest_rank_quantile(&values, coverage);
        if q > 0.0 {
            Ok(q)
        } else {
            Err(CalibrationError::DegenerateThreshold { channel, value: q })
        }
    };
    Ok(Thresholds {
        translation_m: pick("translation", |r| r.translation_m)?,
        rotation_rad: pick("rotation", |r| r.rotation_rad)?,
        scale_deficit: pick("scale", |r| r.scale_deficit)?,
    })
}

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("frame count mismatch: model has {model}, corrected has {corrected}")]
    FrameCount { model: usize, corrected: usize },
    #[error("timestamp mismatch at frame {frame}: model {model}, corrected {corrected}")]
    Timestamp { frame: usize, model: i64, corrected: i64 },
}

/// Compare a model-generated scene against its human-corrected version.
/// The corrected scene acts as ground truth.
pub fn diff_versions(
    model: &Scene,
    corrected: &Scene,
    th: &Thresholds,
    gate_m: f64,
) -> Result<Vec<ErrorCounts>, DiffError> {
    if model.frames.len() != corrected.frames.len() {
        return Err(DiffError::FrameCount {
            model: model.frames.len(),
            corrected: corrected.frames.len(),
        });
    }
    model
        .frames
        .iter()
        .zip(&corrected.frames)
        .enumerate()
        .map(|(i, (m, c))| {
            if m.timestamp_us != c.timestamp_us {
                return Err(DiffError::Timestamp {
                    frame: i,
                    model: m.timestamp_us,
                    corrected: c.timestamp_us,
                });
            }
            let r = match_frame(&c.boxes, &m.boxes, gate_m);
            Ok(classify_frame(&r, &c.boxes, &m.boxes, th))
        })
        .collect()
}
