//! Correction Acceleration Ratio.
//!
//! `C = sum_e t_e * n_e` is the modeled time to fix every pre-annotation
//! error, `B = t_create * n_gt` the time to annotate from scratch, and
//! `CAR = 1 - C / B`. A CAR of 1 means nothing needed fixing; negative
//! values mean correcting the model output is slower than starting over.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{Box3D, Scene};
use crate::geometry::{in_range, RangeBand};
use crate::matching::{match_frame, MatchResult};
use crate::taxonomy::{classify_frame, classify_pair, ErrorCounts, ErrorType, Thresholds};

/// Average correction time per error type plus the per-annotation creation time.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionTimeTable {
    times: [f64; 10],
    pub t_create: f64,
    /// Replacement tables for specific (class, band) strata.
    pub overrides: Vec<TimeOverride>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeOverride {
    #[serde(rename = "class")]
    pub class_label: String,
    pub band: RangeBand,
    pub table: CorrectionTimeTable,
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid time table: {0}")]
pub struct TimeTableError(pub String);

impl CorrectionTimeTable {
    pub fn new(times: impl IntoIterator<Item = (ErrorType, f64)>, t_create: f64) -> Result<Self, TimeTableError> {
        let mut arr = [f64::NAN; 10];
        for (e, t) in times {
            arr[e.index()] = t;
        }
        let table = Self {
            times: arr,
            t_create,
            overrides: Vec::new(),
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), TimeTableError> {
        for e in ErrorType::ALL {
            let t = self.time(e);
            if t.is_nan() {
                return Err(TimeTableError(format!("missing time for {e}")));
            }
            if !(t > 0.0 && t.is_finite()) {
                return Err(TimeTableError(format!("time for {e} must be > 0, got {t}")));
            }
        }
        if !(self.t_create > 0.0 && self.t_create.is_finite()) {
            return Err(TimeTableError(format!("t_create must be > 0, got {}", self.t_create)));
        }
        for o in &self.overrides {
            o.table.validate()?;
        }
        Ok(())
    }

    pub fn time(&self, e: ErrorType) -> f64 {
        self.times[e.index()]
    }

    pub fn set_time(&mut self, e: ErrorType, t: f64) {
        self.times[e.index()] = t;
    }

    /// Every time (including `t_create`) multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.times {
            *t *= k;
        }
        out.t_create *= k;
        for o in &mut out.overrides {
            o.table = o.table.scaled(k);
        }
        out
    }

    /// Table that applies to a stratum, honoring overrides.
    pub fn for_stratum(&self, class_label: &str, band: Option<&RangeBand>) -> &CorrectionTimeTable {
        band.and_then(|b| {
            self.overrides
                .iter()
                .find(|o| o.class_label == class_label && o.band == *b)
                .map(|o| &o.table)
        })
        .unwrap_or(self)
    }
}

impl Default for CorrectionTimeTable {
    /// FN at 23 s, FP and CLS at 1.5 s; positional types spread across 5-16 s.
    /// `t_create` equals the FN time.
    fn default() -> Self {
        use ErrorType::*;
        Self {
            times: {
                let mut t = [0.0; 10];
                for (e, v) in [
                    (FP, 1.5),
                    (FN, 23.0),
                    (T, 8.0),
                    (R, 6.0),
                    (S, 5.0),
                    (CLS, 1.5),
                    (TR, 11.0),
                    (RS, 9.0),
                    (TS, 10.0),
                    (TRS, 16.0),
                ] {
                    t[e.index()] = v;
                }
                t
            },
            t_create: 23.0,
            overrides: Vec::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    #[serde(rename = "fn")]
    fn_: f64,
    fp: f64,
    cls: f64,
    t: f64,
    r: f64,
    s: f64,
    tr: f64,
    rs: f64,
    ts: f64,
    trs: f64,
    create: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    overrides: Vec<TimeOverride>,
}

impl Serialize for CorrectionTimeTable {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use ErrorType::*;
        TableRepr {
            fn_: self.time(FN),
            fp: self.time(FP),
            cls: self.time(CLS),
            t: self.time(T),
            r: self.time(R),
            s: self.time(S),
            tr: self.time(TR),
            rs: self.time(RS),
            ts: self.time(TS),
            trs: self.time(TRS),
            create: self.t_create,
            overrides: self.overrides.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CorrectionTimeTable {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use ErrorType::*;
        let r = TableRepr::deserialize(deserializer)?;
        let mut table = CorrectionTimeTable::new(
            [
                (FN, r.fn_),
                (FP, r.fp),
                (CLS, r.cls),
                (T, r.t),
                (R, r.r),
                (S, r.s),
                (TR, r.tr),
                (RS, r.rs),
                (TS, r.ts),
                (TRS, r.trs),
            ],
            r.create,
        )
        .map_err(serde::de::Error::custom)?;
        table.overrides = r.overrides;
        Ok(table)
    }
}

/// `C = sum over error types of t_e * n_e`, in seconds.
pub fn correction_time(counts: &ErrorCounts, table: &CorrectionTimeTable) -> f64 {
    counts.iter().map(|(e, n)| table.time(e) * n as f64).sum()
}

/// `B = t_create * n_gt`, in seconds.
pub fn baseline_time(n_gt: u64, table: &CorrectionTimeTable) -> f64 {
    table.t_create * n_gt as f64
}

/// A CAR value, or the marker for `B = 0, C > 0` where the ratio is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CarValue {
    Defined(f64),
    Undefined,
}

impl CarValue {
    pub fn value(self) -> Option<f64> {
        match self {
            CarValue::Defined(v) => Some(v),
            CarValue::Undefined => None,
        }
    }
}

impl fmt::Display for CarValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CarValue::Defined(v) => write!(f, "{v}"),
            CarValue::Undefined => f.write_str("n/a"),
        }
    }
}

impl Serialize for CarValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            CarValue::Defined(v) => serializer.serialize_f64(*v),
            CarValue::Undefined => serializer.serialize_str("n/a"),
        }
    }
}

impl<'de> Deserialize<'de> for CarValue {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Ok(CarValue::Defined(v)),
            Repr::Text(s) if s == "n/a" => Ok(CarValue::Undefined),
            Repr::Text(s) => Err(serde::de::Error::custom(format!("invalid CAR value {s:?}"))),
        }
    }
}

/// `1 - C/B`. With `B = 0` the result is 1 when nothing needs fixing and
/// undefined otherwise.
pub fn car(correction_s: f64, baseline_s: f64) -> CarValue {
    if baseline_s > 0.0 {
        CarValue::Defined(1.0 - correction_s / baseline_s)
    } else if correction_s == 0.0 {
        CarValue::Defined(1.0)
    } else {
        CarValue::Undefined
    }
}

/// One evaluation stratum. `None` means "all".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    #[serde(rename = "class")]
    pub class_label: Option<String>,
    pub band: Option<RangeBand>,
}

impl Stratum {
    pub fn all() -> Self {
        Self {
            class_label: None,
            band: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarReport {
    pub stratum: Stratum,
    pub counts: ErrorCounts,
    pub correction_s: f64,
    pub baseline_s: f64,
    pub car: CarValue,
}

impl CarReport {
    /// Strata without ground truth report `n/a`.
    pub fn from_counts(stratum: Stratum, counts: ErrorCounts, table: &CorrectionTimeTable) -> Self {
        let table = table.for_stratum(stratum.class_label.as_deref().unwrap_or(""), stratum.band.as_ref());
        let c = correction_time(&counts, table);
        let b = baseline_time(counts.n_gt, table);
        let car = if counts.n_gt == 0 { CarValue::Undefined } else { car(c, b) };
        Self {
            stratum,
            counts,
            correction_s: c,
            baseline_s: b,
            car,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("scene {0:?} has no prediction counterpart")]
    MissingPrediction(String),
    #[error("prediction scene {0:?} has no ground-truth counterpart")]
    UnexpectedPrediction(String),
    #[error("scene {0:?} appears more than once")]
    DuplicateScene(String),
    #[error("scene {scene:?}: ground truth has {gt} frames, prediction has {pred}")]
    FrameCount { scene: String, gt: usize, pred: usize },
    #[error("scene {scene:?} frame {frame}: timestamps differ ({gt} vs {pred})")]
    Timestamp {
        scene: String,
        frame: usize,
        gt: i64,
        pred: i64,
    },
}

/// Pair each ground-truth scene with the prediction of the same id.
pub fn align_scenes<'a>(gt: &'a [Scene], pred: &'a [Scene]) -> Result<Vec<(&'a Scene, &'a Scene)>, AlignmentError> {
    let mut by_id: HashMap<&str, &Scene> = HashMap::new();
    for p in pred {
        if by_id.insert(p.scene_id.as_str(), p).is_some() {
            return Err(AlignmentError::DuplicateScene(p.scene_id.clone()));
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(gt.len());
    for g in gt {
        if !seen.insert(g.scene_id.as_str()) {
            return Err(AlignmentError::DuplicateScene(g.scene_id.clone()));
        }
        let p = by_id
            .remove(g.scene_id.as_str())
            .ok_or_else(|| AlignmentError::MissingPrediction(g.scene_id.clone()))?;
        if g.frames.len() != p.frames.len() {
            return Err(AlignmentError::FrameCount {
                scene: g.scene_id.clone(),
                gt: g.frames.len(),
                pred: p.frames.len(),
            });
        }
        for (i, (gf, pf)) in g.frames.iter().zip(&p.frames).enumerate() {
            if gf.timestamp_us != pf.timestamp_us {
                return Err(AlignmentError::Timestamp {
                    scene: g.scene_id.clone(),
                    frame: i,
                    gt: gf.timestamp_us,
                    pred: pf.timestamp_us,
                });
            }
        }
        out.push((g, p));
    }
    if let Some(extra) = pred.iter().find(|p| by_id.contains_key(p.scene_id.as_str())) {
        return Err(AlignmentError::UnexpectedPrediction(extra.scene_id.clone()));
    }
    Ok(out)
}

/// Evaluation settings shared by every stratum.
#[derive(Debug, Clone)]
pub struct EvalSettings<'a> {
    pub thresholds: &'a Thresholds,
    pub table: &'a CorrectionTimeTable,
    pub bands: &'a [RangeBand],
    pub classes: &'a [String],
    pub gate_m: f64,
}

/// Raw per-stratum tallies: `[class][band]` plus the unfiltered aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumTallies {
    pub by_class_band: Vec<ErrorCounts>,
    pub all: ErrorCounts,
}

impl StratumTallies {
    fn zeros(n: usize) -> Self {
        Self {
            by_class_band: vec![ErrorCounts::default(); n],
            all: ErrorCounts::default(),
        }
    }

    fn merge(mut self, other: &StratumTallies) -> Self {
        for (a, b) in self.by_class_band.iter_mut().zip(&other.by_class_band) {
            *a += *b;
        }
        self.all += other.all;
        self
    }
}

/// Tally one frame into every stratum.
///
/// For each band the in-band boxes are matched once, class-agnostically.
/// A matched pair and an unmatched ground truth count toward the ground
/// truth's class; an unmatched prediction counts as FP toward its own class.
/// Out-of-band predictions are dropped without penalty.
pub fn tally_frame(gt: &[Box3D], pred: &[Box3D], s: &EvalSettings<'_>, out: &mut StratumTallies) {
    let m = match_frame(gt, pred, s.gate_m);
    out.all += classify_frame(&m, gt, pred, s.thresholds);

    let n_bands = s.bands.len();
    let class_idx = |label: &str| s.classes.iter().position(|c| c == label);
    for (bi, band) in s.bands.iter().enumerate() {
        let gi: Vec<usize> = (0..gt.len()).filter(|&i| in_range(&gt[i], band, None)).collect();
        let pi: Vec<usize> = (0..pred.len()).filter(|&i| in_range(&pred[i], band, None)).collect();
        let gsub: Vec<Box3D> = gi.iter().map(|&i| gt[i].clone()).collect();
        let psub: Vec<Box3D> = pi.iter().map(|&i| pred[i].clone()).collect();
        let m: MatchResult = match_frame(&gsub, &psub, s.gate_m);

        let slot = |label: &str| class_idx(label).map(|c| c * n_bands + bi);
        for g in &gsub {
            if let Some(k) = slot(&g.class_label) {
                out.by_class_band[k].n_gt += 1;
            }
        }
        for &g in &m.unmatched_gt {
            if let Some(k) = slot(&gsub[g].class_label) {
                out.by_class_band[k].bump(ErrorType::FN);
            }
        }
        for &p in &m.unmatched_pred {
            if let Some(k) = slot(&psub[p].class_label) {
                out.by_class_band[k].bump(ErrorType::FP);
            }
        }
        for pair in &m.pairs {
            let g = &gsub[pair.gt];
            if let Some(k) = slot(&g.class_label) {
                let c = &mut out.by_class_band[k];
                c.n_matched += 1;
                let e = classify_pair(g, &psub[pair.pred], s.thresholds);
                if let Some(pos) = e.positional {
                    c.bump(pos);
                }
                if e.cls_error {
                    c.bump(ErrorType::CLS);
                }
            }
        }
    }
}

/// Tally all frames of all aligned scenes. Scenes are processed on the
/// current rayon pool; the reduction is order-independent.
pub fn tally_scenes(pairs: &[(&Scene, &Scene)], s: &EvalSettings<'_>) -> StratumTallies {
    let n = s.classes.len() * s.bands.len();
    let per_scene: Vec<StratumTallies> = pairs
        .par_iter()
        .map(|(g, p)| {
            let mut t = StratumTallies::zeros(n);
            for (gf, pf) in g.frames.iter().zip(&p.frames) {
                tally_frame(&gf.boxes, &pf.boxes, s, &mut t);
            }
            t
        })
        .collect();
    per_scene.iter().fold(StratumTallies::zeros(n), StratumTallies::merge)
}

/// Turn tallies into report rows ordered by class, then band, then the
/// all-classes/all-ranges aggregate.
pub fn reports_from_tallies(t: &StratumTallies, s: &EvalSettings<'_>) -> Vec<CarReport> {
    let mut rows = Vec::with_capacity(t.by_class_band.len() + 1);
    for (ci, class) in s.classes.iter().enumerate() {
        for (bi, band) in s.bands.iter().enumerate() {
            rows.push(CarReport::from_counts(
                Stratum {
                    class_label: Some(class.clone()),
                    band: Some(*band),
                },
                t.by_class_band[ci * s.bands.len() + bi],
                s.table,
            ));
        }
    }
    rows.push(CarReport::from_counts(Stratum::all(), t.all, s.table));
    rows
}

pub fn evaluate(gt: &[Scene], pred: &[Scene], s: &EvalSettings<'_>) -> Result<Vec<CarReport>, AlignmentError> {
    let pairs = align_scenes(gt, pred)?;
    Ok(reports_from_tallies(&tally_scenes(&pairs, s), s))
}
