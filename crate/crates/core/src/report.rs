//! Report documents and their JSON / CSV renderings.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::Scene;
use crate::ap::{mean_ap, ApSummary};
use crate::car::{align_scenes, reports_from_tallies, tally_scenes, AlignmentError, CarReport, EvalSettings};
use crate::config::Config;
use crate::geometry::RangeBand;
use crate::taxonomy::{ErrorCounts, ErrorType};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reproducibility record embedded in every report.
///
/// `timestamp` is taken from the inputs (the latest `meta.created_at`), not
/// the wall clock, so identical inputs give identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub timestamp: String,
    pub config_digest: String,
    /// Input label (e.g. `gt/scene-0001.json`) to SHA-256 of the file bytes.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config, timestamp: impl Into<String>) -> Self {
        Self {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            timestamp: timestamp.into(),
            config_digest: sha256_hex(config.canonical_json().as_bytes()),
            inputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, label: impl Into<String>, bytes: &[u8]) {
        self.inputs.insert(label.into(), sha256_hex(bytes));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub manifest: RunManifest,
    pub config: Config,
    pub warnings: Vec<String>,
    pub car: Vec<CarReport>,
    pub ap: Vec<ApSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub manifest: RunManifest,
    pub config: Config,
    pub warnings: Vec<String>,
    pub scene_id: String,
    pub total: ErrorCounts,
    pub frames: Vec<ErrorCounts>,
}

/// CAR rows and AP rows for a set of scenes, plus non-fatal findings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub car: Vec<CarReport>,
    pub ap: Vec<ApSummary>,
    pub warnings: Vec<String>,
}

/// Align scenes by id and compute every CAR stratum and per-class AP.
///
/// Classes default to every ground-truth class. Without configured bands
/// the per-class rows span all ranges. AP rows are omitted, with a
/// warning, when some prediction has no score.
pub fn evaluate_scenes(gt: &[Scene], pred: &[Scene], cfg: &Config) -> Result<Evaluation, AlignmentError> {
    let pairs = align_scenes(gt, pred)?;
    let mut warnings = Vec::new();

    let classes: Vec<String> = if cfg.eval.classes.is_empty() {
        let present: BTreeSet<&str> = gt
            .iter()
            .flat_map(|s| s.frames.iter())
            .flat_map(|f| f.boxes.iter().map(|b| b.class_label.as_str()))
            .collect();
        present.into_iter().map(str::to_string).collect()
    } else {
        cfg.eval.classes.clone()
    };
    let all_ranges = [RangeBand::new(0.0, f64::INFINITY).expect("valid band")];
    let bands: &[RangeBand] = if cfg.eval.bands.is_empty() {
        &all_ranges
    } else {
        &cfg.eval.bands
    };
    let settings = EvalSettings {
        thresholds: &cfg.thresholds,
        table: &cfg.times,
        bands,
        classes: &classes,
        gate_m: cfg.matching.gate_m,
    };
    let mut car = reports_from_tallies(&tally_scenes(&pairs, &settings), &settings);
    if cfg.eval.bands.is_empty() {
        for row in &mut car {
            row.stratum.band = None;
        }
    }

    let gt_frames: Vec<&[_]> = pairs
        .iter()
        .flat_map(|(g, _)| g.frames.iter().map(|f| f.boxes.as_slice()))
        .collect();
    let pred_frames: Vec<&[_]> = pairs
        .iter()
        .flat_map(|(_, p)| p.frames.iter().map(|f| f.boxes.as_slice()))
        .collect();
    let ap: Result<Vec<ApSummary>, _> = classes
        .par_iter()
        .map(|c| mean_ap(&gt_frames, &pred_frames, c))
        .collect();
    let ap = match ap {
        Ok(rows) => {
            for r in rows.iter().filter(|r| r.no_ground_truth) {
                warnings.push(format!("class {:?} has no ground truth; AP reported as 0", r.class_label));
            }
            rows
        }
        Err(e) => {
            let msg = format!("AP skipped: {e}");
            log::warn!("{msg}");
            warnings.push(msg);
            Vec::new()
        }
    };
    Ok(Evaluation { car, ap, warnings })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// One row per CAR stratum. The aggregate row has class `all` and empty
/// band bounds.
pub fn write_car_csv<W: io::Write>(rows: &[CarReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["class", "band_min", "band_max", "n_gt", "n_matched"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(ErrorType::ALL.iter().map(|e| e.name().to_string()));
    header.extend(["C_s", "B_s", "car"].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for r in rows {
        let (lo, hi) = match &r.stratum.band {
            Some(b) => (b.min_m().to_string(), b.max_m().to_string()),
            None => (String::new(), String::new()),
        };
        let mut rec = vec![
            r.stratum.class_label.clone().unwrap_or_else(|| "all".into()),
            lo,
            hi,
            r.counts.n_gt.to_string(),
            r.counts.n_matched.to_string(),
        ];
        rec.extend(ErrorType::ALL.iter().map(|e| r.counts.get(*e).to_string()));
        rec.push(r.correction_s.to_string());
        rec.push(r.baseline_s.to_string());
        rec.push(r.car.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ap_csv<W: io::Write>(rows: &[ApSummary], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["class".to_string()];
    if let Some(first) = rows.first() {
        header.extend(first.per_threshold.iter().map(|(th, _)| format!("ap@{th}m")));
    }
    header.extend(["mean_ap".to_string(), "no_ground_truth".to_string()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.class_label.clone()];
        rec.extend(r.per_threshold.iter().map(|(_, ap)| ap.to_string()));
        rec.push(r.mean_ap.to_string());
        rec.push(r.no_ground_truth.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
