//! Run configuration.
//!
//! The file is TOML read as a flat set of dotted keys: `thresholds.rotation_rad = 0.2`
//! and a `[thresholds]` table with `rotation_rad = 0.2` are equivalent. Every
//! key must be one of the known names below; anything else is rejected so a
//! typo in a time table cannot silently fall back to a default.
//!
//! | key | value |
//! |---|---|
//! | `thresholds.translation_m`, `thresholds.rotation_rad`, `thresholds.scale_deficit` | float |
//! | `times.fn`, `times.fp`, `times.cls`, `times.t`, `times.r`, `times.s`, `times.tr`, `times.rs`, `times.ts`, `times.trs`, `times.create` | seconds |
//! | `times.overrides` | array of `{ class, band = [min, max], table = { fn = .., .. } }` |
//! | `matching.gate_m` | meters |
//! | `eval.classes` | array of strings |
//! | `eval.bands` | array of `[min_m, max_m]` |
//! | `tracker.association_gate_m`, `tracker.stationary_disp_m`, `tracker.initial_velocity_var` | float |
//! | `tracker.max_misses`, `tracker.min_hits`, `tracker.smoothing_degree` | integer |
//! | `tracker.process_noise.{position,yaw,size,velocity}` | variance per second |
//! | `tracker.measurement_noise.{position,yaw,size}` | variance |

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::car::{CorrectionTimeTable, TimeOverride};
use crate::geometry::RangeBand;
use crate::matching::DEFAULT_GATE_M;
use crate::taxonomy::{ErrorType, Thresholds};
use crate::tracking::TrackerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key:?}: {message}")]
    Value { key: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingConfig {
    pub gate_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Classes reported per stratum. Empty means every ground-truth class.
    pub classes: Vec<String>,
    pub bands: Vec<RangeBand>,
}

/// The effective configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub thresholds: Thresholds,
    pub times: CorrectionTimeTable,
    pub matching: MatchingConfig,
    pub eval: EvalConfig,
    pub tracker: TrackerConfig,
    /// True when no threshold key was given, i.e. the thresholds are the
    /// uncalibrated placeholders.
    #[serde(skip)]
    pub default_thresholds: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            times: CorrectionTimeTable::default(),
            matching: MatchingConfig { gate_m: DEFAULT_GATE_M },
            eval: EvalConfig::default(),
            tracker: TrackerConfig::default(),
            default_thresholds: true,
        }
    }
}

fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            leaf => {
                out.insert(key, leaf);
            }
        }
    }
}

fn value_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        message: message.into(),
    }
}

fn float(key: &str, v: &toml::Value) -> Result<f64, ConfigError> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(value_err(key, format!("expected a number, got {}", other.type_str()))),
    }
}

fn integer<T: TryFrom<i64>>(key: &str, v: &toml::Value) -> Result<T, ConfigError> {
    match v {
        toml::Value::Integer(i) => T::try_from(*i).map_err(|_| value_err(key, format!("{i} is out of range"))),
        other => Err(value_err(key, format!("expected an integer, got {}", other.type_str()))),
    }
}

fn typed<T: serde::de::DeserializeOwned>(key: &str, v: toml::Value) -> Result<T, ConfigError> {
    v.try_into().map_err(|e: toml::de::Error| value_err(key, e.message().to_string()))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", table, &mut flat);

        let mut cfg = Config::default();
        for (key, v) in flat {
            let k = key.as_str();
            match k {
                "thresholds.translation_m" => cfg.thresholds.translation_m = float(k, &v)?,
                "thresholds.rotation_rad" => cfg.thresholds.rotation_rad = float(k, &v)?,
                "thresholds.scale_deficit" => cfg.thresholds.scale_deficit = float(k, &v)?,
                "times.create" => cfg.times.t_create = float(k, &v)?,
                "times.overrides" => cfg.times.overrides = typed::<Vec<TimeOverride>>(k, v)?,
                "matching.gate_m" => cfg.matching.gate_m = float(k, &v)?,
                "eval.classes" => cfg.eval.classes = typed(k, v)?,
                "eval.bands" => cfg.eval.bands = typed(k, v)?,
                "tracker.association_gate_m" => cfg.tracker.association_gate_m = float(k, &v)?,
                "tracker.stationary_disp_m" => cfg.tracker.stationary_disp_m = float(k, &v)?,
                "tracker.initial_velocity_var" => cfg.tracker.initial_velocity_var = float(k, &v)?,
                "tracker.max_misses" => cfg.tracker.max_misses = integer(k, &v)?,
                "tracker.min_hits" => cfg.tracker.min_hits = integer(k, &v)?,
                "tracker.smoothing_degree" => cfg.tracker.smoothing_degree = integer(k, &v)?,
                "tracker.process_noise.position" => cfg.tracker.process_noise.position = float(k, &v)?,
                "tracker.process_noise.yaw" => cfg.tracker.process_noise.yaw = float(k, &v)?,
                "tracker.process_noise.size" => cfg.tracker.process_noise.size = float(k, &v)?,
                "tracker.process_noise.velocity" => cfg.tracker.process_noise.velocity = float(k, &v)?,
                "tracker.measurement_noise.position" => cfg.tracker.measurement_noise.position = float(k, &v)?,
                "tracker.measurement_noise.yaw" => cfg.tracker.measurement_noise.yaw = float(k, &v)?,
                "tracker.measurement_noise.size" => cfg.tracker.measurement_noise.size = float(k, &v)?,
                _ => {
                    let e = k
                        .strip_prefix("times.")
                        .filter(|name| name.chars().all(|c| c.is_ascii_lowercase()))
                        .and_then(|name| name.parse::<ErrorType>().ok())
                        .ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
                    cfg.times.set_time(e, float(k, &v)?);
                }
            }
            if k.starts_with("thresholds.") {
                cfg.default_thresholds = false;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.thresholds
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.times.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.tracker.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.matching.gate_m > 0.0 && self.matching.gate_m.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "matching.gate_m must be positive, got {}",
                self.matching.gate_m
            )));
        }
        Ok(())
    }

    /// Canonical JSON of the effective configuration; digested into run
    /// manifests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// A config fragment holding only the thresholds, as written by calibration.
pub fn thresholds_fragment(th: &Thresholds) -> String {
    format!(
        "thresholds.translation_m = {:?}\nthresholds.rotation_rad = {:?}\nthresholds.scale_deficit = {:?}\n",
        th.translation_m, th.rotation_rad, th.scale_deficit
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg, Config::default());
        assert!(cfg.default_thresholds);
    }

    #[test]
    fn dotted_and_table_forms_agree() {
        let a = Config::parse("thresholds.translation_m = 0.3\ntimes.fn = 30\ntracker.process_noise.yaw = 0.02\n").unwrap();
        let b = Config::parse("[thresholds]\ntranslation_m = 0.3\n[times]\nfn = 30.0\n[tracker.process_noise]\nyaw = 0.02\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.thresholds.translation_m, 0.3);
        assert_eq!(a.times.time(ErrorType::FN), 30.0);
        assert!(!a.default_thresholds);
    }

    #[test]
    fn every_time_key() {
        let text = "times.fn = 1\ntimes.fp = 2\ntimes.cls = 3\ntimes.t = 4\ntimes.r = 5\ntimes.s = 6\ntimes.tr = 7\ntimes.rs = 8\ntimes.ts = 9\ntimes.trs = 10\ntimes.create = 11\n";
        let cfg = Config::parse(text).unwrap();
        let got: Vec<f64> = ["FN", "FP", "CLS", "T", "R", "S", "TR", "RS", "TS", "TRS"]
            .iter()
            .map(|n| cfg.times.time(n.parse().unwrap()))
            .collect();
        assert_eq!(got, (1..=10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(cfg.times.t_create, 11.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["times.fnn = 3", "threshold.translation_m = 1", "times.FN = 2", "tracker.gate = 1", "extra = 1"] {
            assert!(matches!(Config::parse(text), Err(ConfigError::UnknownKey(_))), "{text}");
        }
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(matches!(Config::parse("times.fn = \"x\""), Err(ConfigError::Value { .. })));
        assert!(matches!(Config::parse("times.fn = -1"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::parse("tracker.min_hits = -1"), Err(ConfigError::Value { .. })));
        assert!(matches!(Config::parse("tracker.smoothing_degree = 5"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::parse("matching.gate_m = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::parse("eval.bands = [[30, 10]]"), Err(ConfigError::Value { .. })));
        assert!(matches!(Config::parse("= 1"), Err(ConfigError::Syntax(_))));
    }

    #[test]
    fn eval_and_overrides() {
        let text = r#"
eval.classes = ["car", "pedestrian"]
eval.bands = [[0, 30], [30, 50]]

[[times.overrides]]
class = "car"
band = [0, 30]
table = { fn = 20, fp = 1, cls = 1, t = 5, r = 5, s = 5, tr = 9, rs = 9, ts = 9, trs = 12, create = 20 }
"#;
        let cfg = Config::parse(text).unwrap();
        assert_eq!(cfg.eval.classes, ["car", "pedestrian"]);
        assert_eq!(cfg.eval.bands[1], RangeBand::new(30.0, 50.0).unwrap());
        let band = RangeBand::new(0.0, 30.0).unwrap();
        assert_eq!(cfg.times.for_stratum("car", Some(&band)).t_create, 20.0);
        assert_eq!(cfg.times.for_stratum("pedestrian", Some(&band)).t_create, 23.0);
    }

    #[test]
    fn fragment_round_trips() {
        let th = Thresholds::new(0.123456789, 0.2, 1e-7).unwrap();
        let cfg = Config::parse(&thresholds_fragment(&th)).unwrap();
        assert_eq!(cfg.thresholds, th);
    }

    #[test]
    fn canonical_json_is_stable() {
        let a = Config::parse("times.fn = 30\nthresholds.translation_m = 0.4").unwrap();
        let b = Config::parse("thresholds.translation_m = 0.4\ntimes.fn = 30.0").unwrap();
        assert_eq!(a.canonical_json(), b.canonical_json());
        assert_ne!(a.canonical_json(), Config::default().canonical_json());
    }
}
