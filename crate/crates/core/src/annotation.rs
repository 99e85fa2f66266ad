//! Annotation data model and its JSON file format.
//!
//! A [`Scene`] is an ordered list of timestamped [`Frame`]s, each holding
//! oriented 3D boxes. The on-disk layout is documented in `docs/format.md`;
//! keys are emitted in struct-field order and floats use the shortest
//! round-trip decimal form, so `load_scene(save_scene(s)) == s` bit for bit.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Oriented 3D bounding box.
///
/// Coordinates are right-handed, z-up, meters. `yaw` is measured
/// counterclockwise from +x and lies in (-pi, pi].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Box3D {
    pub center: [f64; 3],
    /// (length, width, height)
    pub size: [f64; 3],
    pub yaw: f64,
    #[serde(rename = "class")]
    pub class_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64, class_label: impl Into<String>) -> Self {
        Self {
            center,
            size,
            yaw,
            class_label: class_label.into(),
            score: None,
            instance_id: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_instance_id(mut self, id: impl Into<String>) -> Self {
        self.instance_id = Some(id.into());
        self
    }
}

/// Rigid transform from frame coordinates to the scene-global frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoPose {
    pub translation: [f64; 3],
    pub yaw: f64,
}

impl EgoPose {
    pub const IDENTITY: EgoPose = EgoPose {
        translation: [0.0; 3],
        yaw: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub timestamp_us: i64,
    /// Absent means identity (static ego).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego_pose: Option<EgoPose>,
    pub boxes: Vec<Box3D>,
}

impl Frame {
    pub fn new(timestamp_us: i64, boxes: Vec<Box3D>) -> Self {
        Self {
            timestamp_us,
            ego_pose: None,
            boxes,
        }
    }

    pub fn pose(&self) -> EgoPose {
        self.ego_pose.unwrap_or(EgoPose::IDENTITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    ModelGenerated,
    HumanCorrected,
    GroundTruth,
}

/// Provenance of the annotations stored in a scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineMetaData {
    pub origin: Origin,
    pub producer: String,
    /// RFC 3339 timestamp string.
    pub created_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub scene_id: String,
    pub meta: PipelineMetaData,
    pub frames: Vec<Frame>,
}

impl Scene {
    pub fn box_count(&self) -> usize {
        self.frames.iter().map(|f| f.boxes.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    EmptySceneId,
    NoFrames,
    NonMonotoneTimestamp,
    DupInstance,
    NonpositiveSize,
    YawOutOfRange,
    ScoreOutOfRange,
    NonFinite,
    EmptyClass,
    CorrectedByMismatch,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::EmptySceneId => "EMPTY_SCENE_ID",
            ViolationCode::NoFrames => "NO_FRAMES",
            ViolationCode::NonMonotoneTimestamp => "NONMONOTONE_TIMESTAMP",
            ViolationCode::DupInstance => "DUP_INSTANCE",
            ViolationCode::NonpositiveSize => "NONPOSITIVE_SIZE",
            ViolationCode::YawOutOfRange => "YAW_OUT_OF_RANGE",
            ViolationCode::ScoreOutOfRange => "SCORE_OUT_OF_RANGE",
            ViolationCode::NonFinite => "NON_FINITE",
            ViolationCode::EmptyClass => "EMPTY_CLASS",
            ViolationCode::CorrectedByMismatch => "CORRECTED_BY_MISMATCH",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single broken invariant. `location` is a JSON pointer into the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.code, self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("schema error in {path} at {pointer}: {message}")]
    Schema {
        path: String,
        pointer: String,
        message: String,
    },
    #[error("invariant violated in {path}: {}", .violations[0])]
    Invariant {
        path: String,
        violations: Vec<Violation>,
    },
}

#[derive(Debug, Error)]
#[error("cannot write {path}: {source}")]
pub struct SaveError {
    pub path: String,
    #[source]
    pub source: std::io::Error,
}

/// Parse a scene from JSON text. `origin` only labels error messages.
pub fn parse_scene(text: &str, origin: &str) -> Result<Scene, LoadError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|source| LoadError::Parse {
        path: origin.to_string(),
        source,
    })?;
    let scene: Scene = serde_path_to_error::deserialize(value).map_err(|err| LoadError::Schema {
        path: origin.to_string(),
        pointer: json_pointer(err.path()),
        message: err.inner().to_string(),
    })?;
    let violations = validate_scene(&scene);
    if !violations.is_empty() {
        return Err(LoadError::Invariant {
            path: origin.to_string(),
            violations,
        });
    }
    Ok(scene)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, LoadError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_scene(&text, &shown)
}

/// Serialize a scene to its canonical textual form (pretty JSON, trailing newline).
pub fn scene_to_string(scene: &Scene) -> String {
    let mut out = serde_json::to_string_pretty(scene).expect("scene serialization is infallible");
    out.push('\n');
    out
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<(), SaveError> {
    let path = path.as_ref();
    let wrap = |source| SaveError {
        path: path.display().to_string(),
        source,
    };
    let mut file = fs::File::create(path).map_err(wrap)?;
    file.write_all(scene_to_string(scene).as_bytes()).map_err(wrap)?;
    Ok(())
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

fn in_yaw_range(yaw: f64) -> bool {
    yaw > -PI && yaw <= PI
}

/// Check every type invariant; an empty result means the scene is valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, location: String, message: String| {
        out.push(Violation {
            code,
            location,
            message,
        })
    };

    if scene.scene_id.is_empty() {
        push(ViolationCode::EmptySceneId, "/scene_id".into(), "scene_id is empty".into());
    }
    let corrected = scene.meta.origin == Origin::HumanCorrected;
    if corrected != scene.meta.corrected_by.is_some() {
        push(
            ViolationCode::CorrectedByMismatch,
            "/meta/corrected_by".into(),
            "corrected_by must be present iff origin is human_corrected".into(),
        );
    }
    if scene.frames.is_empty() {
        push(ViolationCode::NoFrames, "/frames".into(), "scene has no frames".into());
    }

    let mut prev_ts: Option<i64> = None;
    for (fi, frame) in scene.frames.iter().enumerate() {
        if let Some(prev) = prev_ts {
            if frame.timestamp_us <= prev {
                push(
                    ViolationCode::NonMonotoneTimestamp,
                    format!("/frames/{fi}/timestamp_us"),
                    format!("timestamps not strictly increasing ({prev} then {})", frame.timestamp_us),
                );
            }
        }
        prev_ts = Some(frame.timestamp_us);

        if let Some(pose) = &frame.ego_pose {
            if !pose.translation.iter().all(|v| v.is_finite()) || !pose.yaw.is_finite() {
                push(
                    ViolationCode::NonFinite,
                    format!("/frames/{fi}/ego_pose"),
                    "ego pose has non-finite component".into(),
                );
            } else if !in_yaw_range(pose.yaw) {
                push(
                    ViolationCode::YawOutOfRange,
                    format!("/frames/{fi}/ego_pose/yaw"),
                    format!("yaw {} outside (-pi, pi]", pose.yaw),
                );
            }
        }

        let mut seen_ids = HashSet::new();
        for (bi, b) in frame.boxes.iter().enumerate() {
            let loc = format!("/frames/{fi}/boxes/{bi}");
            let finite = b.center.iter().chain(b.size.iter()).all(|v| v.is_finite())
                && b.yaw.is_finite()
                && b.score.is_none_or(f64::is_finite);
            if !finite {
                push(ViolationCode::NonFinite, loc.clone(), "box has non-finite component".into());
                continue;
            }
            if b.size.iter().any(|&s| s <= 0.0) {
                push(
                    ViolationCode::NonpositiveSize,
                    format!("{loc}/size"),
                    format!("size {:?} has a non-positive component", b.size),
                );
            }
            if !in_yaw_range(b.yaw) {
                push(
                    ViolationCode::YawOutOfRange,
                    format!("{loc}/yaw"),
                    format!("yaw {} outside (-pi, pi]", b.yaw),
                );
            }
            if let Some(score) = b.score {
                if !(0.0..=1.0).contains(&score) {
                    push(
                        ViolationCode::ScoreOutOfRange,
                        format!("{loc}/score"),
                        format!("score {score} outside [0, 1]"),
                    );
                }
            }
            if b.class_label.is_empty() {
                push(ViolationCode::EmptyClass, format!("{loc}/class"), "class is empty".into());
            }
            if let Some(id) = &b.instance_id {
                if !seen_ids.insert(id.as_str()) {
                    push(
                        ViolationCode::DupInstance,
                        format!("{loc}/instance_id"),
                        format!("instance_id {id:?} repeated within frame"),
                    );
                }
            }
        }
    }
    out
}
