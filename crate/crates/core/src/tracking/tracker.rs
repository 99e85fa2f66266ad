use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::kalman::{predict, update, MeasurementNoise, ProcessNoise, TrackState};
use super::refine::{detect_stationary, enforce_size_consistency, smooth_trajectory};
use super::TrackError;
use crate::annotation::{Box3D, Frame, Scene};
use crate::geometry::{bev_center_distance, to_global, to_local};
use crate::matching::match_by;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Maximum BEV distance between a predicted track and a detection.
    pub association_gate_m: f64,
    /// A track is retired once it has gone unmatched for more than this
    /// many consecutive frames.
    pub max_misses: u32,
    /// Tracks with fewer associated detections are dropped from the output.
    pub min_hits: u32,
    pub stationary_disp_m: f64,
    pub smoothing_degree: usize,
    /// Prior variance of the velocity states of a newborn track.
    pub initial_velocity_var: f64,
    pub process_noise: ProcessNoise,
    pub measurement_noise: MeasurementNoise,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            association_gate_m: 3.0,
            max_misses: 3,
            min_hits: 2,
            stationary_disp_m: 0.5,
            smoothing_degree: 2,
            initial_velocity_var: 10.0,
            process_noise: ProcessNoise::default(),
            measurement_noise: MeasurementNoise::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        let positive = [
            ("association_gate_m", self.association_gate_m),
            ("stationary_disp_m", self.stationary_disp_m),
            ("initial_velocity_var", self.initial_velocity_var),
            ("process_noise.position", self.process_noise.position),
            ("process_noise.yaw", self.process_noise.yaw),
            ("process_noise.size", self.process_noise.size),
            ("process_noise.velocity", self.process_noise.velocity),
            ("measurement_noise.position", self.measurement_noise.position),
            ("measurement_noise.yaw", self.measurement_noise.yaw),
            ("measurement_noise.size", self.measurement_noise.size),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrackError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.max_misses == 0 {
            return Err(TrackError::Config("max_misses must be positive".into()));
        }
        if self.min_hits == 0 {
            return Err(TrackError::Config("min_hits must be positive".into()));
        }
        if self.smoothing_degree > 3 {
            return Err(TrackError::Config(format!(
                "smoothing_degree must be at most 3, got {}",
                self.smoothing_degree
            )));
        }
        Ok(())
    }
}

struct Track {
    state: TrackState,
    class_label: String,
    /// (frame index, posterior box in global coordinates)
    history: Vec<(usize, Box3D)>,
    /// History length at the most recent associated detection; predicted
    /// frames after it are not emitted.
    observed_len: usize,
    scores: Vec<f64>,
    birth: usize,
}

impl Track {
    fn record(&mut self, frame: usize, observed: bool) {
        self.history.push((frame, self.state.to_box(&self.class_label)));
        if observed {
            self.observed_len = self.history.len();
        }
    }
}

fn with_frame(err: TrackError, frame: usize) -> TrackError {
    match err {
        TrackError::Numerical { track_id, reason, .. } => TrackError::Numerical {
            track_id,
            frame: Some(frame),
            reason,
        },
        other => other,
    }
}

/// Run the tracker over one scene of detections and return refined
/// annotations with stable `instance_id`s (`trk-0001`, ...).
///
/// Boxes are moved into the scene-global frame with each frame's ego pose
/// before association and mapped back afterwards. Association is per
/// class. Output frames keep the input timestamps and poses.
pub fn track_scene(scene: &Scene, cfg: &TrackerConfig) -> Result<Scene, TrackError> {
    cfg.validate()?;
    for (i, w) in scene.frames.windows(2).enumerate() {
        if w[1].timestamp_us <= w[0].timestamp_us {
            return Err(TrackError::Precondition(format!(
                "frame {} timestamp {} does not follow {}",
                i + 1,
                w[1].timestamp_us,
                w[0].timestamp_us
            )));
        }
    }

    let mut live: Vec<Track> = Vec::new();
    let mut finished: Vec<Track> = Vec::new();
    let mut next_birth = 0usize;

    for (fi, frame) in scene.frames.iter().enumerate() {
        if fi > 0 {
            let dt = (frame.timestamp_us - scene.frames[fi - 1].timestamp_us) as f64 * 1e-6;
            for t in &mut live {
                t.state = predict(&t.state, dt, &cfg.process_noise).map_err(|e| with_frame(e, fi))?;
                t.state.age += 1;
            }
        }

        let pose = frame.pose();
        let dets: Vec<Box3D> = frame.boxes.iter().map(|b| to_global(b, &pose)).collect();
        let classes: BTreeSet<String> = live
            .iter()
            .map(|t| t.class_label.clone())
            .chain(dets.iter().map(|d| d.class_label.clone()))
            .collect();

        let mut observed = vec![false; live.len()];
        let mut spawned: Vec<Track> = Vec::new();
        for class in &classes {
            let tracks: Vec<usize> = (0..live.len()).filter(|&i| live[i].class_label == *class).collect();
            let cand: Vec<usize> = (0..dets.len()).filter(|&j| dets[j].class_label == *class).collect();
            let m = match_by(tracks.len(), cand.len(), cfg.association_gate_m, |a, b| {
                let predicted = live[tracks[a]].state.to_box(class);
                bev_center_distance(&predicted, &dets[cand[b]])
            });
            for pair in &m.pairs {
                let (ti, det) = (tracks[pair.gt], &dets[cand[pair.pred]]);
                let t = &mut live[ti];
                t.state = update(&t.state, det, &cfg.measurement_noise).map_err(|e| with_frame(e, fi))?;
                t.scores.extend(det.score);
                observed[ti] = true;
            }
            for &j in &m.unmatched_pred {
                let det = &dets[cand[j]];
                let state = TrackState::from_observation(
                    det,
                    format!("tentative-{next_birth}"),
                    &cfg.measurement_noise,
                    cfg.initial_velocity_var,
                );
                spawned.push(Track {
                    state,
                    class_label: class.clone(),
                    history: Vec::new(),
                    observed_len: 0,
                    scores: det.score.into_iter().collect(),
                    birth: next_birth,
                });
                next_birth += 1;
            }
        }

        for (t, obs) in live.iter_mut().zip(&observed) {
            if !obs {
                t.state.misses += 1;
            }
            t.record(fi, *obs);
        }
        for mut t in spawned {
            t.record(fi, true);
            live.push(t);
        }

        let (keep, retire): (Vec<Track>, Vec<Track>) =
            live.into_iter().partition(|t| t.state.misses <= cfg.max_misses);
        live = keep;
        finished.extend(retire);
    }
    finished.extend(live);

    let mut confirmed: Vec<Track> = finished
        .into_iter()
        .filter(|t| t.state.hits >= cfg.min_hits)
        .collect();
    confirmed.sort_by_key(|t| (t.history[0].0, t.birth));

    let mut frames: Vec<Frame> = scene
        .frames
        .iter()
        .map(|f| Frame {
            timestamp_us: f.timestamp_us,
            ego_pose: f.ego_pose,
            boxes: Vec::new(),
        })
        .collect();

    for (k, mut t) in confirmed.into_iter().enumerate() {
        let id = format!("trk-{:04}", k + 1);
        t.history.truncate(t.observed_len);
        let idx: Vec<usize> = t.history.iter().map(|h| h.0).collect();
        let boxes: Vec<Box3D> = t.history.into_iter().map(|h| h.1).collect();
        let refined = refine_track(&boxes, &idx, scene, cfg).map_err(|e| match e {
            TrackError::DegenerateFit(msg) => TrackError::DegenerateFit(format!("track {id}: {msg}")),
            other => other,
        })?;
        let score = (!t.scores.is_empty()).then(|| t.scores.iter().sum::<f64>() / t.scores.len() as f64);
        for (fi, b) in idx.into_iter().zip(refined) {
            let mut out = to_local(&b, &frames[fi].pose());
            out.score = score;
            out.instance_id = Some(id.clone());
            frames[fi].boxes.push(out);
        }
    }
    // Ids are allocated in increasing order, so push order is already sorted.

    let mut meta = scene.meta.clone();
    meta.producer = format!("{}+mot", meta.producer);
    Ok(Scene {
        scene_id: scene.scene_id.clone(),
        meta,
        frames,
    })
}

/// Size consistency, then stationary pinning, then smoothing of the
/// non-stationary tracks. Short tracks are smoothed at a reduced degree.
fn refine_track(boxes: &[Box3D], frame_idx: &[usize], scene: &Scene, cfg: &TrackerConfig) -> Result<Vec<Box3D>, TrackError> {
    let mut out = enforce_size_consistency(boxes);
    if out.len() < 2 {
        return Ok(out);
    }
    if detect_stationary(&mut out, cfg.stationary_disp_m)? {
        return Ok(out);
    }
    let t0 = scene.frames[frame_idx[0]].timestamp_us;
    let times: Vec<f64> = frame_idx
        .iter()
        .map(|&fi| (scene.frames[fi].timestamp_us - t0) as f64 * 1e-6)
        .collect();
    let degree = cfg.smoothing_degree.min(out.len() - 1);
    smooth_trajectory(&out, &times, degree)
}
