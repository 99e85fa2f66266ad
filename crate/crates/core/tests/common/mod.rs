#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use annocar::annotation::{save_scene, Box3D, Frame, Origin, PipelineMetaData, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLASSES: [&str; 3] = ["car", "pedestrian", "bicycle"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn meta(origin: Origin) -> PipelineMetaData {
    PipelineMetaData {
        origin,
        producer: "fixtures".into(),
        created_at: "2024-05-01T10:00:00Z".into(),
        corrected_by: None,
    }
}

pub fn scene(id: &str, origin: Origin, frames: Vec<Frame>) -> Scene {
    Scene {
        scene_id: id.into(),
        meta: meta(origin),
        frames,
    }
}

pub fn random_box(r: &mut ChaCha8Rng, center: [f64; 2]) -> Box3D {
    let class = CLASSES[r.random_range(0..CLASSES.len())];
    let size = [r.random_range(0.6..5.0), r.random_range(0.6..2.2), r.random_range(1.0..2.0)];
    let yaw = r.random_range(-PI..PI);
    Box3D::new([center[0], center[1], 0.8], size, if yaw == -PI { PI } else { yaw }, class)
}

/// Boxes on a jittered 12 m lattice in front of the ego vehicle, so no two
/// centers come within twice the default gate of each other.
pub fn lattice_frame(r: &mut ChaCha8Rng, ts_us: i64, n: usize) -> Frame {
    let cols = 8;
    let boxes = (0..n)
        .map(|i| {
            let x = 6.0 + 12.0 * (i % cols) as f64 + r.random_range(-1.0..1.0);
            let y = -42.0 + 12.0 * (i / cols) as f64 + r.random_range(-1.0..1.0);
            random_box(r, [x, y])
        })
        .collect();
    Frame::new(ts_us, boxes)
}

pub fn lattice_scene(r: &mut ChaCha8Rng, id: &str, frames: usize, per_frame: usize) -> Scene {
    let frames = (0..frames)
        .map(|i| lattice_frame(r, i as i64 * 100_000, per_frame))
        .collect();
    scene(id, Origin::GroundTruth, frames)
}

/// Copy of `gt` as a scored prediction.
pub fn as_prediction(gt: &Scene, r: &mut ChaCha8Rng) -> Scene {
    let mut p = gt.clone();
    p.meta.origin = Origin::ModelGenerated;
    for f in &mut p.frames {
        for b in &mut f.boxes {
            b.score = Some(r.random_range(0.05..1.0));
        }
    }
    p
}

pub fn write_scenes(dir: &Path, scenes: &[Scene]) {
    std::fs::create_dir_all(dir).unwrap();
    for s in scenes {
        save_scene(s, dir.join(format!("{}.json", s.scene_id))).unwrap();
    }
}

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_annocar"));
    c.env_remove("RUST_LOG");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two cars passing each other in opposite lanes one meter apart.
pub fn crossing_scene(frames: usize, dt_s: f64, speed: f64) -> Scene {
    let half = speed * dt_s * (frames - 1) as f64 / 2.0;
    let frames = (0..frames)
        .map(|i| {
            let d = speed * dt_s * i as f64;
            Frame::new(
                (i as f64 * dt_s * 1e6).round() as i64,
                vec![
                    Box3D::new([20.0 - half + d, 0.0, 0.8], [4.5, 1.9, 1.6], 0.0, "car"),
                    Box3D::new([20.0 + half - d, 1.0, 0.8], [4.5, 1.9, 1.6], PI, "car"),
                ],
            )
        })
        .collect();
    scene("crossing", Origin::ModelGenerated, frames)
}

/// A detector-like prediction of `gt`: jittered boxes, about 10% misses,
/// a few false positives and class confusions, random scores.
pub fn noisy_prediction(gt: &Scene, r: &mut ChaCha8Rng) -> Scene {
    let mut p = gt.clone();
    p.meta.origin = Origin::ModelGenerated;
    for f in &mut p.frames {
        f.boxes.retain(|_| r.random::<f64>() > 0.1);
        for b in &mut f.boxes {
            b.center[0] += r.random_range(-0.8..0.8);
            b.center[1] += r.random_range(-0.8..0.8);
            b.yaw = annocar::geometry::wrap_angle(b.yaw + r.random_range(-0.3..0.3));
            for s in &mut b.size {
                *s *= r.random_range(0.8..1.2);
            }
            if r.random::<f64>() < 0.05 {
                b.class_label = CLASSES[r.random_range(0..CLASSES.len())].into();
            }
            b.score = Some(r.random_range(0.05..1.0));
        }
        for _ in 0..r.random_range(0..4) {
            let at = [r.random_range(0.0..100.0), r.random_range(-45.0..45.0)];
            let fp = random_box(r, at).with_score(r.random_range(0.0..0.5));
            f.boxes.push(fp);
        }
    }
    p
}
