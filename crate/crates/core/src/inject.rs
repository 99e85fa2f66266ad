//! Synthesis of pre-annotations with a known error composition.
//!
//! Starting from ground truth, victims are drawn with a seeded RNG and
//! perturbed so that matching and classifying the result against the same
//! ground truth yields exactly the requested [`ErrorCounts`].

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{Box3D, Origin, Scene};
use crate::geometry::{bev_center_distance, wrap_angle};
use crate::taxonomy::{ErrorCounts, ErrorType, Thresholds};

/// Explicit perturbation sizes. Unset fields are derived from the
/// thresholds and the gate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Magnitudes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_rad: Option<f64>,
    /// Per-axis size multipliers (length, width, height).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_factor: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    /// Requested count per error type for the whole scene.
    #[serde(default)]
    pub counts: BTreeMap<ErrorType, u64>,
    #[serde(default)]
    pub magnitudes: Magnitudes,
    #[serde(default)]
    pub rng_seed: u64,
}

impl InjectionSpec {
    pub fn count(&self, e: ErrorType) -> u64 {
        self.counts.get(&e).copied().unwrap_or(0)
    }

    /// The counts a classifier should report, with `n_gt` and `n_matched`
    /// filled in for a scene of `n_gt` ground-truth boxes.
    pub fn expected_counts(&self, n_gt: u64) -> ErrorCounts {
        let mut c = ErrorCounts::default();
        for e in ErrorType::ALL {
            c.set(e, self.count(e));
        }
        c.n_gt = n_gt;
        c.n_matched = n_gt.saturating_sub(self.count(ErrorType::FN));
        c
    }

    pub fn is_empty(&self) -> bool {
        self.counts.values().all(|&n| n == 0)
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("infeasible injection spec: {0}")]
pub struct InfeasibleSpec(pub String);

fn infeasible<T>(msg: impl Into<String>) -> Result<T, InfeasibleSpec> {
    Err(InfeasibleSpec(msg.into()))
}

/// Perturbations resolved against thresholds and gate.
#[derive(Debug, Clone, Copy)]
struct Resolved {
    translation_m: f64,
    rotation_rad: f64,
    scale_factor: [f64; 3],
}

fn resolve(m: &Magnitudes, th: &Thresholds, gate_m: f64, needs: (bool, bool, bool)) -> Result<Resolved, InfeasibleSpec> {
    let translation_m = match m.translation_m {
        Some(t) => t,
        None => (1.5 * th.translation_m).min(0.5 * (th.translation_m + gate_m)),
    };
    if needs.0 && !(translation_m > th.translation_m && translation_m <= gate_m) {
        return infeasible(format!(
            "translation offset {translation_m} m must exceed the threshold {} m and stay within the gate {gate_m} m",
            th.translation_m
        ));
    }
    let rotation_rad = match m.rotation_rad {
        Some(r) => r,
        None => (1.5 * th.rotation_rad).min(0.5 * (th.rotation_rad + PI)),
    };
    if needs.1 && !(rotation_rad > th.rotation_rad && rotation_rad < PI) {
        return infeasible(format!(
            "rotation offset {rotation_rad} rad must exceed the threshold {} rad and stay below pi",
            th.rotation_rad
        ));
    }
    let scale_factor = match m.scale_factor {
        Some(f) => f,
        None => {
            let target = (1.5 * th.scale_deficit).min(0.5 * (th.scale_deficit + 1.0));
            [(1.0 - target).powf(-1.0 / 3.0); 3]
        }
    };
    if needs.2 {
        if scale_factor.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return infeasible(format!("scale factors {scale_factor:?} must be positive and finite"));
        }
        let deficit = 1.0 - scale_factor.iter().map(|f| f.min(1.0 / f)).product::<f64>();
        if !(deficit > th.scale_deficit) {
            return infeasible(format!(
                "scale factors {scale_factor:?} give deficit {deficit}, not above the threshold {}",
                th.scale_deficit
            ));
        }
    }
    Ok(Resolved {
        translation_m,
        rotation_rad,
        scale_factor,
    })
}

fn perturb(b: &mut Box3D, e: ErrorType, r: &Resolved, rng: &mut ChaCha8Rng) {
    let (t, rot, s) = e.channels().expect("positional type");
    if t {
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        b.center[0] += r.translation_m * heading.cos();
        b.center[1] += r.translation_m * heading.sin();
    }
    if rot {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        b.yaw = wrap_angle(b.yaw + sign * r.rotation_rad);
    }
    if s {
        for (v, f) in b.size.iter_mut().zip(r.scale_factor) {
            *v *= f;
        }
    }
}

/// Produce a model-origin scene whose errors against `gt` are exactly
/// `spec.counts`.
///
/// Victims of translation-bearing types are drawn from boxes with no other
/// ground truth within `2 * gate_m`, so the displaced copy cannot be claimed
/// by a neighbor. FPs are spawned at least `2 * gate_m` from every ground
/// truth box. CLS relabels to another class from `vocabulary`; an empty
/// vocabulary means the classes present in `gt`.
pub fn inject(
    gt: &Scene,
    spec: &InjectionSpec,
    th: &Thresholds,
    gate_m: f64,
    vocabulary: &[String],
) -> Result<Scene, InfeasibleSpec> {
    let mut out = gt.clone();
    out.meta.origin = Origin::ModelGenerated;
    out.meta.corrected_by = None;
    if spec.is_empty() {
        return Ok(out);
    }
    if !(gate_m > 0.0) {
        return infeasible(format!("gate {gate_m} m must be positive"));
    }

    let vocab: Vec<String> = if vocabulary.is_empty() {
        let present: BTreeSet<&str> = gt
            .frames
            .iter()
            .flat_map(|f| f.boxes.iter().map(|b| b.class_label.as_str()))
            .collect();
        present.into_iter().map(str::to_string).collect()
    } else {
        vocabulary.to_vec()
    };

    let translated = [ErrorType::T, ErrorType::TR, ErrorType::TS, ErrorType::TRS];
    let in_place = [ErrorType::R, ErrorType::S, ErrorType::RS];
    let needs = ErrorType::POSITIONAL
        .iter()
        .filter(|e| spec.count(**e) > 0)
        .fold((false, false, false), |acc, e| {
            let (t, r, s) = e.channels().unwrap();
            (acc.0 || t, acc.1 || r, acc.2 || s)
        });
    let mag = resolve(&spec.magnitudes, th, gate_m, needs)?;

    // Coincident centers make the optimal assignment ambiguous.
    for (fi, f) in gt.frames.iter().enumerate() {
        for (i, a) in f.boxes.iter().enumerate() {
            if f.boxes[i + 1..].iter().any(|b| bev_center_distance(a, b) == 0.0) {
                return infeasible(format!("frame {fi} has ground-truth boxes with coincident BEV centers"));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut all: Vec<(usize, usize)> = gt
        .frames
        .iter()
        .enumerate()
        .flat_map(|(fi, f)| (0..f.boxes.len()).map(move |bi| (fi, bi)))
        .collect();
    all.shuffle(&mut rng);

    let isolated = |&(fi, bi): &(usize, usize)| {
        let boxes = &gt.frames[fi].boxes;
        boxes
            .iter()
            .enumerate()
            .all(|(j, o)| j == bi || bev_center_distance(&boxes[bi], o) > 2.0 * gate_m)
    };
    let n_translated: u64 = translated.iter().map(|e| spec.count(*e)).sum();
    let (mut pool_iso, mut pool_rest): (Vec<_>, Vec<_>) = all.into_iter().partition(isolated);
    if (pool_iso.len() as u64) < n_translated {
        return infeasible(format!(
            "{n_translated} translation-bearing errors requested but only {} boxes are isolated by 2 x gate ({} m)",
            pool_iso.len(),
            2.0 * gate_m
        ));
    }

    let mut plan: Vec<((usize, usize), ErrorType)> = Vec::new();
    for e in translated {
        for _ in 0..spec.count(e) {
            plan.push((pool_iso.pop().unwrap(), e));
        }
    }
    // Leftover isolated boxes go back into the general pool, reshuffled so
    // the split does not bias later picks.
    pool_rest.append(&mut pool_iso);
    pool_rest.shuffle(&mut rng);
    let n_other: u64 = in_place
        .iter()
        .chain(&[ErrorType::CLS, ErrorType::FN])
        .map(|e| spec.count(*e))
        .sum();
    if (pool_rest.len() as u64) < n_other {
        let n_gt = gt.box_count();
        return infeasible(format!(
            "FN + positional + CLS requests ({}) exceed the {n_gt} ground-truth boxes",
            n_other + n_translated
        ));
    }
    for e in in_place.into_iter().chain([ErrorType::CLS, ErrorType::FN]) {
        for _ in 0..spec.count(e) {
            plan.push((pool_rest.pop().unwrap(), e));
        }
    }
    if spec.count(ErrorType::CLS) > 0 && vocab.len() < 2 {
        return infeasible(format!(
            "CLS needs a vocabulary of at least 2 classes, have {vocab:?}"
        ));
    }
    if spec.count(ErrorType::FP) > 0 {
        if gt.frames.is_empty() {
            return infeasible("FP requested on a scene without frames");
        }
        if vocab.is_empty() {
            return infeasible("FP needs at least one class in the vocabulary");
        }
    }

    // Apply in a deterministic order independent of the shuffle.
    plan.sort_by_key(|&((fi, bi), _)| (fi, bi));
    let mut deleted: Vec<(usize, usize)> = Vec::new();
    for ((fi, bi), e) in plan {
        let b = &mut out.frames[fi].boxes[bi];
        match e {
            ErrorType::FN => deleted.push((fi, bi)),
            ErrorType::CLS => {
                let others: Vec<&String> = vocab.iter().filter(|c| **c != b.class_label).collect();
                b.class_label = others[rng.random_range(0..others.len())].clone();
            }
            _ => perturb(b, e, &mag, &mut rng),
        }
    }
    for &(fi, bi) in deleted.iter().rev() {
        out.frames[fi].boxes.remove(bi);
    }

    let n_frames = out.frames.len();
    let mut spawned_in = vec![0usize; n_frames];
    for _ in 0..spec.count(ErrorType::FP) {
        let fi = rng.random_range(0..n_frames);
        let max_x = gt.frames[fi]
            .boxes
            .iter()
            .map(|b| b.center[0])
            .fold(0.0f64, f64::max);
        let k = spawned_in[fi] as f64;
        spawned_in[fi] += 1;
        let class = vocab[rng.random_range(0..vocab.len())].clone();
        let fp = Box3D::new([max_x + 2.0 * gate_m + 3.0 * gate_m * k, 0.0, 0.0], [4.5, 1.9, 1.6], 0.0, class);
        out.frames[fi].boxes.push(fp);
    }
    Ok(out)
}
