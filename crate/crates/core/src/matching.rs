//! Gated bipartite matching of predicted boxes to ground truth.
//!
//! [`match_frame`] finds a maximum-cardinality assignment among pairs whose
//! BEV center distance is within the gate, and among those the one with
//! minimum total distance. Matching is class-agnostic. [`brute_force_match`]
//! enumerates every gated partial assignment and serves as the test oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::Box3D;
use crate::geometry::bev_center_distance;

pub const DEFAULT_GATE_M: f64 = 2.0;

/// Largest side accepted by [`brute_force_match`].
pub const BRUTE_FORCE_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub gt: usize,
    pub pred: usize,
    pub distance_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Sorted by ground-truth index.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_gt: Vec<usize>,
    pub unmatched_pred: Vec<usize>,
}

impl MatchResult {
    /// Sum of paired distances, accumulated in ground-truth index order.
    pub fn total_distance(&self) -> f64 {
        self.pairs.iter().map(|p| p.distance_m).sum()
    }

    fn from_assignment(assign: &[Option<usize>], n_pred: usize, dist: impl Fn(usize, usize) -> f64) -> Self {
        let mut used = vec![false; n_pred];
        let mut out = MatchResult::default();
        for (g, a) in assign.iter().enumerate() {
            match a {
                Some(p) => {
                    used[*p] = true;
                    out.pairs.push(MatchedPair {
                        gt: g,
                        pred: *p,
                        distance_m: dist(g, *p),
                    });
                }
                None => out.unmatched_gt.push(g),
            }
        }
        out.unmatched_pred = (0..n_pred).filter(|p| !used[*p]).collect();
        out
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("brute-force matching supports at most {limit} boxes per side, got {gt} gt and {pred} pred")]
pub struct SizeError {
    pub limit: usize,
    pub gt: usize,
    pub pred: usize,
}

/// Cardinality-maximal, then cost-minimal gated assignment.
pub fn match_frame(gt: &[Box3D], pred: &[Box3D], gate_m: f64) -> MatchResult {
    match_by(gt.len(), pred.len(), gate_m, |g, p| bev_center_distance(&gt[g], &pred[p]))
}

/// Same contract as [`match_frame`] over an arbitrary distance function.
/// Used by the tracker to associate predicted track states.
pub fn match_by(n_gt: usize, n_pred: usize, gate_m: f64, dist: impl Fn(usize, usize) -> f64) -> MatchResult {
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut dsu = DisjointSet::new(n_gt + n_pred);
    for g in 0..n_gt {
        for p in 0..n_pred {
            let d = dist(g, p);
            if d <= gate_m {
                edges.push((g, p, d));
                dsu.union(g, n_gt + p);
            }
        }
    }

    let mut assign: Vec<Option<usize>> = vec![None; n_gt];
    if !edges.is_empty() {
        // Solve each connected component of the gating graph independently.
        let mut comp_of_edge: Vec<(usize, usize)> = edges
            .iter()
            .enumerate()
            .map(|(k, &(g, _, _))| (dsu.find(g), k))
            .collect();
        comp_of_edge.sort_unstable();
        let mut start = 0;
        while start < comp_of_edge.len() {
            let root = comp_of_edge[start].0;
            let mut end = start;
            while end < comp_of_edge.len() && comp_of_edge[end].0 == root {
                end += 1;
            }
            let comp_edges: Vec<(usize, usize, f64)> =
                comp_of_edge[start..end].iter().map(|&(_, k)| edges[k]).collect();
            for (g, p) in solve_component(&comp_edges) {
                assign[g] = Some(p);
            }
            start = end;
        }
    }

    let lookup = |g: usize, p: usize| {
        edges
            .iter()
            .find(|e| e.0 == g && e.1 == p)
            .map(|e| e.2)
            .expect("assigned pair is a gated edge")
    };
    MatchResult::from_assignment(&assign, n_pred, lookup)
}

/// Successive shortest augmenting paths with Johnson potentials on one
/// connected component. Returns (gt, pred) pairs in global indices.
fn solve_component(edges: &[(usize, usize, f64)]) -> Vec<(usize, usize)> {
    let mut lefts: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let mut rights: Vec<usize> = edges.iter().map(|e| e.1).collect();
    lefts.sort_unstable();
    lefts.dedup();
    rights.sort_unstable();
    rights.dedup();
    let nl = lefts.len();
    let nr = rights.len();

    let mut cost = vec![f64::INFINITY; nl * nr];
    for &(g, p, d) in edges {
        let i = lefts.binary_search(&g).unwrap();
        let j = rights.binary_search(&p).unwrap();
        cost[i * nr + j] = d;
    }

    let mut match_l: Vec<Option<usize>> = vec![None; nl];
    let mut match_r: Vec<Option<usize>> = vec![None; nr];
    let mut pot_l = vec![0.0f64; nl];
    let mut pot_r = vec![0.0f64; nr];
    let mut dist_l = vec![0.0f64; nl];
    let mut dist_r = vec![0.0f64; nr];
    let mut done_l = vec![false; nl];
    let mut done_r = vec![false; nr];
    let mut prev_r = vec![usize::MAX; nr];

    for _ in 0..nl.min(nr) {
        for i in 0..nl {
            dist_l[i] = if match_l[i].is_none() { 0.0 } else { f64::INFINITY };
            done_l[i] = false;
        }
        dist_r.fill(f64::INFINITY);
        done_r.fill(false);
        prev_r.fill(usize::MAX);

        // Dense Dijkstra over left and right nodes on reduced costs.
        loop {
            let mut best: Option<(bool, usize, f64)> = None;
            for i in 0..nl {
                if !done_l[i] && dist_l[i] < best.map_or(f64::INFINITY, |b| b.2) {
                    best = Some((true, i, dist_l[i]));
                }
            }
            for j in 0..nr {
                if !done_r[j] && dist_r[j] < best.map_or(f64::INFINITY, |b| b.2) {
                    best = Some((false, j, dist_r[j]));
                }
            }
            let Some((is_left, k, d)) = best else { break };
            if is_left {
                done_l[k] = true;
                for j in 0..nr {
                    let c = cost[k * nr + j];
                    if done_r[j] || !c.is_finite() || match_l[k] == Some(j) {
                        continue;
                    }
                    let nd = d + c + pot_l[k] - pot_r[j];
                    if nd < dist_r[j] {
                        dist_r[j] = nd;
                        prev_r[j] = k;
                    }
                }
            } else {
                done_r[k] = true;
                if let Some(i) = match_r[k] {
                    if !done_l[i] {
                        let nd = d - cost[i * nr + k] + pot_r[k] - pot_l[i];
                        if nd < dist_l[i] {
                            dist_l[i] = nd;
                        }
                    }
                }
            }
        }

        // Cheapest free right node in true (unreduced) path cost.
        let mut sink: Option<(usize, f64)> = None;
        for j in 0..nr {
            if match_r[j].is_none() && done_r[j] {
                let real = dist_r[j] + pot_r[j];
                if sink.is_none_or(|s| real < s.1) {
                    sink = Some((j, real));
                }
            }
        }
        let Some((mut j, _)) = sink else { break };

        let reach_max = dist_l
            .iter()
            .zip(&done_l)
            .chain(dist_r.iter().zip(&done_r))
            .filter(|(_, &done)| done)
            .map(|(d, _)| *d)
            .fold(0.0f64, f64::max);
        for i in 0..nl {
            pot_l[i] += if done_l[i] { dist_l[i] } else { reach_max };
        }
        for r in 0..nr {
            pot_r[r] += if done_r[r] { dist_r[r] } else { reach_max };
        }

        loop {
            let i = prev_r[j];
            let next = match_l[i];
            match_l[i] = Some(j);
            match_r[j] = Some(i);
            match next {
                Some(j2) => j = j2,
                None => break,
            }
        }
    }

    match_l
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (lefts[i], rights[j])))
        .collect()
}

/// Exhaustive oracle: maximizes pair count, then minimizes total distance,
/// then takes the lexicographically smallest (gt, pred) pair list.
pub fn brute_force_match(gt: &[Box3D], pred: &[Box3D], gate_m: f64) -> Result<MatchResult, SizeError> {
    if gt.len() > BRUTE_FORCE_LIMIT || pred.len() > BRUTE_FORCE_LIMIT {
        return Err(SizeError {
            limit: BRUTE_FORCE_LIMIT,
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    let dist = |g: usize, p: usize| bev_center_distance(&gt[g], &pred[p]);

    type Best = (usize, f64, Vec<(usize, usize)>, Vec<Option<usize>>);

    struct Search<'a> {
        n_pred: usize,
        gate: f64,
        dist: &'a dyn Fn(usize, usize) -> f64,
        current: Vec<Option<usize>>,
        used: Vec<bool>,
        best: Option<Best>,
    }

    impl Search<'_> {
        fn visit(&mut self, g: usize) {
            if g == self.current.len() {
                let pairs: Vec<(usize, usize)> = self
                    .current
                    .iter()
                    .enumerate()
                    .filter_map(|(g, p)| p.map(|p| (g, p)))
                    .collect();
                let cost: f64 = pairs.iter().map(|&(g, p)| (self.dist)(g, p)).sum();
                let better = match &self.best {
                    None => true,
                    Some((n, c, lex, _)) => {
                        pairs.len() > *n || (pairs.len() == *n && (cost < *c || (cost == *c && pairs < *lex)))
                    }
                };
                if better {
                    self.best = Some((pairs.len(), cost, pairs, self.current.clone()));
                }
                return;
            }
            for p in 0..self.n_pred {
                if !self.used[p] && (self.dist)(g, p) <= self.gate {
                    self.used[p] = true;
                    self.current[g] = Some(p);
                    self.visit(g + 1);
                    self.current[g] = None;
                    self.used[p] = false;
                }
            }
            self.visit(g + 1);
        }
    }

    let mut search = Search {
        n_pred: pred.len(),
        gate: gate_m,
        dist: &dist,
        current: vec![None; gt.len()],
        used: vec![false; pred.len()],
        best: None,
    };
    search.visit(0);
    let (_, _, _, assign) = search.best.expect("the empty assignment is always visited");
    Ok(MatchResult::from_assignment(&assign, pred.len(), dist))
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}
