//! Pose-aware triplet mining and Circle Loss.
//!
//! Positives are batch members whose labels are within a geodesic
//! similarity threshold of the anchor; negatives are everything else that
//! still violates the embedding margin `v`. The loss is the pair-similarity
//! Circle Loss with self-paced weights that are held constant during
//! differentiation.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{trace_similarity, wrapped_abs_diff_deg, RotationMatrix};
use crate::synth::Source;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Scale γ.
    pub gamma: f64,
    /// Relaxation margin m.
    pub m: f64,
    /// Geodesic-similarity threshold for extra positives.
    pub t_gd: f64,
    /// Triplet margin in embedding distance.
    pub v: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 80.0,
            m: 0.4,
            t_gd: 0.8,
            v: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if !(self.m > 0.0 && self.m < 1.0) {
            return Err(Error::Config("m must lie in (0, 1)".into()));
        }
        if !(self.t_gd > -1.0 && self.t_gd < 1.0) {
            return Err(Error::Config("t_gd must lie in (-1, 1)".into()));
        }
        if !(self.v > 0.0) {
            return Err(Error::Config("v must be positive".into()));
        }
        Ok(())
    }
}

/// Unit-norm embeddings with their pose labels and pool tags.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    vectors: Array2<f64>,
    poses: Vec<RotationMatrix>,
    sources: Vec<Source>,
}

impl EmbeddingBatch {
    pub fn new(vectors: Array2<f64>, poses: Vec<RotationMatrix>, sources: Vec<Source>) -> Result<Self> {
        let n = vectors.nrows();
        if n < 2 {
            return Err(Error::Config(format!("an embedding batch needs at least 2 rows, got {n}")));
        }
        if poses.len() != n || sources.len() != n {
            return Err(Error::LengthMismatch(format!(
                "{n} embeddings, {} poses, {} sources",
                poses.len(),
                sources.len()
            )));
        }
        for (i, row) in vectors.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidRecord {
                    index: i,
                    reason: format!("embedding norm {norm} is not 1"),
                });
            }
        }
        Ok(EmbeddingBatch { vectors, poses, sources })
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn poses(&self) -> &[RotationMatrix] {
        &self.poses
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        self.vectors.row(i).dot(&self.vectors.row(j))
    }

    /// Euclidean distance between unit rows, √(2 − 2s).
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclidean(self.vectors.row(i), self.vectors.row(j))
    }
}

fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// All unordered pairs `(i, j)`, `i < j`, whose labels are more similar than `t_gd`.
/// Generated anchor-positive pairs (an anchor-pool and a positive-pool sample
/// with the same label) are always included.
pub fn find_positive_pairs(poses: &[RotationMatrix], sources: &[Source], cfg: &LossConfig) -> Result<Vec<(usize, usize)>> {
    if poses.len() != sources.len() {
        return Err(Error::LengthMismatch(format!("{} poses, {} sources", poses.len(), sources.len())));
    }
    let mut pairs = Vec::new();
    for i in 0..poses.len() {
        for j in i + 1..poses.len() {
            let generated = sources[i] != sources[j] && poses[i] == poses[j];
            if generated || trace_similarity(&poses[i], &poses[j]) > cfg.t_gd {
                pairs.push((i, j));
            }
        }
    }
    Ok(pairs)
}

/// Positives and negatives that survived mining for one anchor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorPairs {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripletSet {
    pub positive_pairs: Vec<(usize, usize)>,
    pub triplets: Vec<(usize, usize, usize)>,
    /// Per-anchor pair sets derived from the kept triplets, ordered by anchor.
    pub anchors: Vec<AnchorPairs>,
}

impl TripletSet {
    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Builds the per-anchor view (N_p, N_n) from a triplet list.
    pub fn from_triplets(positive_pairs: Vec<(usize, usize)>, triplets: Vec<(usize, usize, usize)>) -> Self {
        let mut anchors: Vec<AnchorPairs> = Vec::new();
        let mut sorted = triplets.clone();
        sorted.sort_unstable();
        for &(a, p, n) in &sorted {
            if anchors.last().map(|g| g.anchor) != Some(a) {
                anchors.push(AnchorPairs {
                    anchor: a,
                    positives: Vec::new(),
                    negatives: Vec::new(),
                });
            }
            let group = anchors.last_mut().expect("pushed above");
            if !group.positives.contains(&p) {
                group.positives.push(p);
            }
            if !group.negatives.contains(&n) {
                group.negatives.push(n);
            }
        }
        for g in anchors.iter_mut() {
            g.positives.sort_unstable();
            g.negatives.sort_unstable();
        }
        TripletSet {
            positive_pairs,
            triplets,
            anchors,
        }
    }
}

/// Keeps `(a, p, n)` iff ‖e_a − e_p‖ − ‖e_a − e_n‖ + v > 0, i.e. the hard and
/// semi-hard negatives. Both orientations of every positive pair act as
/// anchor-positive.
pub fn mine_negative_triplets(
    emb: &EmbeddingBatch,
    positive_pairs: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<TripletSet> {
    if positive_pairs.is_empty() {
        return Err(Error::Empty("positive pair set"));
    }
    let n = emb.len();
    let mut is_positive = vec![false; n * n];
    for &(i, j) in positive_pairs {
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidRecord {
                index: i.max(j),
                reason: format!("bad positive pair ({i}, {j}) for batch of {n}"),
            });
        }
        is_positive[i * n + j] = true;
        is_positive[j * n + i] = true;
    }
    let dist = |i: usize, j: usize| emb.distance(i, j);

    let mut triplets = Vec::new();
    for &(i, j) in positive_pairs {
        for (a, p) in [(i, j), (j, i)] {
            let d_ap = dist(a, p);
            for neg in 0..n {
                if neg == a || is_positive[a * n + neg] {
                    continue;
                }
                if d_ap - dist(a, neg) + cfg.v > 0.0 {
                    triplets.push((a, p, neg));
                }
            }
        }
    }
    Ok(TripletSet::from_triplets(positive_pairs.to_vec(), triplets))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Circle Loss weights for one anchor, given its positive and negative similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleWeights {
    pub alpha_p: Vec<f64>,
    pub alpha_n: Vec<f64>,
}

impl CircleWeights {
    pub fn new(sp: &[f64], sn: &[f64], cfg: &LossConfig) -> Self {
        CircleWeights {
            alpha_p: sp.iter().map(|s| (1.0 + cfg.m - s).max(0.0)).collect(),
            alpha_n: sn.iter().map(|s| (s + cfg.m).max(0.0)).collect(),
        }
    }
}

/// Single-anchor Circle Loss with the given (constant) weights; returns the
/// loss and its derivatives with respect to each positive and negative similarity.
pub fn circle_terms(sp: &[f64], sn: &[f64], weights: &CircleWeights, cfg: &LossConfig) -> (f64, Vec<f64>, Vec<f64>) {
    let delta_p = 1.0 - cfg.m;
    let delta_n = cfg.m;
    let logit_p: Vec<f64> = sp
        .iter()
        .zip(&weights.alpha_p)
        .map(|(s, a)| -cfg.gamma * a * (s - delta_p))
        .collect();
    let logit_n: Vec<f64> = sn
        .iter()
        .zip(&weights.alpha_n)
        .map(|(s, a)| cfg.gamma * a * (s - delta_n))
        .collect();
    let lse_p = log_sum_exp(&logit_p);
    let lse_n = log_sum_exp(&logit_n);
    let z = lse_p + lse_n;
    let loss = softplus(z);
    let dz = sigmoid(z);
    let dsp = logit_p
        .iter()
        .zip(&weights.alpha_p)
        .map(|(l, a)| dz * (l - lse_p).exp() * (-cfg.gamma * a))
        .collect();
    let dsn = logit_n
        .iter()
        .zip(&weights.alpha_n)
        .map(|(l, a)| dz * (l - lse_n).exp() * (cfg.gamma * a))
        .collect();
    (loss, dsp, dsn)
}

/// Circle Loss of a single anchor from raw similarities.
pub fn circle_loss_from_similarities(sp: &[f64], sn: &[f64], cfg: &LossConfig) -> f64 {
    let w = CircleWeights::new(sp, sn, cfg);
    circle_terms(sp, sn, &w, cfg).0
}

/// Batch Circle Loss averaged over anchors that have at least one positive
/// and one negative, with the gradient with respect to every embedding row.
pub fn circle_loss(emb: &EmbeddingBatch, triplets: &TripletSet, cfg: &LossConfig) -> Result<(f64, Array2<f64>)> {
    let groups: Vec<&AnchorPairs> = triplets
        .anchors
        .iter()
        .filter(|g| !g.positives.is_empty() && !g.negatives.is_empty())
        .collect();
    if groups.is_empty() {
        return Err(Error::Empty("triplet set"));
    }
    let e = emb.vectors();
    let mut grad = Array2::<f64>::zeros(e.raw_dim());
    let mut total = 0.0;
    let scale = 1.0 / groups.len() as f64;
    for g in groups {
        let a = g.anchor;
        let sp: Vec<f64> = g.positives.iter().map(|&p| emb.similarity(a, p)).collect();
        let sn: Vec<f64> = g.negatives.iter().map(|&n| emb.similarity(a, n)).collect();
        let w = CircleWeights::new(&sp, &sn, cfg);
        let (loss, dsp, dsn) = circle_terms(&sp, &sn, &w, cfg);
        total += loss;
        for (&j, ds) in g.positives.iter().chain(&g.negatives).zip(dsp.iter().chain(&dsn)) {
            let ds = ds * scale;
            let (row_a, row_j) = (e.row(a).to_owned(), e.row(j).to_owned());
            grad.row_mut(a).scaled_add(ds, &row_j);
            grad.row_mut(j).scaled_add(ds, &row_a);
        }
    }
    Ok((total * scale, grad))
}

/// Monte Carlo probability that two independent uniform Euler triads agree
/// within `window_deg / 2` on every angle.
pub fn estimate_anchor_positive_rate<R: Rng + ?Sized>(n_samples: usize, window_deg: f64, rng: &mut R) -> Result<f64> {
    if n_samples < 10_000 {
        return Err(Error::Config(format!("need at least 10^4 samples, got {n_samples}")));
    }
    if !(window_deg > 0.0 && window_deg < 360.0) && window_deg != 360.0 {
        return Err(Error::Config(format!("window {window_deg} outside (0, 360]")));
    }
    let half = window_deg / 2.0;
    let mut draw = || -180.0 + 360.0 * rng.gen::<f64>();
    let mut hits = 0usize;
    for _ in 0..n_samples {
        let close = (0..3).all(|_| wrapped_abs_diff_deg(draw(), draw()) <= half);
        if close {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_samples as f64)
}
