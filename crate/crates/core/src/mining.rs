//! Triplet enumeration inside a mini-batch and gradient aggregation.
//!
//! Every item of a batch is used as a query in both directions. Instance
//! triplets pair the query with its matching counterpart as the positive and
//! every other item of the other modality as a negative. Semantic triplets
//! draw one random same-class, non-matching positive and use the items of
//! other classes as negatives, truncated to a batch-wide cap.
//!
//! Aggregation sums the per-triplet gradients of each kind and then divides
//! each sum either by the number of *active* triplets of that kind
//! ([`Strategy::Adaptive`]) or by the number of enumerated triplets
//! ([`Strategy::Average`]). A kind with a zero divisor contributes nothing.
//!
//! Internally the gradient of a batch is not computed triplet by triplet.
//! Each active triplet only adds `+1`/`-1` to the coefficient of the two
//! cross-modal distances it involves; the latent gradients are then formed
//! once per distance and backpropagated once per item.

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, ForwardTrace, Side};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::math::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TripletKind {
    Instance,
    Semantic,
}

/// Retrieval direction: `AtoB` queries with modality A items and ranks
/// modality B candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    AtoB,
    BtoA,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::AtoB, Direction::BtoA];

    pub fn query_side(self) -> Side {
        match self {
            Direction::AtoB => Side::A,
            Direction::BtoA => Side::B,
        }
    }

    pub fn candidate_side(self) -> Side {
        self.query_side().other()
    }

    /// `(a index, b index)` of the cross-modal pair formed by a query and a
    /// candidate.
    #[inline]
    pub fn pair(self, query: usize, candidate: usize) -> (usize, usize) {
        match self {
            Direction::AtoB => (query, candidate),
            Direction::BtoA => (candidate, query),
        }
    }
}

/// Batch-local indices of one triplet. The query lives in the query
/// modality of `direction`, positive and negative in the other one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub query: usize,
    pub positive: usize,
    pub negative: usize,
    pub kind: TripletKind,
    pub direction: Direction,
}

/// The `batch_size - 1` instance triplets of one query.
pub fn enumerate_instance_triplets(batch_size: usize, query: usize, direction: Direction) -> Vec<Triplet> {
    (0..batch_size)
        .filter(|&n| n != query)
        .map(|negative| Triplet {
            query,
            positive: query,
            negative,
            kind: TripletKind::Instance,
            direction,
        })
        .collect()
}

/// Number of labeled items whose class differs from `class`.
fn different_class_count(labels: &[Option<usize>], class: usize) -> usize {
    labels.iter().filter(|l| matches!(l, Some(c) if *c != class)).count()
}

fn has_semantic_positive(labels: &[Option<usize>], query: usize) -> bool {
    match labels[query] {
        Some(c) => labels.iter().enumerate().any(|(j, l)| j != query && *l == Some(c)),
        None => false,
    }
}

/// Smallest semantic negative-set size over the labeled queries that have a
/// valid semantic positive. `None` when no such query exists or when that
/// minimum is zero, in which case the semantic term is skipped.
///
/// Labels are per pair, so the value is the same for both directions.
pub fn compute_negative_cap(labels: &[Option<usize>]) -> Option<usize> {
    (0..labels.len())
        .filter(|&q| has_semantic_positive(labels, q))
        .filter_map(|q| labels[q].map(|c| different_class_count(labels, c)))
        .min()
        .filter(|&cap| cap > 0)
}

/// Semantic triplets of one query: one uniformly drawn same-class,
/// non-matching positive and the labeled other-class items as negatives,
/// subsampled without replacement to `cap` when given.
///
/// Unlabeled queries, and queries without any same-class partner, yield no
/// triplets. Unlabeled items are never positives or negatives.
pub fn enumerate_semantic_triplets(
    labels: &[Option<usize>],
    query: usize,
    direction: Direction,
    cap: Option<usize>,
    rng: &mut Rng,
) -> Vec<Triplet> {
    let Some(class) = labels[query] else {
        return Vec::new();
    };
    let positives: Vec<usize> = (0..labels.len())
        .filter(|&j| j != query && labels[j] == Some(class))
        .collect();
    if positives.is_empty() {
        return Vec::new();
    }
    let positive = positives[rng.random_range(0..positives.len())];
    let mut negatives: Vec<usize> = (0..labels.len())
        .filter(|&j| matches!(labels[j], Some(c) if c != class))
        .collect();
    if let Some(cap) = cap {
        if negatives.len() > cap {
            let mut keep: Vec<usize> = index::sample(rng, negatives.len(), cap)
                .into_iter()
                .map(|i| negatives[i])
                .collect();
            keep.sort_unstable();
            negatives = keep;
        }
    }
    negatives
        .into_iter()
        .map(|negative| Triplet {
            query,
            positive,
            negative,
            kind: TripletKind::Semantic,
            direction,
        })
        .collect()
}

/// All triplets of a batch, in a fixed order: direction `AtoB` then `BtoA`,
/// queries in batch order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletPlan {
    pub instance: Vec<Triplet>,
    pub semantic: Vec<Triplet>,
}

impl TripletPlan {
    pub fn build(labels: &[Option<usize>], instance: bool, semantic: bool, rng: &mut Rng) -> Self {
        let b = labels.len();
        let mut plan = TripletPlan::default();
        if instance {
            for dir in Direction::BOTH {
                for q in 0..b {
                    plan.instance.extend(enumerate_instance_triplets(b, q, dir));
                }
            }
        }
        if semantic {
            if let Some(cap) = compute_negative_cap(labels) {
                for dir in Direction::BOTH {
                    for q in 0..b {
                        plan.semantic
                            .extend(enumerate_semantic_triplets(labels, q, dir, Some(cap), rng));
                    }
                }
            }
        }
        plan
    }
}

/// Features and labels of the pairs in one mini-batch.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub features_a: Vec<&'a [f64]>,
    pub features_b: Vec<&'a [f64]>,
    pub labels: Vec<Option<usize>>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, side: Side, i: usize) -> &[f64] {
        match side {
            Side::A => self.features_a[i],
            Side::B => self.features_b[i],
        }
    }
}

/// Forward pass of a whole batch plus the cross-modal cosine distances.
pub struct BatchForward {
    traces_a: Vec<ForwardTrace>,
    traces_b: Vec<ForwardTrace>,
    norms_a: Vec<f64>,
    norms_b: Vec<f64>,
    /// `dots[i * n + j] = latent_a[i] . latent_b[j]`
    dots: Vec<f64>,
    n: usize,
}

impl BatchForward {
    pub fn new(params: &EncoderParams, batch: &Batch<'_>) -> Result<Self> {
        if batch.features_a.len() != batch.len() || batch.features_b.len() != batch.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                found: batch.features_a.len().min(batch.features_b.len()),
            });
        }
        let traces = |side| -> Result<Vec<ForwardTrace>> {
            (0..batch.len())
                .map(|i| {
                    params
                        .branch(side)
                        .forward_trace(params.activation, batch.features(side, i))
                })
                .collect()
        };
        let traces_a = traces(Side::A)?;
        let traces_b = traces(Side::B)?;
        let norms_a: Vec<f64> = traces_a.iter().map(|t| math::norm(t.latent())).collect();
        let norms_b: Vec<f64> = traces_b.iter().map(|t| math::norm(t.latent())).collect();
        let n = batch.len();
        let mut dots = Vec::with_capacity(n * n);
        for ta in &traces_a {
            for tb in &traces_b {
                dots.push(math::dot(ta.latent(), tb.latent()));
            }
        }
        Ok(BatchForward {
            traces_a,
            traces_b,
            norms_a,
            norms_b,
            dots,
            n,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn latent(&self, side: Side, i: usize) -> &[f64] {
        match side {
            Side::A => self.traces_a[i].latent(),
            Side::B => self.traces_b[i].latent(),
        }
    }

    /// Cosine distance between `latent_a[a]` and `latent_b[b]`.
    #[inline]
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        1.0 - self.dots[a * self.n + b] / (self.norms_a[a] * self.norms_b[b])
    }

    /// Latent gradients of `sum_ij coeffs[i*n+j] * d(latent_a[i], latent_b[j])`.
    pub(crate) fn distance_grads(&self, coeffs: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.n;
        let dim = self.traces_a.first().map_or(0, |t| t.latent().len());
        let mut ga = vec![vec![0.0; dim]; n];
        let mut gb = vec![vec![0.0; dim]; n];
        for i in 0..n {
            let a = self.traces_a[i].latent();
            let na = self.norms_a[i];
            for j in 0..n {
                let c = coeffs[i * n + j];
                if c == 0.0 {
                    continue;
                }
                let b = self.traces_b[j].latent();
                let nb = self.norms_b[j];
                let inv = 1.0 / (na * nb);
                let s = self.dots[i * n + j] * inv;
                // d/da = -(b * inv - s a / na^2), d/db = -(a * inv - s b / nb^2)
                math::axpy(-c * inv, b, &mut ga[i]);
                math::axpy(c * s / (na * na), a, &mut ga[i]);
                math::axpy(-c * inv, a, &mut gb[j]);
                math::axpy(c * s / (nb * nb), b, &mut gb[j]);
            }
        }
        (ga, gb)
    }

    /// Parameter gradient for the given per-item latent gradients.
    pub fn backprop(
        &self,
        params: &EncoderParams,
        grads_a: &[Vec<f64>],
        grads_b: &[Vec<f64>],
    ) -> Result<EncoderParams> {
        let mut out = params.zeros_like();
        for (side, traces, grads) in [(Side::A, &self.traces_a, grads_a), (Side::B, &self.traces_b, grads_b)] {
            let branch = params.branch(side);
            for (trace, g) in traces.iter().zip(grads) {
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                branch.backward(params.activation, trace, g, out.branch_mut(side))?;
            }
        }
        Ok(out)
    }
}

/// Counts and summed loss of one term of the objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermStats {
    /// Constraints with strictly positive loss.
    pub active: usize,
    /// Enumerated constraints.
    pub total: usize,
    pub loss_sum: f64,
}

impl TermStats {
    /// Normalizer of the term; `None` when the term must be dropped.
    pub fn divisor(&self, strategy: Strategy) -> Option<f64> {
        let d = match strategy {
            Strategy::Adaptive => self.active,
            Strategy::Average => self.total,
        };
        (d > 0).then_some(d as f64)
    }
}

/// Gradient aggregation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Divide each term by its number of active constraints.
    Adaptive,
    /// Divide each term by its number of enumerated constraints.
    Average,
}

/// Per-kind, un-normalized parameter-gradient sums of a batch.
#[derive(Debug, Clone)]
pub struct TripletSums {
    pub instance: EncoderParams,
    pub semantic: EncoderParams,
    pub instance_stats: TermStats,
    pub semantic_stats: TermStats,
}

/// Weights of the two triplet terms in the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub instance: f64,
    pub semantic: f64,
}

impl From<&LossConfig> for TermWeights {
    fn from(config: &LossConfig) -> Self {
        TermWeights {
            instance: 1.0,
            semantic: config.lambda,
        }
    }
}

/// Coefficient matrix and stats of a list of triplets.
fn triplet_coefficients(fwd: &BatchForward, triplets: &[Triplet], alpha: f64) -> (Vec<f64>, TermStats) {
    let n = fwd.len();
    let mut coeffs = vec![0.0; n * n];
    let mut stats = TermStats {
        total: triplets.len(),
        ..TermStats::default()
    };
    for t in triplets {
        let (pa, pb) = t.direction.pair(t.query, t.positive);
        let (na, nb) = t.direction.pair(t.query, t.negative);
        let loss = fwd.distance(pa, pb) + alpha - fwd.distance(na, nb);
        if loss > 0.0 {
            stats.active += 1;
            stats.loss_sum += loss;
            coeffs[pa * n + pb] += 1.0;
            coeffs[na * n + nb] -= 1.0;
        }
    }
    (coeffs, stats)
}

/// Sums of one kind's triplet gradients in parameter space.
pub fn triplet_term(
    params: &EncoderParams,
    fwd: &BatchForward,
    triplets: &[Triplet],
    alpha: f64,
) -> Result<(EncoderParams, TermStats)> {
    let (coeffs, stats) = triplet_coefficients(fwd, triplets, alpha);
    if stats.active == 0 {
        return Ok((params.zeros_like(), stats));
    }
    let (ga, gb) = fwd.distance_grads(&coeffs);
    Ok((fwd.backprop(params, &ga, &gb)?, stats))
}

impl TripletSums {
    pub fn compute(params: &EncoderParams, fwd: &BatchForward, plan: &TripletPlan, alpha: f64) -> Result<Self> {
        let (instance, instance_stats) = triplet_term(params, fwd, &plan.instance, alpha)?;
        let (semantic, semantic_stats) = triplet_term(params, fwd, &plan.semantic, alpha)?;
        Ok(TripletSums {
            instance,
            semantic,
            instance_stats,
            semantic_stats,
        })
    }

    /// Scalar applied to each sum under `strategy`.
    pub fn scales(&self, strategy: Strategy, weights: TermWeights) -> (f64, f64) {
        let scale = |stats: &TermStats, w: f64| stats.divisor(strategy).map_or(0.0, |d| w / d);
        (
            scale(&self.instance_stats, weights.instance),
            scale(&self.semantic_stats, weights.semantic),
        )
    }

    pub fn update(&self, strategy: Strategy, weights: TermWeights) -> EncoderParams {
        let (si, ss) = self.scales(strategy, weights);
        let mut out = self.instance.zeros_like();
        if si != 0.0 {
            out.add_scaled(si, &self.instance);
        }
        if ss != 0.0 {
            out.add_scaled(ss, &self.semantic);
        }
        out
    }

    /// Normalized objective value under `strategy`.
    pub fn loss(&self, strategy: Strategy, weights: TermWeights) -> f64 {
        let (si, ss) = self.scales(strategy, weights);
        si * self.instance_stats.loss_sum + ss * self.semantic_stats.loss_sum
    }
}

/// Normalized update of a batch and its active-triplet counts.
#[derive(Debug, Clone)]
pub struct GradientAccumulator {
    pub update: EncoderParams,
    /// Active instance triplets.
    pub beta_r: usize,
    /// Active semantic triplets.
    pub beta_s: usize,
    pub total_r: usize,
    pub total_s: usize,
    pub loss: f64,
}

fn aggregate(
    params: &EncoderParams,
    batch: &Batch<'_>,
    plan: &TripletPlan,
    config: &LossConfig,
    strategy: Strategy,
) -> Result<GradientAccumulator> {
    let fwd = BatchForward::new(params, batch)?;
    let sums = TripletSums::compute(params, &fwd, plan, config.alpha)?;
    let weights = TermWeights::from(config);
    Ok(GradientAccumulator {
        update: sums.update(strategy, weights),
        beta_r: sums.instance_stats.active,
        beta_s: sums.semantic_stats.active,
        total_r: sums.instance_stats.total,
        total_s: sums.semantic_stats.total,
        loss: sums.loss(strategy, weights),
    })
}

/// Adaptive update: each kind's gradient sum divided by its number of active
/// triplets, semantic part weighted by `lambda`.
pub fn aggregate_adaptive(
    params: &EncoderParams,
    batch: &Batch<'_>,
    plan: &TripletPlan,
    config: &LossConfig,
) -> Result<GradientAccumulator> {
    aggregate(params, batch, plan, config, Strategy::Adaptive)
}

/// Average update: each kind's gradient sum divided by its number of
/// enumerated triplets.
pub fn aggregate_average(
    params: &EncoderParams,
    batch: &Batch<'_>,
    plan: &TripletPlan,
    config: &LossConfig,
) -> Result<GradientAccumulator> {
    aggregate(params, batch, plan, config, Strategy::Average)
}

/// Pairwise-with-positive-margin term over all cross-modal pairs, in both
/// directions: the matching pair is a positive, every other pair a negative.
pub fn pairwise_term(
    params: &EncoderParams,
    fwd: &BatchForward,
    alpha_pos: f64,
    alpha_neg: f64,
) -> Result<(EncoderParams, TermStats)> {
    let n = fwd.len();
    let mut coeffs = vec![0.0; n * n];
    let mut stats = TermStats::default();
    for dir in Direction::BOTH {
        for q in 0..n {
            for c in 0..n {
                let (a, b) = dir.pair(q, c);
                let d = fwd.distance(a, b);
                stats.total += 1;
                let (loss, sign) = if q == c {
                    (d - alpha_pos, 1.0)
                } else {
                    (alpha_neg - d, -1.0)
                };
                if loss > 0.0 {
                    stats.active += 1;
                    stats.loss_sum += loss;
                    coeffs[a * n + b] += sign;
                }
            }
        }
    }
    if stats.active == 0 {
        return Ok((params.zeros_like(), stats));
    }
    let (ga, gb) = fwd.distance_grads(&coeffs);
    Ok((fwd.backprop(params, &ga, &gb)?, stats))
}
