//! Test oracles written independently of the library code paths: a naive
//! forward pass, central finite differences and a brute-force aggregation.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use xmodal_core::encoder::{encode_backward, init_params, Activation, EncoderParams, EncoderSpec, Side};
use xmodal_core::loss::LossConfig;
use xmodal_core::math::RngSeed;
use xmodal_core::mining::{Batch, Direction, Strategy, Triplet, TripletKind};

pub const FD_STEP: f64 = 1e-6;

/// Forward pass by explicit index loops.
pub fn naive_forward(params: &EncoderParams, side: Side, x: &[f64]) -> Vec<f64> {
    naive_forward_with_pre(params, side, x).0
}

/// Latent point and the hidden-layer pre-activations.
pub fn naive_forward_with_pre(params: &EncoderParams, side: Side, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let branch = match side {
        Side::A => &params.branch_a,
        Side::B => &params.branch_b,
    };
    let mut h = x.to_vec();
    let mut hidden_pre = Vec::new();
    let n = branch.layers.len();
    for (l, layer) in branch.layers.iter().enumerate() {
        let mut z = vec![0.0; layer.bias.len()];
        for (r, zr) in z.iter_mut().enumerate() {
            let mut acc = layer.bias[r];
            for (c, hc) in h.iter().enumerate() {
                acc += layer.weight.get(r, c) * hc;
            }
            *zr = acc;
        }
        if l + 1 < n {
            hidden_pre.extend_from_slice(&z);
            h = z
                .iter()
                .map(|&v| match params.activation {
                    Activation::Relu => {
                        if v > 0.0 {
                            v
                        } else {
                            0.0
                        }
                    }
                    Activation::Tanh => v.tanh(),
                })
                .collect();
        } else {
            h = z;
        }
    }
    let len = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    (h.iter().map(|v| v / len).collect(), hidden_pre)
}

pub fn naive_cosine_distance(x: &[f64], y: &[f64]) -> f64 {
    let mut xy = 0.0;
    let mut xx = 0.0;
    let mut yy = 0.0;
    for i in 0..x.len() {
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
    }
    1.0 - xy / (xx.sqrt() * yy.sqrt())
}

/// d/dx of the cosine distance, written out from the quotient rule.
pub fn naive_cosine_distance_grad_x(x: &[f64], y: &[f64]) -> Vec<f64> {
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    (0..x.len())
        .map(|i| -(y[i] / (nx * ny) - xy * x[i] / (nx.powi(3) * ny)))
        .collect()
}

/// Smallest hidden-layer pre-activation magnitude of the given inputs; a
/// small value means a ReLU kink is within finite-difference reach.
pub fn relu_margin(params: &EncoderParams, inputs: &[(Side, &[f64])]) -> f64 {
    if params.activation != Activation::Relu {
        return f64::INFINITY;
    }
    inputs
        .iter()
        .flat_map(|(side, x)| naive_forward_with_pre(params, *side, x).1)
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Initialized parameters with every entry, biases included, perturbed.
pub fn random_params(spec: &EncoderSpec, n_classes: Option<usize>, seed: u64) -> EncoderParams {
    let mut p = init_params(spec, n_classes, RngSeed(seed)).unwrap();
    let mut rng = RngSeed(seed ^ 0x5eed).rng();
    for (_, t) in p.tensors_mut() {
        for v in t.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += 0.3 * e;
        }
    }
    p
}

/// Random architecture with 1 to 3 layers per branch.
pub fn random_spec(rng: &mut impl Rng) -> EncoderSpec {
    let layers = rng.random_range(1..=3);
    let hidden: Vec<usize> = (1..layers).map(|_| rng.random_range(2..=5)).collect();
    let activation = if rng.random_bool(0.5) {
        Activation::Relu
    } else {
        Activation::Tanh
    };
    EncoderSpec::new(
        rng.random_range(2..=5),
        rng.random_range(2..=5),
        rng.random_range(2..=4),
    )
    .with_hidden(hidden, activation)
}

/// Central finite-difference gradient of `f` over every parameter.
pub fn fd_gradient(params: &EncoderParams, f: impl Fn(&EncoderParams) -> f64) -> EncoderParams {
    let mut grad = params.zeros_like();
    let mut probe = params.clone();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.tensors_mut()[ti].1[i];
            probe.tensors_mut()[ti].1[i] = orig + FD_STEP;
            let up = f(&probe);
            probe.tensors_mut()[ti].1[i] = orig - FD_STEP;
            let down = f(&probe);
            probe.tensors_mut()[ti].1[i] = orig;
            grad.tensors_mut()[ti].1[i] = (up - down) / (2.0 * FD_STEP);
        }
    }
    grad
}

/// `|a - b| / max(|a|, |b|)` over whole parameter vectors; 0 when both vanish.
pub fn relative_error(a: &EncoderParams, b: &EncoderParams) -> f64 {
    let mut diff = a.clone();
    diff.add_scaled(-1.0, b);
    let scale = a.norm().max(b.norm());
    if scale < 1e-12 {
        0.0
    } else {
        diff.norm() / scale
    }
}

/// A batch owning its features.
#[derive(Debug, Clone)]
pub struct OwnedBatch {
    pub features_a: Vec<Vec<f64>>,
    pub features_b: Vec<Vec<f64>>,
    pub labels: Vec<Option<usize>>,
}

impl OwnedBatch {
    pub fn view(&self) -> Batch<'_> {
        Batch {
            features_a: self.features_a.iter().map(Vec::as_slice).collect(),
            features_b: self.features_b.iter().map(Vec::as_slice).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn features(&self, side: Side, i: usize) -> &[f64] {
        match side {
            Side::A => &self.features_a[i],
            Side::B => &self.features_b[i],
        }
    }
}

pub fn random_batch(
    rng: &mut impl Rng,
    n: usize,
    dim_a: usize,
    dim_b: usize,
    n_classes: usize,
    unlabeled_prob: f64,
) -> OwnedBatch {
    let mut vec = |d: usize| -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };
    let features_a = (0..n).map(|_| vec(dim_a)).collect();
    let features_b = (0..n).map(|_| vec(dim_b)).collect();
    let labels = (0..n)
        .map(|_| (!rng.random_bool(unlabeled_prob)).then(|| rng.random_range(0..n_classes)))
        .collect();
    OwnedBatch {
        features_a,
        features_b,
        labels,
    }
}

/// Query side, candidate side.
pub fn sides(direction: Direction) -> (Side, Side) {
    match direction {
        Direction::AtoB => (Side::A, Side::B),
        Direction::BtoA => (Side::B, Side::A),
    }
}

/// Negative-set cap by enumerating every labeled query with a same-class
/// partner and counting its different-class labeled items.
pub fn brute_force_cap(labels: &[Option<usize>]) -> Option<usize> {
    let mut cap: Option<usize> = None;
    for (q, lq) in labels.iter().enumerate() {
        let Some(cq) = lq else { continue };
        let mut has_positive = false;
        let mut negatives = 0;
        for (j, lj) in labels.iter().enumerate() {
            match lj {
                Some(c) if c == cq && j != q => has_positive = true,
                Some(c) if c != cq => negatives += 1,
                _ => {}
            }
        }
        if has_positive {
            cap = Some(cap.map_or(negatives, |m: usize| m.min(negatives)));
        }
    }
    cap.filter(|&c| c > 0)
}

/// Result of the brute-force aggregation.
pub struct BruteForce {
    pub update: EncoderParams,
    pub beta_r: usize,
    pub beta_s: usize,
    pub total_r: usize,
    pub total_s: usize,
}

/// Parameter gradient of one triplet's hinge argument
/// `d(q, p) - d(q, n)`, one latent at a time.
fn triplet_gradient(params: &EncoderParams, batch: &OwnedBatch, t: &Triplet) -> EncoderParams {
    let (qs, cs) = sides(t.direction);
    let zq = naive_forward(params, qs, batch.features(qs, t.query));
    let zp = naive_forward(params, cs, batch.features(cs, t.positive));
    let zn = naive_forward(params, cs, batch.features(cs, t.negative));
    let gq: Vec<f64> = naive_cosine_distance_grad_x(&zq, &zp)
        .iter()
        .zip(naive_cosine_distance_grad_x(&zq, &zn))
        .map(|(a, b)| a - b)
        .collect();
    let gp = naive_cosine_distance_grad_x(&zp, &zq);
    let gn: Vec<f64> = naive_cosine_distance_grad_x(&zn, &zq).iter().map(|v| -v).collect();
    let mut g = encode_backward(params, qs, batch.features(qs, t.query), &gq).unwrap();
    g.add_scaled(
        1.0,
        &encode_backward(params, cs, batch.features(cs, t.positive), &gp).unwrap(),
    );
    g.add_scaled(
        1.0,
        &encode_backward(params, cs, batch.features(cs, t.negative), &gn).unwrap(),
    );
    g
}

fn hinge_argument(params: &EncoderParams, batch: &OwnedBatch, t: &Triplet, alpha: f64) -> f64 {
    let (qs, cs) = sides(t.direction);
    let zq = naive_forward(params, qs, batch.features(qs, t.query));
    let zp = naive_forward(params, cs, batch.features(cs, t.positive));
    let zn = naive_forward(params, cs, batch.features(cs, t.negative));
    naive_cosine_distance(&zq, &zp) + alpha - naive_cosine_distance(&zq, &zn)
}

/// Literal aggregation: instance triplets from a triple loop over
/// (query, positive, negative), semantic triplets as given, explicit
/// indicator counting, then per-kind normalization.
pub fn brute_force_aggregate(
    params: &EncoderParams,
    batch: &OwnedBatch,
    semantic: &[Triplet],
    config: &LossConfig,
    strategy: Strategy,
    with_instance: bool,
) -> BruteForce {
    let n = batch.len();
    let mut instance = Vec::new();
    if with_instance {
        for direction in [Direction::AtoB, Direction::BtoA] {
            for q in 0..n {
                for p in 0..n {
                    for neg in 0..n {
                        if p == q && neg != q {
                            instance.push(Triplet {
                                query: q,
                                positive: p,
                                negative: neg,
                                kind: TripletKind::Instance,
                                direction,
                            });
                        }
                    }
                }
            }
        }
    }
    let mut sums = [params.zeros_like(), params.zeros_like()];
    let mut active = [0usize; 2];
    for (k, list) in [&instance[..], semantic].into_iter().enumerate() {
        for t in list {
            if hinge_argument(params, batch, t, config.alpha) > 0.0 {
                active[k] += 1;
                sums[k].add_scaled(1.0, &triplet_gradient(params, batch, t));
            }
        }
    }
    let totals = [instance.len(), semantic.len()];
    let weights = [1.0, config.lambda];
    let mut update = params.zeros_like();
    for k in 0..2 {
        let divisor = match strategy {
            Strategy::Adaptive => active[k],
            Strategy::Average => totals[k],
        };
        if divisor > 0 && active[k] > 0 {
            update.add_scaled(weights[k] / divisor as f64, &sums[k]);
        }
    }
    BruteForce {
        update,
        beta_r: active[0],
        beta_s: active[1],
        total_r: totals[0],
        total_s: totals[1],
    }
}

/// Checks that `semantic` is a valid semantic triplet set for `labels`:
/// labeled queries, same-class non-matching positive, labeled other-class
/// negatives, one positive per query, and exactly `min(cap, available)`
/// distinct negatives per query.
pub fn check_semantic_plan(labels: &[Option<usize>], semantic: &[Triplet]) -> Result<(), String> {
    let cap = brute_force_cap(labels);
    for direction in [Direction::AtoB, Direction::BtoA] {
        for q in 0..labels.len() {
            let mine: Vec<&Triplet> = semantic
                .iter()
                .filter(|t| t.direction == direction && t.query == q)
                .collect();
            let Some(cq) = labels[q] else {
                if !mine.is_empty() {
                    return Err(format!("unlabeled query {q} has triplets"));
                }
                continue;
            };
            let has_positive = labels.iter().enumerate().any(|(j, l)| j != q && *l == Some(cq));
            let available = labels.iter().filter(|l| matches!(l, Some(c) if *c != cq)).count();
            let expected = match (has_positive, cap) {
                (true, Some(c)) => c.min(available),
                _ => 0,
            };
            if mine.len() != expected {
                return Err(format!("query {q}: {} triplets, expected {expected}", mine.len()));
            }
            let mut negs: Vec<usize> = mine.iter().map(|t| t.negative).collect();
            negs.sort_unstable();
            negs.dedup();
            if negs.len() != mine.len() {
                return Err(format!("query {q}: repeated negatives"));
            }
            for t in &mine {
                if t.kind != TripletKind::Semantic
                    || t.positive == q
                    || labels[t.positive] != Some(cq)
                    || t.positive != mine[0].positive
                    || !matches!(labels[t.negative], Some(c) if c != cq)
                {
                    return Err(format!("query {q}: invalid triplet {t:?}"));
                }
            }
        }
    }
    Ok(())
}
