//! Loss functions on latent points and their analytic gradients.
//!
//! The triplet and pairwise hinges use cosine distance. At the hinge kink
//! (loss exactly zero) the subgradient is taken to be zero, so a triplet is
//! "active" iff its loss is strictly positive.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{cosine_distance, cosine_distance_grad};

/// Margins and the semantic weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Triplet margin.
    pub alpha: f64,
    /// Weight of the semantic term (and of the classification term).
    pub lambda: f64,
    /// Pairwise positive margin.
    pub alpha_pos: f64,
    /// Pairwise negative margin.
    pub alpha_neg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.3,
            lambda: 0.3,
            alpha_pos: 0.3,
            alpha_neg: 0.9,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0 <= self.alpha_pos && self.alpha_pos < self.alpha_neg && self.alpha_neg <= 2.0) {
            return Err(Error::Config(format!(
                "pairwise margins must satisfy 0 <= alpha_pos < alpha_neg <= 2, got {} and {}",
                self.alpha_pos, self.alpha_neg
            )));
        }
        Ok(())
    }
}

/// Value and gradients of one triplet hinge.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    pub grad_query: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

impl TripletLoss {
    pub fn is_active(&self) -> bool {
        self.loss > 0.0
    }
}

/// `max(0, d(q, p) + alpha - d(q, n))` and its subgradients.
pub fn triplet_hinge(query: &[f64], positive: &[f64], negative: &[f64], alpha: f64) -> Result<TripletLoss> {
    let d_pos = cosine_distance(query, positive)?;
    let d_neg = cosine_distance(query, negative)?;
    let raw = d_pos + alpha - d_neg;
    let dim = query.len();
    if raw <= 0.0 {
        return Ok(TripletLoss {
            loss: 0.0,
            grad_query: vec![0.0; dim],
            grad_positive: vec![0.0; dim],
            grad_negative: vec![0.0; dim],
        });
    }
    let (gq_pos, gp) = cosine_distance_grad(query, positive)?;
    let (gq_neg, gn) = cosine_distance_grad(query, negative)?;
    Ok(TripletLoss {
        loss: raw,
        grad_query: gq_pos.iter().zip(&gq_neg).map(|(a, b)| a - b).collect(),
        grad_positive: gp,
        grad_negative: gn.into_iter().map(|v| -v).collect(),
    })
}

/// Instance triplet: the positive is the query's matching counterpart.
pub fn instance_triplet_loss(query: &[f64], positive: &[f64], negative: &[f64], alpha: f64) -> Result<TripletLoss> {
    triplet_hinge(query, positive, negative, alpha)
}

/// Semantic triplet: the positive shares the query's class, the negative
/// does not. Same functional form as the instance loss.
pub fn semantic_triplet_loss(query: &[f64], positive: &[f64], negative: &[f64], alpha: f64) -> Result<TripletLoss> {
    triplet_hinge(query, positive, negative, alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub grad_query: Vec<f64>,
    pub grad_other: Vec<f64>,
}

/// Pairwise hinge with a positive margin: `y = 1` penalizes
/// `d - alpha_pos`, `y = 0` penalizes `alpha_neg - d`.
pub fn pairwise_pwpp_loss(query: &[f64], other: &[f64], y: u8, alpha_pos: f64, alpha_neg: f64) -> Result<PairLoss> {
    let sign = match y {
        1 => 1.0,
        0 => -1.0,
        _ => return Err(Error::InvalidTarget(y)),
    };
    let d = cosine_distance(query, other)?;
    let raw = if y == 1 { d - alpha_pos } else { alpha_neg - d };
    if raw <= 0.0 {
        let dim = query.len();
        return Ok(PairLoss {
            loss: 0.0,
            grad_query: vec![0.0; dim],
            grad_other: vec![0.0; dim],
        });
    }
    let (gq, go) = cosine_distance_grad(query, other)?;
    Ok(PairLoss {
        loss: raw,
        grad_query: gq.into_iter().map(|v| sign * v).collect(),
        grad_other: go.into_iter().map(|v| sign * v).collect(),
    })
}

/// Softmax cross-entropy `-log softmax(scores)[label]` and its gradient
/// `softmax(scores) - onehot(label)`.
pub fn classification_ce_loss(scores: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= scores.len() {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: scores.len(),
        });
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (scores[label] - max);
    let mut grad: Vec<f64> = exps.into_iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Joint objective: instance part plus `lambda` times the semantic part.
pub fn total_loss(instance: f64, semantic: f64, lambda: f64) -> f64 {
    instance + lambda * semantic
}
