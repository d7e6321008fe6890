//! Epoch-level mini-batch construction.
//!
//! Each batch holds `round(batch_size * labeled_fraction)` labeled pairs,
//! drawn so that per-class counts follow the class distribution of the
//! remaining labeled pool, and fills the rest with uniformly drawn unlabeled
//! pairs. No pair is used twice in an epoch and a trailing partial batch is
//! dropped.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::math::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    /// Dataset indices; labeled pairs first.
    pub pair_indices: Vec<usize>,
    pub labeled_count: usize,
    pub unlabeled_count: usize,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.pair_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pair_indices.is_empty()
    }
}

/// Per-class quotas for `k` draws, proportional to `counts` with
/// largest-remainder rounding (ties go to the smaller class id).
fn largest_remainder(counts: &[(usize, usize)], k: usize) -> Vec<usize> {
    let total: usize = counts.iter().map(|c| c.1).sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut quotas: Vec<usize> = counts.iter().map(|&(_, n)| k * n / total).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // remainder of k*n/total is (k*n) % total; compare exactly in integers
    order.sort_by_key(|&i| (std::cmp::Reverse((k * counts[i].1) % total), counts[i].0));
    for &i in order.iter().take(k - assigned) {
        quotas[i] += 1;
    }
    quotas
}

/// Draws `k` pair indices without replacement from `pool` (pairs of
/// `(pair index, class)`) with per-class counts proportional to the class
/// frequencies of the pool. `k` larger than the pool is clamped.
pub fn class_proportional_draw(pool: &[(usize, usize)], k: usize, rng: &mut Rng) -> Vec<usize> {
    let k = k.min(pool.len());
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(idx, class) in pool {
        by_class.entry(class).or_default().push(idx);
    }
    let counts: Vec<(usize, usize)> = by_class.iter().map(|(&c, v)| (c, v.len())).collect();
    let quotas = largest_remainder(&counts, k);
    let mut out = Vec::with_capacity(k);
    for ((_, members), q) in by_class.iter().zip(quotas) {
        out.extend(index::sample(rng, members.len(), q).into_iter().map(|i| members[i]));
    }
    out.shuffle(rng);
    out
}

/// Builds one epoch of mini-batches over a dataset with the given labels.
///
/// When a batch cannot get its labeled quota the remainder is filled with
/// unlabeled pairs, and vice versa; such batches are reported through `log`.
pub fn build_epoch_batches(
    labels: &[Option<usize>],
    batch_size: usize,
    labeled_fraction: f64,
    rng: &mut Rng,
) -> Result<Vec<MiniBatch>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch_size must be >= 2, got {batch_size}")));
    }
    if !(0.0..=1.0).contains(&labeled_fraction) {
        return Err(Error::Config(format!(
            "labeled_fraction must be in [0, 1], got {labeled_fraction}"
        )));
    }
    let mut labeled: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|c| (i, c)))
        .collect();
    let mut unlabeled: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_none()).collect();
    unlabeled.shuffle(rng);

    let n_batches = labels.len() / batch_size;
    let quota = (batch_size as f64 * labeled_fraction).round() as usize;
    let mut batches = Vec::with_capacity(n_batches);
    let mut fallbacks = 0;
    for _ in 0..n_batches {
        let take_labeled = quota.max(batch_size.saturating_sub(unlabeled.len())).min(labeled.len());
        let take_unlabeled = batch_size - take_labeled;
        if take_labeled != quota {
            fallbacks += 1;
        }

        let drawn = class_proportional_draw(&labeled, take_labeled, rng);
        let mut taken: Vec<bool> = vec![false; labels.len()];
        for &i in &drawn {
            taken[i] = true;
        }
        labeled.retain(|&(i, _)| !taken[i]);

        let mut pair_indices = drawn;
        pair_indices.extend(unlabeled.drain(unlabeled.len() - take_unlabeled..));
        batches.push(MiniBatch {
            pair_indices,
            labeled_count: take_labeled,
            unlabeled_count: take_unlabeled,
        });
    }
    if fallbacks > 0 {
        log::info!(
            "{fallbacks} of {n_batches} batches could not meet the labeled quota of {quota} and were filled from the other pool"
        );
    }
    Ok(batches)
}
