//! Cross-modal retrieval evaluation: rank of the matching item, median rank
//! (MedR), recall at K, and the repeated-subset protocol in both directions.

use std::fmt::Write as _;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::{encode, EncoderParams, Side};
use crate::error::{Error, Result};
use crate::math::{self, cosine_distance, RngSeed};
use crate::mining::Direction;

/// Cut-offs reported by [`RetrievalReport`].
pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// 1-based rank of `candidates[match_index]` when candidates are sorted by
/// cosine distance to `query`. Ties are broken by candidate index.
pub fn rank_of_match<C: AsRef<[f64]>>(query: &[f64], candidates: &[C], match_index: usize) -> Result<usize> {
    if match_index >= candidates.len() {
        return Err(Error::Config(format!(
            "match index {match_index} out of range for {} candidates",
            candidates.len()
        )));
    }
    let dists = candidates
        .iter()
        .map(|c| cosine_distance(query, c.as_ref()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(rank_in(&dists, match_index))
}

fn rank_in(dists: &[f64], m: usize) -> usize {
    let dm = dists[m];
    1 + dists
        .iter()
        .enumerate()
        .filter(|&(j, &d)| j != m && (d < dm || (d == dm && j < m)))
        .count()
}

/// Median; the mean of the two central values for an even count.
pub fn medr(ranks: &[usize]) -> f64 {
    assert!(!ranks.is_empty(), "median of an empty rank list");
    let mut r = ranks.to_vec();
    r.sort_unstable();
    let n = r.len();
    if n % 2 == 1 {
        r[n / 2] as f64
    } else {
        (r[n / 2 - 1] + r[n / 2]) as f64 / 2.0
    }
}

/// Percentage of ranks `<= k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Ranks of every matching item, in both directions, for aligned latent
/// lists (`a[i]` matches `b[i]`).
pub fn ranks_both_directions(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let na: Vec<f64> = a.iter().map(|v| math::norm(v)).collect();
    let nb: Vec<f64> = b.iter().map(|v| math::norm(v)).collect();
    if na.iter().chain(&nb).any(|&x| x == 0.0) {
        return Err(Error::Degenerate("zero-norm latent point"));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        if a[i].len() != b.first().map_or(0, Vec::len) {
            return Err(Error::DimensionMismatch {
                expected: b[0].len(),
                found: a[i].len(),
            });
        }
        for j in 0..n {
            dist[i * n + j] = 1.0 - math::dot(&a[i], &b[j]) / (na[i] * nb[j]);
        }
    }
    let a_to_b = (0..n).map(|i| rank_in(&dist[i * n..(i + 1) * n], i)).collect();
    let mut column = vec![0.0; n];
    let b_to_a = (0..n)
        .map(|j| {
            for (i, c) in column.iter_mut().enumerate() {
                *c = dist[i * n + j];
            }
            rank_in(&column, j)
        })
        .collect();
    Ok((a_to_b, b_to_a))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

/// Metrics of one subset in one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetMetrics {
    pub medr: f64,
    pub recall: [f64; 3],
}

impl SubsetMetrics {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        SubsetMetrics {
            medr: medr(ranks),
            recall: RECALL_KS.map(|k| recall_at_k(ranks, k)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DirectionReport {
    pub medr: MeanStd,
    pub r1: MeanStd,
    pub r5: MeanStd,
    pub r10: MeanStd,
}

impl DirectionReport {
    fn from_subsets(subsets: &[SubsetMetrics]) -> Self {
        let col = |f: &dyn Fn(&SubsetMetrics) -> f64| MeanStd::of(&subsets.iter().map(f).collect::<Vec<_>>());
        DirectionReport {
            medr: col(&|m| m.medr),
            r1: col(&|m| m.recall[0]),
            r5: col(&|m| m.recall[1]),
            r10: col(&|m| m.recall[2]),
        }
    }
}

/// MedR and R@{1,5,10} per direction, mean and standard deviation over the
/// evaluated subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub subset_size: usize,
    pub n_subsets: usize,
    pub seed: u64,
    pub a_to_b: DirectionReport,
    pub b_to_a: DirectionReport,
}

impl RetrievalReport {
    pub fn direction(&self, dir: Direction) -> &DirectionReport {
        match dir {
            Direction::AtoB => &self.a_to_b,
            Direction::BtoA => &self.b_to_a,
        }
    }

    /// Mean MedR averaged over the two directions.
    pub fn mean_medr(&self) -> f64 {
        (self.a_to_b.medr.mean + self.b_to_a.medr.mean) / 2.0
    }

    /// Flat `key = value` block.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        writeln!(s, "subset_size = {}", self.subset_size).unwrap();
        writeln!(s, "n_subsets = {}", self.n_subsets).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        for (name, d) in [("a_to_b", &self.a_to_b), ("b_to_a", &self.b_to_a)] {
            for (metric, v) in [("medr", d.medr), ("r1", d.r1), ("r5", d.r5), ("r10", d.r10)] {
                writeln!(s, "{name}.{metric} = {:.2} +- {:.2}", v.mean, v.std).unwrap();
            }
        }
        s
    }

    pub const TSV_HEADER: &'static str = "name\tdirection\tmedr_mean\tmedr_std\tr1_mean\tr1_std\tr5_mean\tr5_std\tr10_mean\tr10_std\tsubset_size\tn_subsets\tseed";

    /// One row per direction, columns as in [`RetrievalReport::TSV_HEADER`].
    pub fn tsv_rows(&self, name: &str) -> String {
        let mut s = String::new();
        for (dir, d) in [("a_to_b", &self.a_to_b), ("b_to_a", &self.b_to_a)] {
            writeln!(
                s,
                "{name}\t{dir}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                d.medr.mean,
                d.medr.std,
                d.r1.mean,
                d.r1.std,
                d.r5.mean,
                d.r5.std,
                d.r10.mean,
                d.r10.std,
                self.subset_size,
                self.n_subsets,
                self.seed
            )
            .unwrap();
        }
        s
    }
}

/// Latent points of every pair of `dataset`, per modality.
pub fn encode_dataset(params: &EncoderParams, dataset: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut a = Vec::with_capacity(dataset.len());
    let mut b = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        a.push(encode(params, Side::A, &s.features_a)?);
        b.push(encode(params, Side::B, &s.features_b)?);
    }
    Ok((a, b))
}

/// Subset protocol over precomputed latent points.
///
/// Subset `k` is drawn without replacement from a stream derived from
/// `seed` and `k`; different subsets may overlap.
pub fn subset_protocol_latents(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    subset_size: usize,
    n_subsets: usize,
    seed: RngSeed,
) -> Result<RetrievalReport> {
    if subset_size == 0 || n_subsets == 0 {
        return Err(Error::Config("subset_size and n_subsets must be positive".into()));
    }
    if a.len() < subset_size {
        return Err(Error::TooSmall {
            required: subset_size,
            available: a.len(),
        });
    }
    let mut per_dir: [Vec<SubsetMetrics>; 2] = [Vec::new(), Vec::new()];
    for k in 0..n_subsets {
        let mut rng = seed.derive(k as u64).rng();
        let mut idx = index::sample(&mut rng, a.len(), subset_size).into_vec();
        idx.sort_unstable();
        let sa: Vec<Vec<f64>> = idx.iter().map(|&i| a[i].clone()).collect();
        let sb: Vec<Vec<f64>> = idx.iter().map(|&i| b[i].clone()).collect();
        let (ab, ba) = ranks_both_directions(&sa, &sb)?;
        per_dir[0].push(SubsetMetrics::from_ranks(&ab));
        per_dir[1].push(SubsetMetrics::from_ranks(&ba));
    }
    Ok(RetrievalReport {
        subset_size,
        n_subsets,
        seed: seed.0,
        a_to_b: DirectionReport::from_subsets(&per_dir[0]),
        b_to_a: DirectionReport::from_subsets(&per_dir[1]),
    })
}

/// Encodes `dataset` and runs [`subset_protocol_latents`].
pub fn subset_protocol(
    params: &EncoderParams,
    dataset: &Dataset,
    subset_size: usize,
    n_subsets: usize,
    seed: RngSeed,
) -> Result<RetrievalReport> {
    if dataset.len() < subset_size {
        return Err(Error::TooSmall {
            required: subset_size,
            available: dataset.len(),
        });
    }
    let (a, b) = encode_dataset(params, dataset)?;
    subset_protocol_latents(&a, &b, subset_size, n_subsets, seed)
}
