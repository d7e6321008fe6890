//! Dense vector arithmetic, cosine distance with analytic gradients, L2
//! normalization and seeded randomness.
//!
//! Everything here is a pure function over `f64` slices. Vectors are plain
//! `Vec<f64>`/`&[f64]`; the only owned container with structure is
//! [`Matrix`], a row-major dense matrix used for layer weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic random stream used everywhere in the crate.
pub type Rng = ChaCha8Rng;

/// Seed for a reproducible random stream.
///
/// Independent consumers (sampling, mining, evaluation, ...) derive their own
/// sub-streams with [`RngSeed::derive`] so that adding draws in one place
/// never perturbs another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> Rng {
        Rng::seed_from_u64(self.0)
    }

    /// Sub-seed for stream `stream`, mixed with splitmix64.
    pub fn derive(self, stream: u64) -> RngSeed {
        let mut z = self
            .0
            .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed(seed)
    }
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(())
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `y += scale * x`
#[inline]
pub fn axpy(scale: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += scale * xi;
    }
}

/// Cosine distance `1 - x.y / (|x| |y|)`, in `[0, 2]`.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Degenerate("cosine distance of a zero-norm vector"));
    }
    Ok(1.0 - dot(x, y) / (nx * ny))
}

/// Gradients of [`cosine_distance`] with respect to both arguments.
pub fn cosine_distance_grad(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(x, y)?;
    let (nx, ny) = (norm(x), norm(y));
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Degenerate("cosine distance of a zero-norm vector"));
    }
    let s = dot(x, y);
    let inv = 1.0 / (nx * ny);
    // d/dx [x.y / (|x||y|)] = y/(|x||y|) - (x.y) x / (|x|^3 |y|)
    let cx = s * inv / (nx * nx);
    let cy = s * inv / (ny * ny);
    let gx = x.iter().zip(y).map(|(xi, yi)| -(yi * inv - cx * xi)).collect();
    let gy = x.iter().zip(y).map(|(xi, yi)| -(xi * inv - cy * yi)).collect();
    Ok((gx, gy))
}

/// Returns `x / |x|`.
pub fn l2_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let n = norm(x);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Degenerate("cannot normalize a zero-norm vector"));
    }
    Ok(x.iter().map(|v| v / n).collect())
}

/// Jacobian-vector product of [`l2_normalize`] at `x` applied to `upstream`:
/// `(upstream - u (u . upstream)) / |x|` with `u = x / |x|`.
pub fn l2_normalize_backward(x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
    check_dims(x, upstream)?;
    let n = norm(x);
    if n == 0.0 {
        return Err(Error::Degenerate("cannot normalize a zero-norm vector"));
    }
    let proj = dot(x, upstream) / (n * n);
    Ok(x.iter().zip(upstream).map(|(xi, gi)| (gi - proj * xi) / n).collect())
}

/// Same as [`l2_normalize_backward`] but reuses the already-normalized
/// output `unit` and the pre-normalization norm.
#[inline]
pub(crate) fn normalize_backward_from_unit(unit: &[f64], pre_norm: f64, upstream: &[f64]) -> Vec<f64> {
    let proj = dot(unit, upstream);
    unit.iter()
        .zip(upstream)
        .map(|(u, g)| (g - proj * u) / pre_norm)
        .collect()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data.chunks_exact(self.cols).map(|row| dot(row, x)).collect()
    }

    /// `self^T * y`
    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yr) in self.data.chunks_exact(self.cols).zip(y) {
            if yr != 0.0 {
                axpy(yr, row, &mut out);
            }
        }
        out
    }

    /// `self += scale * u v^T`
    pub fn add_outer(&mut self, scale: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (row, &ur) in self.data.chunks_exact_mut(self.cols).zip(u) {
            let s = scale * ur;
            if s != 0.0 {
                axpy(s, v, row);
            }
        }
    }
}
