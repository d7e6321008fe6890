//! The two trainable branches that map per-modality feature vectors into the
//! shared latent space, plus the optional linear classification head.
//!
//! A branch is a stack of affine layers. Hidden layers apply the configured
//! activation, the last layer is linear, and the output is L2-normalized so
//! every latent point lies on the unit sphere.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Matrix, RngSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed from the pre-activation value.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Which of the two modalities / branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

/// Architecture of both branches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub input_dim_a: usize,
    pub input_dim_b: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

fn default_latent_dim() -> usize {
    64
}

impl EncoderSpec {
    pub fn new(input_dim_a: usize, input_dim_b: usize, latent_dim: usize) -> Self {
        EncoderSpec {
            input_dim_a,
            input_dim_b,
            hidden_dims: Vec::new(),
            latent_dim,
            activation: Activation::Relu,
        }
    }

    pub fn with_hidden(mut self, hidden_dims: Vec<usize>, activation: Activation) -> Self {
        self.hidden_dims = hidden_dims;
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim_a == 0 || self.input_dim_b == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.latent_dim < 2 {
            return Err(Error::Config("latent_dim must be at least 2".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self, side: Side) -> usize {
        match side {
            Side::A => self.input_dim_a,
            Side::B => self.input_dim_b,
        }
    }

    fn layer_dims(&self, side: Side) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim(side);
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.latent_dim)) {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims
    }
}

/// Affine map `weight * x + bias`; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: vec![0.0; fan_out],
        }
    }

    fn uniform(fan_in: usize, fan_out: usize, rng: &mut math::Rng) -> Self {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut layer = Linear::zeros(fan_in, fan_out);
        for w in layer.weight.as_mut_slice() {
            *w = rng.random_range(-s..=s);
        }
        layer
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.mul_vec(x);
        for (yi, bi) in y.iter_mut().zip(&self.bias) {
            *yi += bi;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub layers: Vec<Linear>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input of each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    pre_norm: f64,
    latent: Vec<f64>,
}

impl ForwardTrace {
    pub fn latent(&self) -> &[f64] {
        &self.latent
    }

    pub fn into_latent(self) -> Vec<f64> {
        self.latent
    }
}

impl Branch {
    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::fan_out)
    }

    pub fn forward_trace(&self, activation: Activation, features: &[f64]) -> Result<ForwardTrace> {
        if features.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: features.len(),
            });
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = features.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            let next = if i + 1 < n {
                z.iter().map(|&v| activation.apply(v)).collect()
            } else {
                z.clone()
            };
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        let pre_norm = math::norm(&h);
        if pre_norm == 0.0 || !pre_norm.is_finite() {
            return Err(Error::Degenerate("branch output has zero norm before normalization"));
        }
        let latent = h.iter().map(|v| v / pre_norm).collect();
        Ok(ForwardTrace {
            inputs,
            pre,
            pre_norm,
            latent,
        })
    }

    /// Accumulates `d(upstream . latent)/d(params)` into `grads`.
    pub fn backward(
        &self,
        activation: Activation,
        trace: &ForwardTrace,
        upstream: &[f64],
        grads: &mut Branch,
    ) -> Result<()> {
        if upstream.len() != trace.latent.len() {
            return Err(Error::DimensionMismatch {
                expected: trace.latent.len(),
                found: upstream.len(),
            });
        }
        let mut delta = math::normalize_backward_from_unit(&trace.latent, trace.pre_norm, upstream);
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                for (d, &z) in delta.iter_mut().zip(&trace.pre[i]) {
                    *d *= activation.derivative(z);
                }
            }
            let g = &mut grads.layers[i];
            g.weight.add_outer(1.0, &delta, &trace.inputs[i]);
            math::axpy(1.0, &delta, &mut g.bias);
            if i > 0 {
                delta = self.layers[i].weight.transpose_mul_vec(&delta);
            }
        }
        Ok(())
    }
}

/// Owner of a parameter tensor, used for branch freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorOwner {
    Branch(Side),
    Head,
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub owner: TensorOwner,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// All trainable parameters. The same type doubles as a gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub activation: Activation,
    pub branch_a: Branch,
    pub branch_b: Branch,
    /// Stored as `n_classes x latent_dim`.
    pub head: Option<Linear>,
}

/// Uniform fan-in/fan-out initialization, zero biases.
pub fn init_params(spec: &EncoderSpec, n_classes: Option<usize>, seed: RngSeed) -> Result<EncoderParams> {
    spec.validate()?;
    let mut rng = seed.rng();
    let mut branch = |side| Branch {
        layers: spec
            .layer_dims(side)
            .into_iter()
            .map(|(i, o)| Linear::uniform(i, o, &mut rng))
            .collect(),
    };
    let branch_a = branch(Side::A);
    let branch_b = branch(Side::B);
    let head = match n_classes {
        Some(0) => return Err(Error::Config("classification head needs at least one class".into())),
        Some(c) => Some(Linear::uniform(spec.latent_dim, c, &mut rng)),
        None => None,
    };
    Ok(EncoderParams {
        activation: spec.activation,
        branch_a,
        branch_b,
        head,
    })
}

impl EncoderParams {
    pub fn branch(&self, side: Side) -> &Branch {
        match side {
            Side::A => &self.branch_a,
            Side::B => &self.branch_b,
        }
    }

    pub fn branch_mut(&mut self, side: Side) -> &mut Branch {
        match side {
            Side::A => &mut self.branch_a,
            Side::B => &mut self.branch_b,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.branch_a.output_dim()
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.head.as_ref().map(Linear::fan_out)
    }

    /// Architecture these parameters were built for.
    pub fn spec(&self) -> EncoderSpec {
        let layers = &self.branch_a.layers;
        EncoderSpec {
            input_dim_a: self.branch_a.input_dim(),
            input_dim_b: self.branch_b.input_dim(),
            hidden_dims: layers[..layers.len() - 1].iter().map(Linear::fan_out).collect(),
            latent_dim: self.latent_dim(),
            activation: self.activation,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let zero_branch = |b: &Branch| Branch {
            layers: b
                .layers
                .iter()
                .map(|l| Linear::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        };
        EncoderParams {
            activation: self.activation,
            branch_a: zero_branch(&self.branch_a),
            branch_b: zero_branch(&self.branch_b),
            head: self.head.as_ref().map(|h| Linear::zeros(h.fan_in(), h.fan_out())),
        }
    }

    /// Named tensors in a fixed order: branch A layers, branch B layers, head.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (prefix, side, branch) in [("a", Side::A, &self.branch_a), ("b", Side::B, &self.branch_b)] {
            for (i, layer) in branch.layers.iter().enumerate() {
                push_linear(&mut out, &format!("{prefix}.{i}"), TensorOwner::Branch(side), layer);
            }
        }
        if let Some(head) = &self.head {
            push_linear(&mut out, "head", TensorOwner::Head, head);
        }
        out
    }

    /// Mutable slices in the same order as [`EncoderParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(TensorOwner, &mut [f64])> {
        let mut out: Vec<(TensorOwner, &mut [f64])> = Vec::new();
        for (side, branch) in [(Side::A, &mut self.branch_a), (Side::B, &mut self.branch_b)] {
            for layer in branch.layers.iter_mut() {
                out.push((TensorOwner::Branch(side), layer.weight.as_mut_slice()));
                out.push((TensorOwner::Branch(side), layer.bias.as_mut_slice()));
            }
        }
        if let Some(head) = &mut self.head {
            out.push((TensorOwner::Head, head.weight.as_mut_slice()));
            out.push((TensorOwner::Head, head.bias.as_mut_slice()));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// `self += scale * other`; shapes must match.
    pub fn add_scaled(&mut self, scale: f64, other: &EncoderParams) {
        let src = other.tensors();
        for ((_, dst), s) in self.tensors_mut().into_iter().zip(src) {
            math::axpy(scale, s.data, dst);
        }
    }

    pub fn dot(&self, other: &EncoderParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .map(|(a, b)| math::dot(a.data, b.data))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &EncoderParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.data.iter().zip(b.data).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

fn push_linear<'a>(out: &mut Vec<TensorRef<'a>>, name: &str, owner: TensorOwner, layer: &'a Linear) {
    out.push(TensorRef {
        name: format!("{name}.weight"),
        owner,
        shape: vec![layer.weight.rows(), layer.weight.cols()],
        data: layer.weight.as_slice(),
    });
    out.push(TensorRef {
        name: format!("{name}.bias"),
        owner,
        shape: vec![layer.bias.len()],
        data: &layer.bias,
    });
}

/// Maps `features` of modality `side` to a unit-norm latent point.
pub fn encode(params: &EncoderParams, side: Side, features: &[f64]) -> Result<Vec<f64>> {
    Ok(params
        .branch(side)
        .forward_trace(params.activation, features)?
        .into_latent())
}

/// Gradient of `upstream . encode(params, side, features)` with respect to
/// every parameter. Tensors of the other branch and of the head are zero.
pub fn encode_backward(
    params: &EncoderParams,
    side: Side,
    features: &[f64],
    upstream: &[f64],
) -> Result<EncoderParams> {
    let branch = params.branch(side);
    let trace = branch.forward_trace(params.activation, features)?;
    let mut grads = params.zeros_like();
    branch.backward(params.activation, &trace, upstream, grads.branch_mut(side))?;
    Ok(grads)
}

/// Class scores `head.weight * latent + head.bias`.
pub fn classification_head_forward(params: &EncoderParams, latent: &[f64]) -> Result<Vec<f64>> {
    let head = params.head.as_ref().ok_or(Error::MissingHead)?;
    if latent.len() != head.fan_in() {
        return Err(Error::DimensionMismatch {
            expected: head.fan_in(),
            found: latent.len(),
        });
    }
    Ok(head.forward(latent))
}

/// Accumulates head gradients for upstream `score_grad` and returns the
/// gradient with respect to `latent`.
pub(crate) fn classification_head_backward(
    head: &Linear,
    latent: &[f64],
    score_grad: &[f64],
    head_grads: &mut Linear,
) -> Vec<f64> {
    head_grads.weight.add_outer(1.0, score_grad, latent);
    math::axpy(1.0, score_grad, &mut head_grads.bias);
    head.weight.transpose_mul_vec(score_grad)
}
