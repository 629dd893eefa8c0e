//! Parameterized layers. Each layer only stores [`ParamId`]s; values and
//! gradient accumulators live in the owning [`ParamStore`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Init, ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Linear,
    LayerNorm,
    Embedding,
    SelfAttention,
    MlpBlock,
}

pub trait Layer {
    fn kind(&self) -> LayerKind;
    fn params(&self) -> Vec<ParamId>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Gelu => tape.gelu(x),
        }
    }
}

/// `y = x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_init(format!("{name}.w"), &[in_dim, out_dim], Init::Xavier { gain }, rng);
        let bias = bias.then(|| store.add_init(format!("{name}.b"), &[1, out_dim], Init::Zeros, rng));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

impl Layer for Linear {
    fn kind(&self) -> LayerKind {
        LayerKind::Linear
    }
    fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            gamma: store.add_init(format!("{name}.gamma"), &[1, dim], Init::Ones, rng),
            beta: store.add_init(format!("{name}.beta"), &[1, dim], Init::Zeros, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b)
    }
}

impl Layer for LayerNorm {
    fn kind(&self) -> LayerKind {
        LayerKind::LayerNorm
    }
    fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

/// Projects raw per-agent observation features into the model width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding {
    pub proj: Linear,
}

impl Embedding {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            proj: Linear::new(store, &format!("{name}.proj"), in_dim, width, 1.0, true, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.proj.forward(tape, x)?;
        Ok(tape.gelu(h))
    }
}

impl Layer for Embedding {
    fn kind(&self) -> LayerKind {
        LayerKind::Embedding
    }
    fn params(&self) -> Vec<ParamId> {
        self.proj.params()
    }
}

/// Single-head scaled dot-product self-attention over sets of `n` tokens.
/// Rows of the input are grouped into consecutive blocks of `n` tokens, one
/// block per state; attention never crosses blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub width: usize,
}

impl SelfAttention {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, width: usize, rng: &mut R) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.q"), width, width, 1.0, true, rng),
            key: Linear::new(store, &format!("{name}.k"), width, width, 1.0, true, rng),
            value: Linear::new(store, &format!("{name}.v"), width, width, 1.0, true, rng),
            out: Linear::new(store, &format!("{name}.o"), width, width, 1.0, true, rng),
            width,
        }
    }

    /// Returns the attended output and the `(blocks·n) × n` attention weights.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, n: usize) -> Result<(Var, Var)> {
        let q = self.query.forward(tape, x)?;
        let k = self.key.forward(tape, x)?;
        let v = self.value.forward(tape, x)?;
        let scale = T::one() / T::from_usize(self.width).unwrap().sqrt();
        let scores = tape.block_scores(q, k, n, scale)?;
        let attn = tape.softmax_rows(scores);
        let mixed = tape.block_mix(attn, v, n)?;
        let y = self.out.forward(tape, mixed)?;
        Ok((y, attn))
    }
}

impl Layer for SelfAttention {
    fn kind(&self) -> LayerKind {
        LayerKind::SelfAttention
    }
    fn params(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value, &self.out]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }
}

/// Two-layer position-wise feed-forward block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpBlock {
    pub fc1: Linear,
    pub fc2: Linear,
    pub activation: Activation,
}

impl MlpBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), width, hidden, 1.0, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, width, 1.0, true, rng),
            activation,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, x)?;
        let h = self.activation.apply(tape, h);
        self.fc2.forward(tape, h)
    }
}

impl Layer for MlpBlock {
    fn kind(&self) -> LayerKind {
        LayerKind::MlpBlock
    }
    fn params(&self) -> Vec<ParamId> {
        let mut p = self.fc1.params();
        p.extend(self.fc2.params());
        p
    }
}

/// Post-norm transformer encoder block:
/// `h = LN(x + Attn(x))`, `y = LN(h + MLP(h))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub attn: SelfAttention,
    pub ln1: LayerNorm,
    pub mlp: MlpBlock,
    pub ln2: LayerNorm,
}

impl EncoderBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, width: usize, rng: &mut R) -> Self {
        Self {
            attn: SelfAttention::new(store, &format!("{name}.attn"), width, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), width, rng),
            mlp: MlpBlock::new(store, &format!("{name}.mlp"), width, width, Activation::Gelu, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), width, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, n: usize) -> Result<(Var, Var)> {
        let (a, attn) = self.attn.forward(tape, x, n)?;
        let h = tape.add(x, a)?;
        let h = self.ln1.forward(tape, h)?;
        let m = self.mlp.forward(tape, h)?;
        let y = tape.add(h, m)?;
        let y = self.ln2.forward(tape, y)?;
        Ok((y, attn))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.attn.params();
        p.extend(self.ln1.params());
        p.extend(self.mlp.params());
        p.extend(self.ln2.params());
        p
    }
}

/// Plain feed-forward stack: hidden layers use `activation`, the last layer
/// is linear.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        sizes: &[usize],
        activation: Activation,
        out_gain: f64,
        rng: &mut R,
    ) -> Self {
        let last = sizes.len().saturating_sub(2);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { out_gain } else { 1.0 };
                Linear::new(store, &format!("{name}.{i}"), w[0], w[1], gain, true, rng)
            })
            .collect();
        Self { layers, activation }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(tape, h);
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}

/// Stand-alone self-attention forward pass on one set of `n` tokens.
pub fn self_attention_forward<T: Scalar>(
    store: &ParamStore<T>,
    layer: &SelfAttention,
    x: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if x.cols() != layer.width {
        return Err(crate::error::MacaError::shape(format!(
            "attention width {} but input has {} columns",
            layer.width,
            x.cols()
        )));
    }
    let n = x.rows();
    let mut tape = Tape::new(store);
    let xv = tape.input(x.clone());
    let (y, a) = layer.forward(&mut tape, xv, n)?;
    Ok((tape.value(y).clone(), tape.value(a).clone()))
}
