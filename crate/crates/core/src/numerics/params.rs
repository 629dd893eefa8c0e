use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{MacaError, Result};
use crate::scalar::Scalar;

/// Handle to a tensor owned by a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Glorot-uniform scaled by `gain`.
    Xavier {
        gain: f64,
    },
    Normal {
        std: f64,
    },
}

/// Owns trainable tensors and their gradient accumulators. Gradient shapes
/// always mirror value shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let id = ParamId(self.values.len());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name.into());
        id
    }

    pub fn add_init<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Xavier { gain } => {
                let fan_in = if shape.len() > 1 { shape[0] } else { 1 };
                let fan_out = *shape.last().unwrap_or(&1);
                let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect()
            }
            Init::Normal { std } => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    T::lit(std * z)
                })
                .collect(),
        };
        self.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor<T>) -> Result<()> {
        self.grads[id.0].add_assign(grad)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn grad_norm(&self) -> T {
        self.grads.iter().map(Tensor::sq_norm).sum::<T>().sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self.grad_norm();
        if norm > max_norm && norm > T::zero() {
            let s = max_norm / norm;
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|x| *x *= s);
            }
        }
        norm
    }

    pub fn flat_values(&self) -> Vec<T> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.grads.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(MacaError::shape(format!(
                "flat parameter vector has {} entries, store holds {}",
                flat.len(),
                self.numel()
            )));
        }
        let mut offset = 0;
        for v in &mut self.values {
            let n = v.len();
            v.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Locates the flat index `k` as (parameter, offset within it).
    pub(crate) fn locate(&self, mut k: usize) -> (ParamId, usize) {
        for (i, v) in self.values.iter().enumerate() {
            if k < v.len() {
                return (ParamId(i), k);
            }
            k -= v.len();
        }
        panic!("flat index out of range");
    }
}
