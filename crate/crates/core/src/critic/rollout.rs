use crate::error::{MacaError, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Row-stochastic agent-to-agent correlation matrix aggregated over encoder
/// blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRollout<T> {
    pub matrix: Tensor<T>,
}

impl<T: Scalar> AttentionRollout<T> {
    pub fn n(&self) -> usize {
        self.matrix.rows()
    }

    pub fn weight(&self, i: usize, j: usize) -> T {
        self.matrix.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.matrix.row(i)
    }
}

const STOCHASTIC_TOL: f64 = 1e-8;

/// Attention rollout with residual mixing: every block's attention `A` is
/// replaced by `row-normalize(½A + ½I)` and the blocks are composed so that
/// later blocks multiply on the left, `Ã = Â_L ⋯ Â_1`.
pub fn attention_rollout<T: Scalar>(per_layer: &[Tensor<T>]) -> Result<AttentionRollout<T>> {
    let first = per_layer
        .first()
        .ok_or_else(|| MacaError::invalid("attention rollout needs at least one layer"))?;
    let n = first.rows();
    let half = T::lit(0.5);
    let tol = T::lit(STOCHASTIC_TOL);
    let mut rollout: Option<Tensor<T>> = None;
    for a in per_layer {
        if a.rows() != n || a.cols() != n {
            return Err(MacaError::shape(format!(
                "attention layer {:?} is not {n}×{n}",
                a.shape()
            )));
        }
        for r in 0..n {
            let row = a.row(r);
            if row.iter().any(|&x| !x.is_finite() || x < -tol)
                || (row.iter().copied().sum::<T>() - T::one()).abs() > tol
            {
                return Err(MacaError::invalid(format!(
                    "attention row {r} is not a probability vector"
                )));
            }
        }
        let mut mixed = a.scale(half);
        for i in 0..n {
            let v = mixed.get(i, i) + half;
            mixed.set(i, i, v);
        }
        for r in 0..n {
            let s: T = mixed.row(r).iter().copied().sum();
            mixed.row_mut(r).iter_mut().for_each(|x| *x /= s);
        }
        rollout = Some(match rollout {
            None => mixed,
            Some(prev) => mixed.matmul(&prev)?,
        });
    }
    Ok(AttentionRollout {
        matrix: rollout.expect("at least one layer"),
    })
}
