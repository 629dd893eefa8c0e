use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MacaError, Result};
use crate::numerics::softmax;
use crate::scalar::Scalar;

/// Mixing weights `(ψ_Jnt, ψ_Ind, ψ_Cor)` on the 3-simplex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineWeights<T>(pub [T; 3]);

pub const SIMPLEX_TOL: f64 = 1e-9;

impl<T: Scalar> BaselineWeights<T> {
    pub fn jnt(&self) -> T {
        self.0[0]
    }
    pub fn ind(&self) -> T {
        self.0[1]
    }
    pub fn cor(&self) -> T {
        self.0[2]
    }

    /// Largest violation of nonnegativity or unit sum.
    pub fn simplex_error(&self) -> f64 {
        let sum: T = self.0.iter().copied().sum();
        let neg = self.0.iter().fold(0.0f64, |m, &x| m.max((-x).to_f64_lossy()));
        neg.max((sum - T::one()).abs().to_f64_lossy())
    }

    pub fn validate(&self) -> Result<()> {
        let err = self.simplex_error();
        if err > SIMPLEX_TOL || self.0.iter().any(|x| !x.is_finite()) {
            return Err(MacaError::invalid(format!(
                "baseline weights {:?} are off the simplex by {err:e}",
                self.0
            )));
        }
        Ok(())
    }
}

/// Which baseline components a MACA configuration mixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Full,
    Jnt,
    Ind,
    Cor,
    NoJnt,
    NoInd,
    NoCor,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::Jnt,
        Variant::Ind,
        Variant::Cor,
        Variant::NoJnt,
        Variant::NoInd,
        Variant::NoCor,
    ];

    /// Components kept by the variant, in `(Jnt, Ind, Cor)` order.
    pub fn mask(self) -> [bool; 3] {
        match self {
            Variant::Full => [true, true, true],
            Variant::Jnt => [true, false, false],
            Variant::Ind => [false, true, false],
            Variant::Cor => [false, false, true],
            Variant::NoJnt => [false, true, true],
            Variant::NoInd => [true, false, true],
            Variant::NoCor => [true, true, false],
        }
    }

    /// Whether the weights depend on learned logits.
    pub fn is_learned(self) -> bool {
        self.mask().iter().filter(|&&m| m).count() > 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "Full",
            Variant::Jnt => "Jnt",
            Variant::Ind => "Ind",
            Variant::Cor => "Cor",
            Variant::NoJnt => "NoJnt",
            Variant::NoInd => "NoInd",
            Variant::NoCor => "NoCor",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = MacaError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| MacaError::UnknownVariant(s.to_string()))
    }
}

/// Forces excluded components to exactly zero and takes a softmax over the
/// logits of the remaining ones.
pub fn ablation_variant<T: Scalar>(variant: Variant, logits: [T; 3]) -> Result<BaselineWeights<T>> {
    let mask = variant.mask();
    let kept: Vec<T> = logits.iter().zip(mask).filter(|(_, m)| *m).map(|(&l, _)| l).collect();
    let probs = softmax(&kept)?;
    let mut out = [T::zero(); 3];
    let mut it = probs.into_iter();
    for (slot, m) in out.iter_mut().zip(mask) {
        if m {
            *slot = it.next().expect("one probability per kept component");
        }
    }
    Ok(BaselineWeights(out))
}

/// Affine map from the state embedding (and, per agent, that agent's
/// embedding) to three mixing logits. Parameters are a flat vector so a
/// gradient-free optimizer can drive them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffHead {
    z_dim: usize,
    /// When set, the input is `z_s` only and all agents share one ψ.
    pub shared: bool,
    /// Row-major `3 × (input + 1)`, bias last in each row.
    pub eta: Vec<f64>,
}

impl CoeffHead {
    pub fn zeros(z_dim: usize, shared: bool) -> Self {
        let input = if shared { z_dim } else { 2 * z_dim };
        Self {
            z_dim,
            shared,
            eta: vec![0.0; 3 * (input + 1)],
        }
    }

    pub fn input_dim(&self) -> usize {
        if self.shared {
            self.z_dim
        } else {
            2 * self.z_dim
        }
    }

    pub fn n_params(&self) -> usize {
        self.eta.len()
    }

    pub fn set_eta(&mut self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.eta.len() {
            return Err(MacaError::shape(format!(
                "coefficient head holds {} parameters, got {}",
                self.eta.len(),
                eta.len()
            )));
        }
        self.eta.copy_from_slice(eta);
        Ok(())
    }

    /// Raw logits for `(Jnt, Ind, Cor)`.
    pub fn logits<T: Scalar>(&self, z_s: &[T], z_i: &[T]) -> Result<[T; 3]> {
        if z_s.len() != self.z_dim || (!self.shared && z_i.len() != self.z_dim) {
            return Err(MacaError::shape("coefficient head input width"));
        }
        let width = self.input_dim() + 1;
        let mut out = [T::zero(); 3];
        for (m, slot) in out.iter_mut().enumerate() {
            let row = &self.eta[m * width..(m + 1) * width];
            let mut acc = T::lit(row[width - 1]);
            let inputs = z_s.iter().chain(if self.shared { [].iter() } else { z_i.iter() });
            for (&w, &x) in row.iter().zip(inputs) {
                acc += T::lit(w) * x;
            }
            *slot = acc;
        }
        Ok(out)
    }

    /// `softmax(Lin(z_s, z_i; η))`.
    pub fn coeff<T: Scalar>(&self, z_s: &[T], z_i: &[T]) -> Result<BaselineWeights<T>> {
        ablation_variant(Variant::Full, self.logits(z_s, z_i)?)
    }

    pub fn weights_for<T: Scalar>(&self, variant: Variant, z_s: &[T], z_i: &[T]) -> Result<BaselineWeights<T>> {
        ablation_variant(variant, self.logits(z_s, z_i)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_eta_gives_uniform_weights() {
        let head = CoeffHead::zeros(4, false);
        let w = head.coeff(&[0.3f64; 4], &[-1.0; 4]).unwrap();
        for x in w.0 {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn logits_with_ln2_give_half_quarter_quarter() {
        let w = ablation_variant(Variant::Full, [2f64.ln(), 0.0, 0.0]).unwrap();
        assert!((w.0[0] - 0.5).abs() < 1e-15);
        assert!((w.0[1] - 0.25).abs() < 1e-15);
        assert!((w.0[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn single_component_variants_are_one_hot() {
        let l = [0.3f64, -2.0, 5.0];
        assert_eq!(ablation_variant(Variant::Jnt, l).unwrap().0, [1.0, 0.0, 0.0]);
        assert_eq!(ablation_variant(Variant::Ind, l).unwrap().0, [0.0, 1.0, 0.0]);
        assert_eq!(ablation_variant(Variant::Cor, l).unwrap().0, [0.0, 0.0, 1.0]);
    }

    #[test]
    fn no_cor_with_equal_logits_splits_evenly() {
        let w = ablation_variant(Variant::NoCor, [0.7f64, 0.7, 0.7]).unwrap();
        assert_eq!(w.0, [0.5, 0.5, 0.0]);
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("Half".parse::<Variant>(), Err(MacaError::UnknownVariant(_))));
    }

    #[test]
    fn shared_head_ignores_agent_embedding() {
        let mut head = CoeffHead::zeros(2, true);
        head.set_eta(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
        let a = head.coeff(&[0.2f64, 0.4], &[9.0, 9.0]).unwrap();
        let b = head.coeff(&[0.2f64, 0.4], &[]).unwrap();
        assert_eq!(a, b);
    }
}
