//! Multi-level counterfactual baselines and advantages.
//!
//! For agent `i` the joint baseline marginalizes every agent, the
//! individual baseline marginalizes `i` alone and the CorrSet baseline
//! marginalizes the agents whose attention-rollout weight from `i` clears a
//! threshold. All three marginalize `a_i`, so any convex mix of them is
//! independent of agent `i`'s own action.

mod weights;

pub use weights::{ablation_variant, BaselineWeights, CoeffHead, Variant, SIMPLEX_TOL};

use serde::{Deserialize, Serialize};

use crate::critic::{attention_rollout, marginalized_dist, validate_subset, AttentionRollout, BatchEncoding, Critic};
use crate::envs::Timestep;
use crate::error::{MacaError, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Agents strongly correlated with `agent`; always contains `agent`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorrSet {
    pub agent: usize,
    pub members: Vec<usize>,
}

impl CorrSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.members.binary_search(&j).is_ok()
    }
}

/// Default threshold `1/n`.
pub fn default_sigma(n_agents: usize) -> f64 {
    1.0 / n_agents as f64
}

/// `{j : Ã[i, j] ≥ σ} ∪ {i}` (ties included).
pub fn corrset<T: Scalar>(rollout: &AttentionRollout<T>, agent: usize, sigma: f64) -> Result<CorrSet> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(MacaError::invalid(format!("threshold {sigma} outside [0, 1]")));
    }
    let n = rollout.n();
    if agent >= n {
        return Err(MacaError::invalid(format!("agent {agent} outside 0..{n}")));
    }
    let s = T::lit(sigma);
    let members = (0..n)
        .filter(|&j| j == agent || rollout.weight(agent, j) >= s)
        .collect();
    Ok(CorrSet { agent, members })
}

/// `E_{a_G}[Q(s, a)]` evaluated in one pass of the affine Q head at `π̄_G`.
/// `agent` must belong to `subset`, otherwise the baseline would depend on
/// that agent's own action.
pub fn k_level_baseline<T: Scalar>(
    critic: &Critic<T>,
    z_s: &[T],
    policies: &[Vec<T>],
    taken: &[usize],
    agent: usize,
    subset: &[usize],
) -> Result<T> {
    let subset = validate_subset(subset, policies.len())?;
    if subset.binary_search(&agent).is_err() {
        return Err(MacaError::invalid(format!(
            "agent {agent} must be in the marginalized subset {subset:?}"
        )));
    }
    critic.q_value(z_s, &marginalized_dist(policies, taken, &subset)?)
}

/// `ψ_Jnt·b_Jnt + ψ_Ind·b_Ind + ψ_Cor·b_Cor`.
pub fn maca_baseline<T: Scalar>(b_jnt: T, b_ind: T, b_cor: T, psi: &BaselineWeights<T>) -> Result<T> {
    psi.validate()?;
    Ok(psi.jnt() * b_jnt + psi.ind() * b_ind + psi.cor() * b_cor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdvantageRow<T> {
    pub q_taken: T,
    pub b_jnt: T,
    pub b_ind: T,
    pub b_cor: T,
    pub b_maca: T,
    pub advantage: T,
    pub psi: [T; 3],
    pub corrset_size: usize,
}

/// Per timestep, per agent advantage components.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageEstimate<T> {
    pub rows: Vec<Vec<AdvantageRow<T>>>,
}

impl<T: Scalar> AdvantageEstimate<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Advantages of one agent across timesteps.
    pub fn agent_advantages(&self, agent: usize) -> Vec<T> {
        self.rows.iter().map(|r| r[agent].advantage).collect()
    }

    pub fn all_advantages(&self) -> impl Iterator<Item = T> + '_ {
        self.rows.iter().flatten().map(|r| r.advantage)
    }
}

/// Mean and population variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub var: f64,
}

impl Moments {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, var }
    }
}

/// Per-update statistics of every baseline kind and of the advantage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdvantageStats {
    pub q_taken: Moments,
    pub b_jnt: Moments,
    pub b_ind: Moments,
    pub b_cor: Moments,
    pub b_maca: Moments,
    pub advantage: Moments,
}

impl<T: Scalar> AdvantageEstimate<T> {
    pub fn stats(&self) -> AdvantageStats {
        let col = |f: fn(&AdvantageRow<T>) -> T| Moments::of(self.rows.iter().flatten().map(|r| f(r).to_f64_lossy()));
        AdvantageStats {
            q_taken: col(|r| r.q_taken),
            b_jnt: col(|r| r.b_jnt),
            b_ind: col(|r| r.b_ind),
            b_cor: col(|r| r.b_cor),
            b_maca: col(|r| r.b_maca),
            advantage: col(|r| r.advantage),
        }
    }

    /// Mean ψ over agents and timesteps.
    pub fn psi_mean(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        let mut count = 0usize;
        for r in self.rows.iter().flatten() {
            for (a, p) in acc.iter_mut().zip(r.psi) {
                *a += p.to_f64_lossy();
            }
            count += 1;
        }
        acc.map(|a| if count == 0 { 0.0 } else { a / count as f64 })
    }

    pub fn corrset_mean_size(&self) -> f64 {
        let sizes = Moments::of(self.rows.iter().flatten().map(|r| r.corrset_size as f64));
        sizes.mean
    }

    /// Largest simplex violation over every emitted ψ.
    pub fn max_psi_simplex_error(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .map(|r| BaselineWeights(r.psi).simplex_error())
            .fold(0.0, f64::max)
    }
}

/// How the mixing weights are produced.
#[derive(Debug, Clone)]
pub enum PsiSource<'a> {
    /// Learned head filtered through the variant's mask.
    Head { head: &'a CoeffHead, variant: Variant },
    /// One fixed triple for every agent and timestep.
    Fixed(BaselineWeights<f64>),
}

impl PsiSource<'_> {
    fn weights<T: Scalar>(&self, z_s: &[T], z_i: &[T]) -> Result<BaselineWeights<T>> {
        match self {
            PsiSource::Head { head, variant } => head.weights_for(*variant, z_s, z_i),
            PsiSource::Fixed(w) => {
                w.validate()?;
                Ok(BaselineWeights(w.0.map(T::lit)))
            }
        }
    }
}

/// Stacks per-agent observations of every step into `(B·n) × obs_dim`.
pub fn stack_observations<T: Scalar>(steps: &[Timestep]) -> Result<Tensor<T>> {
    let rows: Vec<Vec<T>> = steps
        .iter()
        .flat_map(|s| s.observations.iter().map(|o| o.iter().map(|&x| T::lit(x)).collect()))
        .collect();
    Tensor::from_rows(&rows)
}

/// Computes the MACA advantage for every agent at every step.
pub fn maca_advantage<T: Scalar>(
    steps: &[Timestep],
    critic: &Critic<T>,
    psi: &PsiSource<'_>,
    sigma: f64,
) -> Result<AdvantageEstimate<T>> {
    if steps.is_empty() {
        return Ok(AdvantageEstimate { rows: Vec::new() });
    }
    let encoding = critic.encode_batch(&stack_observations(steps)?)?;
    maca_advantage_encoded(steps, &encoding, critic, psi, sigma)
}

/// As [`maca_advantage`] with a precomputed encoding of `steps`.
pub fn maca_advantage_encoded<T: Scalar>(
    steps: &[Timestep],
    encoding: &BatchEncoding<T>,
    critic: &Critic<T>,
    psi: &PsiSource<'_>,
    sigma: f64,
) -> Result<AdvantageEstimate<T>> {
    let n = critic.n_agents;
    if encoding.batch_len() != steps.len() {
        return Err(MacaError::shape("encoding does not match the number of steps"));
    }
    let mut rows = Vec::with_capacity(steps.len());
    for (t, step) in steps.iter().enumerate() {
        if step.policy_rows.len() != n
            || step
                .policy_rows
                .iter()
                .zip(&critic.action_sizes)
                .any(|(r, &k)| r.len() != k)
        {
            return Err(MacaError::invalid(format!("step {t} is missing stored policy rows")));
        }
        let policies: Vec<Vec<T>> = step
            .policy_rows
            .iter()
            .map(|r| r.iter().map(|&p| T::lit(p)).collect())
            .collect();
        let taken = &step.joint_action;
        let z_s = encoding.pooled_row(t);
        let rollout = attention_rollout(&encoding.attention_at(t))?;
        let q_taken = critic.q_taken(z_s, taken)?;
        let b_jnt = critic.v_value(z_s, &policies)?;
        let mut agent_rows = Vec::with_capacity(n);
        for i in 0..n {
            let b_ind = k_level_baseline(critic, z_s, &policies, taken, i, &[i])?;
            let cs = corrset(&rollout, i, sigma)?;
            let b_cor = k_level_baseline(critic, z_s, &policies, taken, i, &cs.members)?;
            let w = psi.weights(z_s, encoding.agent_row(t, i))?;
            let b_maca = maca_baseline(b_jnt, b_ind, b_cor, &w)?;
            agent_rows.push(AdvantageRow {
                q_taken,
                b_jnt,
                b_ind,
                b_cor,
                b_maca,
                advantage: q_taken - b_maca,
                psi: w.0,
                corrset_size: cs.len(),
            });
        }
        rows.push(agent_rows);
    }
    Ok(AdvantageEstimate { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn rollout(rows: Vec<Vec<f64>>) -> AttentionRollout<f64> {
        AttentionRollout {
            matrix: Tensor::from_rows(&rows).unwrap(),
        }
    }

    #[test]
    fn uniform_rollout_at_one_over_n_keeps_everyone() {
        let n = 4;
        let r = rollout(vec![vec![0.25; n]; n]);
        for i in 0..n {
            assert_eq!(corrset(&r, i, default_sigma(n)).unwrap().members, vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn threshold_plus_enforced_self() {
        let r = rollout(vec![
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.7, 0.1, 0.1, 0.1],
        ]);
        // agent 2 in one-based numbering
        assert_eq!(corrset(&r, 1, 0.25).unwrap().members, vec![0, 1]);
        assert_eq!(corrset(&r, 2, 1.0).unwrap().members, vec![2]);
    }

    #[test]
    fn threshold_outside_unit_interval_errors() {
        let r = rollout(vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
        assert!(corrset(&r, 0, -0.1).is_err());
        assert!(corrset(&r, 0, 1.5).is_err());
    }

    #[test]
    fn maca_baseline_component_selection() {
        let one = |a, b, c| BaselineWeights([a, b, c]);
        assert_eq!(maca_baseline(1.0, 2.0, 3.0, &one(1.0, 0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(maca_baseline(1.0, 2.0, 3.0, &one(0.0, 1.0, 0.0)).unwrap(), 2.0);
        assert!(maca_baseline(1.0, 2.0, 3.0, &one(0.5, 0.6, 0.0)).is_err());
        assert!(maca_baseline(1.0, 2.0, 3.0, &one(1.2, -0.2, 0.0)).is_err());
    }

    #[test]
    fn corrset_equal_to_everyone_collapses_to_two_thirds_joint() {
        let third: f64 = 1.0 / 3.0;
        let (b_jnt, b_ind): (f64, f64) = (0.8, -0.4);
        let b = maca_baseline(b_jnt, b_ind, b_jnt, &BaselineWeights([third, third, third])).unwrap();
        assert!((b - (2.0 / 3.0 * b_jnt + third * b_ind)).abs() < 1e-15);
    }
}
