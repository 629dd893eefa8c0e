use rand::Rng;

use crate::error::{MacaError, Result};
use crate::numerics::{Activation, Adam, Mlp, ParamStore, Tape, Tensor, Var};

/// Decentralized policy of one agent: an MLP from its own observation to
/// action logits.
#[derive(Debug, Clone)]
pub struct Actor {
    pub store: ParamStore<f64>,
    pub net: Mlp,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub(crate) adam: Adam<f64>,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        obs_dim: usize,
        hidden: &[usize],
        n_actions: usize,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let mut store = ParamStore::new();
        let sizes: Vec<usize> = std::iter::once(obs_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(n_actions))
            .collect();
        let net = Mlp::new(&mut store, name, &sizes, Activation::Relu, 0.01, rng);
        let adam = Adam::new(&store, lr);
        Self {
            store,
            net,
            n_actions,
            obs_dim,
            adam,
        }
    }

    pub fn logits_var(&self, tape: &mut Tape<'_, f64>, obs: Var) -> Result<Var> {
        self.net.forward(tape, obs)
    }

    /// Action distributions for a `B × obs_dim` batch.
    pub fn policy_batch(&self, obs: &Tensor<f64>) -> Result<Tensor<f64>> {
        let mut tape = Tape::new(&self.store);
        let x = tape.input(obs.clone());
        let logits = self.logits_var(&mut tape, x)?;
        let p = tape.softmax_rows(logits);
        Ok(tape.value(p).clone())
    }

    pub fn policy(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(MacaError::shape(format!(
                "actor expects {} observation entries, got {}",
                self.obs_dim,
                obs.len()
            )));
        }
        Ok(self.policy_batch(&Tensor::row_vector(obs.to_vec())?)?.into_data())
    }
}

/// Everything that maps joint observations to per-agent action rows.
pub trait JointPolicy {
    fn rows(&self, observations: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

impl JointPolicy for [Actor] {
    fn rows(&self, observations: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if observations.len() != self.len() {
            return Err(MacaError::shape("one observation per actor"));
        }
        self.iter().zip(observations).map(|(a, o)| a.policy(o)).collect()
    }
}

impl JointPolicy for Vec<Actor> {
    fn rows(&self, observations: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.as_slice().rows(observations)
    }
}

/// Uniform distribution over each agent's actions.
#[derive(Debug, Clone)]
pub struct UniformPolicy(pub Vec<usize>);

impl JointPolicy for UniformPolicy {
    fn rows(&self, _observations: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.0.iter().map(|&k| vec![1.0 / k as f64; k]).collect())
    }
}

/// Fixed per-agent rows regardless of the observation.
#[derive(Debug, Clone)]
pub struct FixedPolicy(pub Vec<Vec<f64>>);

impl JointPolicy for FixedPolicy {
    fn rows(&self, _observations: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.0.clone())
    }
}

/// PPO objective for one agent, recorded on `tape` and negated so it can
/// be minimized: `-(mean(min(r·A, clip(r, 1±ε)·A)) + c_H · mean(H(π)))`.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss(
    tape: &mut Tape<'_, f64>,
    actor: &Actor,
    obs: &Tensor<f64>,
    actions: &[usize],
    old_log_probs: &[f64],
    advantages: &[f64],
    clip_param: f64,
    entropy_coef: f64,
) -> Result<Var> {
    let b = actions.len();
    if obs.rows() != b || old_log_probs.len() != b || advantages.len() != b {
        return Err(MacaError::shape("actor batch lengths differ"));
    }
    let x = tape.input(obs.clone());
    let logits = actor.logits_var(tape, x)?;
    let logp_all = tape.log_softmax_rows(logits);
    let logp = tape.gather_cols(logp_all, actions)?;
    let old = tape.input(Tensor::matrix(b, 1, old_log_probs.to_vec())?);
    let diff = tape.sub(logp, old)?;
    let ratio = tape.exp(diff);
    let adv = tape.input(Tensor::matrix(b, 1, advantages.to_vec())?);
    let surr1 = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - clip_param, 1.0 + clip_param);
    let surr2 = tape.mul(clipped, adv)?;
    let surr = tape.minimum(surr1, surr2)?;
    let objective = tape.mean(surr);
    let probs = tape.softmax_rows(logits);
    let plogp = tape.mul(probs, logp_all)?;
    let neg_entropy_sum = tape.sum(plogp);
    // -(objective + c·H) with H = -Σ p log p / B
    let ent_term = tape.scale(neg_entropy_sum, entropy_coef / b as f64);
    let neg_obj = tape.scale(objective, -1.0);
    tape.add(neg_obj, ent_term)
}
