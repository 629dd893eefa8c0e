//! Attention-encoder critic.
//!
//! Per-agent observations are embedded, passed through self-attention
//! encoder blocks (no positional encoding, so agents form a set) and an
//! output layer. The pooled state embedding `z_s` is the mean of the
//! per-agent rows. Action values come from a single affine head over
//! `z_s` concatenated with a flattened action distribution, so a value at
//! an expected one-hot equals the expected value.

mod dist;
mod rollout;

pub use dist::{marginalized_dist, validate_subset, MarginalizedActionDist};
pub use rollout::{attention_rollout, AttentionRollout};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MacaError, Result};
use crate::numerics::{Embedding, EncoderBlock, Linear, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    /// Encoder width.
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_blocks")]
    pub n_blocks: usize,
    /// Width of the per-agent and pooled state embeddings.
    #[serde(default = "default_z_dim")]
    pub z_dim: usize,
}

fn default_width() -> usize {
    64
}
fn default_blocks() -> usize {
    1
}
fn default_z_dim() -> usize {
    256
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            width: default_width(),
            n_blocks: default_blocks(),
            z_dim: default_z_dim(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StateEmbedding<T> {
    /// `n × z_dim`, one row per agent.
    pub per_agent: Tensor<T>,
    /// Mean over the rows of `per_agent`.
    pub pooled: Vec<T>,
}

/// Encoder outputs for a batch of `B` states of `n` agents each.
#[derive(Debug, Clone)]
pub struct BatchEncoding<T> {
    pub n_agents: usize,
    /// `(B·n) × z_dim`.
    pub per_agent: Tensor<T>,
    /// `B × z_dim`.
    pub pooled: Tensor<T>,
    /// One `(B·n) × n` row-stochastic matrix per encoder block.
    pub attention: Vec<Tensor<T>>,
}

impl<T: Scalar> BatchEncoding<T> {
    pub fn batch_len(&self) -> usize {
        self.pooled.rows()
    }

    pub fn pooled_row(&self, b: usize) -> &[T] {
        self.pooled.row(b)
    }

    pub fn agent_row(&self, b: usize, agent: usize) -> &[T] {
        self.per_agent.row(b * self.n_agents + agent)
    }

    /// Per-block attention matrices for state `b`.
    pub fn attention_at(&self, b: usize) -> Vec<Tensor<T>> {
        let n = self.n_agents;
        self.attention
            .iter()
            .map(|a| Tensor::from_parts(vec![n, n], a.data()[b * n * n..(b + 1) * n * n].to_vec()))
            .collect()
    }

    pub fn state_embedding(&self, b: usize) -> StateEmbedding<T> {
        let n = self.n_agents;
        let z = self.per_agent.cols();
        StateEmbedding {
            per_agent: Tensor::from_parts(vec![n, z], self.per_agent.data()[b * n * z..(b + 1) * n * z].to_vec()),
            pooled: self.pooled_row(b).to_vec(),
        }
    }
}

/// Tape handles produced by [`Critic::forward`].
pub struct EncodedVars {
    pub per_agent: Var,
    pub pooled: Var,
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Critic<T> {
    pub config: CriticConfig,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub action_sizes: Vec<usize>,
    pub store: ParamStore<T>,
    embed: Embedding,
    blocks: Vec<EncoderBlock>,
    out: Linear,
    q_head: Linear,
}

impl<T: Scalar> Critic<T> {
    pub fn new<R: Rng + ?Sized>(
        config: CriticConfig,
        n_agents: usize,
        obs_dim: usize,
        action_sizes: Vec<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if n_agents == 0 || action_sizes.len() != n_agents || config.width == 0 || config.z_dim == 0 {
            return Err(MacaError::invalid(
                "critic needs agents, one action size per agent and positive widths",
            ));
        }
        if config.n_blocks == 0 {
            return Err(MacaError::invalid("critic needs at least one encoder block"));
        }
        let mut store = ParamStore::new();
        let embed = Embedding::new(&mut store, "critic.embed", obs_dim, config.width, rng);
        let blocks = (0..config.n_blocks)
            .map(|b| EncoderBlock::new(&mut store, &format!("critic.block{b}"), config.width, rng))
            .collect();
        let out = Linear::new(&mut store, "critic.out", config.width, config.z_dim, 1.0, true, rng);
        let flat: usize = action_sizes.iter().sum();
        let q_head = Linear::new(&mut store, "critic.q", config.z_dim + flat, 1, 1.0, true, rng);
        Ok(Self {
            config,
            n_agents,
            obs_dim,
            action_sizes,
            store,
            embed,
            blocks,
            out,
            q_head,
        })
    }

    /// Total length of a flattened joint action distribution.
    pub fn flat_action_len(&self) -> usize {
        self.action_sizes.iter().sum()
    }

    pub fn q_head_layer(&self) -> &Linear {
        &self.q_head
    }

    /// Records the encoder on `tape`. `obs` is `(B·n) × obs_dim`.
    pub fn forward(&self, tape: &mut Tape<'_, T>, obs: Var) -> Result<EncodedVars> {
        let shape = tape.value(obs).shape().to_vec();
        let (rows, cols) = (tape.value(obs).rows(), tape.value(obs).cols());
        if cols != self.obs_dim || rows % self.n_agents != 0 || rows == 0 {
            return Err(MacaError::shape(format!(
                "observations {shape:?} for {} agents of dimension {}",
                self.n_agents, self.obs_dim
            )));
        }
        let mut h = self.embed.forward(tape, obs)?;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, a) = block.forward(tape, h, self.n_agents)?;
            h = y;
            attention.push(a);
        }
        let z = self.out.forward(tape, h)?;
        let per_agent = tape.gelu(z);
        let pooled = tape.group_mean(per_agent, self.n_agents)?;
        Ok(EncodedVars {
            per_agent,
            pooled,
            attention,
        })
    }

    /// Affine Q head on the tape: `zs` is `B × z_dim`, `dist` is `B × Σ|A_i|`.
    pub fn q_forward(&self, tape: &mut Tape<'_, T>, zs: Var, dist: Var) -> Result<Var> {
        let x = tape.concat_cols(zs, dist)?;
        self.q_head.forward(tape, x)
    }

    pub fn encode_batch(&self, obs: &Tensor<T>) -> Result<BatchEncoding<T>> {
        let mut tape = Tape::new(&self.store);
        let x = tape.input(obs.clone());
        let enc = self.forward(&mut tape, x)?;
        Ok(BatchEncoding {
            n_agents: self.n_agents,
            per_agent: tape.value(enc.per_agent).clone(),
            pooled: tape.value(enc.pooled).clone(),
            attention: enc.attention.iter().map(|&a| tape.value(a).clone()).collect(),
        })
    }

    /// Encodes one state given one observation vector per agent; returns the
    /// embedding and one `n × n` attention matrix per encoder block.
    pub fn encode(&self, observations: &[Vec<T>]) -> Result<(StateEmbedding<T>, Vec<Tensor<T>>)> {
        if observations.len() != self.n_agents {
            return Err(MacaError::shape(format!(
                "{} observation rows for {} agents",
                observations.len(),
                self.n_agents
            )));
        }
        let obs = Tensor::from_rows(observations)?;
        let enc = self.encode_batch(&obs)?;
        Ok((enc.state_embedding(0), enc.attention_at(0)))
    }

    /// Q head at a flattened action distribution.
    pub fn q_value_flat(&self, z_s: &[T], flat: &[T]) -> Result<T> {
        let zd = self.config.z_dim;
        if z_s.len() != zd || flat.len() != self.flat_action_len() {
            return Err(MacaError::shape(format!(
                "q head expects {zd} + {} inputs, got {} + {}",
                self.flat_action_len(),
                z_s.len(),
                flat.len()
            )));
        }
        let w = self.store.value(self.q_head.weight).data();
        let mut q = self.q_head.bias.map_or(T::zero(), |b| self.store.value(b).data()[0]);
        for (k, &x) in z_s.iter().chain(flat).enumerate() {
            q += w[k] * x;
        }
        Ok(q)
    }

    /// `Lin(z_s, π̄)`.
    pub fn q_value(&self, z_s: &[T], dist: &MarginalizedActionDist<T>) -> Result<T> {
        self.check_dist(dist)?;
        self.q_value_flat(z_s, &dist.flat())
    }

    /// `V(s) = Q(s, π)`: the Q head at the full joint policy.
    pub fn v_value(&self, z_s: &[T], policies: &[Vec<T>]) -> Result<T> {
        if policies.len() != self.n_agents {
            return Err(MacaError::shape("one policy row per agent required"));
        }
        let flat: Vec<T> = policies.iter().flatten().copied().collect();
        self.q_value_flat(z_s, &flat)
    }

    /// Q at the one-hot encoding of a joint action.
    pub fn q_taken(&self, z_s: &[T], action: &[usize]) -> Result<T> {
        let flat = one_hot_flat(&self.action_sizes, action)?;
        self.q_value_flat(z_s, &flat)
    }

    fn check_dist(&self, dist: &MarginalizedActionDist<T>) -> Result<()> {
        if dist.rows.len() != self.n_agents || dist.rows.iter().zip(&self.action_sizes).any(|(r, &k)| r.len() != k) {
            return Err(MacaError::shape(
                "action distribution does not match the critic's action sizes",
            ));
        }
        Ok(())
    }
}

/// Concatenated one-hot rows for a joint action.
pub fn one_hot_flat<T: Scalar>(sizes: &[usize], action: &[usize]) -> Result<Vec<T>> {
    if sizes.len() != action.len() {
        return Err(MacaError::shape("joint action length"));
    }
    let mut out = vec![T::zero(); sizes.iter().sum()];
    let mut offset = 0;
    for (agent, (&k, &a)) in sizes.iter().zip(action).enumerate() {
        if a >= k {
            return Err(MacaError::ActionOutOfRange {
                agent,
                action: a,
                n_actions: k,
            });
        }
        out[offset + a] = T::one();
        offset += k;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_critic(seed: u64) -> Critic<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = CriticConfig {
            width: 8,
            n_blocks: 1,
            z_dim: 6,
        };
        Critic::new(cfg, 3, 4, vec![2, 3, 2], &mut rng).unwrap()
    }

    #[test]
    fn identical_observations_give_identical_rows() {
        let critic = small_critic(1);
        let obs = vec![vec![0.3, -0.2, 1.0, 0.5]; 3];
        let (emb, attn) = critic.encode(&obs).unwrap();
        for r in 1..3 {
            for c in 0..6 {
                assert!((emb.per_agent.get(r, c) - emb.per_agent.get(0, c)).abs() < 1e-12);
            }
        }
        for row in 0..3 {
            let s: f64 = attn[0].row(row).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let critic = small_critic(2);
        let obs = vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![-0.5, 0.5, 0.0, 2.0],
        ];
        let (a, _) = critic.encode(&obs).unwrap();
        let (b, _) = critic.encode(&obs).unwrap();
        assert_eq!(a.per_agent.data(), b.per_agent.data());
        assert_eq!(a.pooled, b.pooled);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let critic = small_critic(3);
        assert!(critic.encode(&[vec![0.0; 5], vec![0.0; 5], vec![0.0; 5]]).is_err());
        assert!(critic.encode(&[vec![0.0; 4]]).is_err());
        assert!(critic.q_value_flat(&[0.0; 6], &[0.0; 3]).is_err());
    }

    #[test]
    fn zero_head_weights_give_zero_q() {
        let mut critic = small_critic(4);
        let w = critic.q_head.weight;
        critic.store.value_mut(w).data_mut().iter_mut().for_each(|x| *x = 0.0);
        let z = vec![0.7; 6];
        assert_eq!(critic.q_taken(&z, &[1, 2, 0]).unwrap(), 0.0);
        let pol = vec![vec![0.5, 0.5], vec![0.2, 0.3, 0.5], vec![0.9, 0.1]];
        assert_eq!(critic.v_value(&z, &pol).unwrap(), 0.0);
    }

    #[test]
    fn deterministic_policy_value_equals_taken_q() {
        let critic = small_critic(5);
        let z: Vec<f64> = (0..6).map(|i| i as f64 * 0.1 - 0.2).collect();
        let pol = vec![vec![0.0, 1.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0]];
        let v = critic.v_value(&z, &pol).unwrap();
        let q = critic.q_taken(&z, &[1, 2, 0]).unwrap();
        assert_eq!(v, q);
    }
}
