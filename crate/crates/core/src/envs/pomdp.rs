use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MacaError, Result};

/// Finite cooperative environment with a shared reward.
///
/// States and joint actions are dense indices; joint actions are decoded
/// with [`JointActionSpace`]. Observations are fixed-width real vectors.
pub trait DecPomdp: Send + Sync {
    fn n_agents(&self) -> usize;
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> &[usize];
    fn obs_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn gamma(&self) -> f64;
    fn initial_distribution(&self) -> Vec<(usize, f64)>;
    /// Next-state distribution; probabilities sum to one.
    fn transition(&self, state: usize, action: &[usize]) -> Result<Vec<(usize, f64)>>;
    fn reward(&self, state: usize, action: &[usize], next: usize) -> Result<f64>;
    fn observe(&self, state: usize, agent: usize) -> Vec<f64>;
    /// States from which the episode ends regardless of the horizon.
    fn is_terminal(&self, _state: usize) -> bool {
        false
    }

    fn observe_all(&self, state: usize) -> Vec<Vec<f64>> {
        (0..self.n_agents()).map(|i| self.observe(state, i)).collect()
    }

    fn action_space(&self) -> JointActionSpace {
        JointActionSpace::new(self.n_actions().to_vec())
    }

    fn check_action(&self, action: &[usize]) -> Result<()> {
        let n = self.n_actions();
        if action.len() != n.len() {
            return Err(MacaError::shape(format!(
                "joint action has {} entries for {} agents",
                action.len(),
                n.len()
            )));
        }
        for (agent, (&a, &k)) in action.iter().zip(n).enumerate() {
            if a >= k {
                return Err(MacaError::ActionOutOfRange {
                    agent,
                    action: a,
                    n_actions: k,
                });
            }
        }
        Ok(())
    }
}

/// Position inside an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub state: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: EpisodeState,
    pub observations: Vec<Vec<f64>>,
    pub reward: f64,
    pub done: bool,
}

pub fn reset<E: DecPomdp + ?Sized, R: Rng + ?Sized>(env: &E, rng: &mut R) -> (EpisodeState, Vec<Vec<f64>>) {
    let state = sample_categorical(&env.initial_distribution(), rng);
    (EpisodeState { state, t: 0 }, env.observe_all(state))
}

/// Advances one timestep: samples the next state, evaluates the shared reward
/// and flags termination at the horizon or on a terminal state.
pub fn step<E: DecPomdp + ?Sized, R: Rng + ?Sized>(
    env: &E,
    current: EpisodeState,
    action: &[usize],
    rng: &mut R,
) -> Result<StepOutcome> {
    env.check_action(action)?;
    let dist = env.transition(current.state, action)?;
    let next_state = sample_categorical(&dist, rng);
    let reward = env.reward(current.state, action, next_state)?;
    let next = EpisodeState {
        state: next_state,
        t: current.t + 1,
    };
    let done = next.t >= env.horizon() || env.is_terminal(next_state);
    Ok(StepOutcome {
        next,
        observations: env.observe_all(next_state),
        reward,
        done,
    })
}

/// Draws from a finite distribution. Single-outcome distributions consume no
/// randomness so deterministic environments leave the rng stream untouched.
pub fn sample_categorical<R: Rng + ?Sized>(dist: &[(usize, f64)], rng: &mut R) -> usize {
    if dist.len() == 1 {
        return dist[0].0;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(s, p) in dist {
        acc += p;
        if u < acc {
            return s;
        }
    }
    dist.last().map(|&(s, _)| s).expect("empty distribution")
}

/// Mixed-radix encoding of joint actions, agent 0 most significant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointActionSpace {
    sizes: Vec<usize>,
}

impl JointActionSpace {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self, action: &[usize]) -> usize {
        action.iter().zip(&self.sizes).fold(0, |acc, (&a, &k)| acc * k + a)
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.sizes.len()];
        for (slot, &k) in out.iter_mut().zip(&self.sizes).rev() {
            *slot = index % k;
            index /= k;
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.len()).map(|i| self.decode(i))
    }

    /// All sub-actions of the agents in `subset` (sorted indices), in
    /// lexicographic order.
    pub fn sub_actions(&self, subset: &[usize]) -> Vec<Vec<usize>> {
        let sub = JointActionSpace::new(subset.iter().map(|&i| self.sizes[i]).collect());
        sub.iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let space = JointActionSpace::new(vec![2, 3, 4]);
        for i in 0..space.len() {
            assert_eq!(space.encode(&space.decode(i)), i);
        }
        assert_eq!(space.decode(0), vec![0, 0, 0]);
        assert_eq!(space.decode(23), vec![1, 2, 3]);
    }
}
