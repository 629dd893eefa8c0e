use super::pomdp::{DecPomdp, JointActionSpace};
use crate::error::{MacaError, Result};

pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Exhaustive, duplicate-free listing of states and joint actions.
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub n_states: usize,
    pub actions: JointActionSpace,
}

impl Enumeration {
    pub fn states(&self) -> std::ops::Range<usize> {
        0..self.n_states
    }

    pub fn joint_actions(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.actions.iter()
    }

    /// All `(state, joint action)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, Vec<usize>)> + '_ {
        self.states()
            .flat_map(move |s| self.actions.iter().map(move |a| (s, a)))
    }
}

/// Enumerates `env` when `|S| × |A|` is within `cap`.
pub fn enumerate<E: DecPomdp + ?Sized>(env: &E, cap: u128) -> Result<Enumeration> {
    let joint: u128 = env.n_actions().iter().map(|&k| k as u128).product();
    let requested = joint * env.n_states() as u128;
    if requested > cap {
        return Err(MacaError::EnumerationCap { requested, cap });
    }
    Ok(Enumeration {
        n_states: env.n_states(),
        actions: env.action_space(),
    })
}
