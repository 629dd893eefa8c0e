use crate::error::{MacaError, Result};
use crate::scalar::Scalar;

/// Per-agent action distributions with the agents in `marginalized` keeping
/// their policy rows and every other agent pinned one-hot at its taken
/// action.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalizedActionDist<T> {
    pub rows: Vec<Vec<T>>,
    /// Sorted agent indices whose actions are marginalized.
    pub marginalized: Vec<usize>,
}

impl<T: Scalar> MarginalizedActionDist<T> {
    /// Rows concatenated in agent order.
    pub fn flat(&self) -> Vec<T> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn is_marginalized(&self, agent: usize) -> bool {
        self.marginalized.binary_search(&agent).is_ok()
    }
}

/// Checks that `subset` is a nonempty set of distinct agents below `n` and
/// returns it sorted.
pub fn validate_subset(subset: &[usize], n: usize) -> Result<Vec<usize>> {
    if subset.is_empty() {
        return Err(MacaError::invalid("agent subset must be nonempty"));
    }
    let mut s = subset.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != subset.len() {
        return Err(MacaError::invalid("agent subset repeats an agent"));
    }
    if let Some(&bad) = s.iter().find(|&&i| i >= n) {
        return Err(MacaError::invalid(format!("agent {bad} outside 0..{n}")));
    }
    Ok(s)
}

/// Builds `π̄_G`: policy rows for agents in `subset`, one-hot rows at the
/// taken actions elsewhere. For `subset = N` this is the joint policy.
pub fn marginalized_dist<T: Scalar>(
    policies: &[Vec<T>],
    taken: &[usize],
    subset: &[usize],
) -> Result<MarginalizedActionDist<T>> {
    if policies.len() != taken.len() {
        return Err(MacaError::shape("one taken action per policy row required"));
    }
    let marginalized = validate_subset(subset, policies.len())?;
    let mut rows = Vec::with_capacity(policies.len());
    for (agent, (row, &a)) in policies.iter().zip(taken).enumerate() {
        if a >= row.len() {
            return Err(MacaError::ActionOutOfRange {
                agent,
                action: a,
                n_actions: row.len(),
            });
        }
        if marginalized.binary_search(&agent).is_ok() {
            rows.push(row.clone());
        } else {
            let mut one_hot = vec![T::zero(); row.len()];
            one_hot[a] = T::one();
            rows.push(one_hot);
        }
    }
    Ok(MarginalizedActionDist { rows, marginalized })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pi() -> Vec<Vec<f64>> {
        vec![vec![0.5, 0.5], vec![0.3, 0.7]]
    }

    #[test]
    fn full_subset_is_joint_policy() {
        let d = marginalized_dist(&pi(), &[0, 1], &[0, 1]).unwrap();
        assert_eq!(d.rows, pi());
    }

    #[test]
    fn single_agent_subsets() {
        let d = marginalized_dist(&pi(), &[0, 1], &[0]).unwrap();
        assert_eq!(d.rows, vec![vec![0.5, 0.5], vec![0.0, 1.0]]);
        let d = marginalized_dist(&pi(), &[0, 1], &[1]).unwrap();
        assert_eq!(d.rows, vec![vec![1.0, 0.0], vec![0.3, 0.7]]);
    }

    #[test]
    fn empty_or_bad_subset_errors() {
        assert!(marginalized_dist(&pi(), &[0, 1], &[]).is_err());
        assert!(marginalized_dist(&pi(), &[0, 1], &[2]).is_err());
        assert!(marginalized_dist(&pi(), &[0, 1], &[1, 1]).is_err());
        assert!(marginalized_dist(&pi(), &[0, 2], &[0]).is_err());
    }
}
