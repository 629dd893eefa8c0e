use serde::{Deserialize, Serialize};

/// One recorded environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestep {
    pub state: usize,
    /// One observation vector per agent, taken before acting.
    pub observations: Vec<Vec<f64>>,
    pub joint_action: Vec<usize>,
    /// Each agent's action distribution at sampling time.
    pub policy_rows: Vec<Vec<f64>>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Timestep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}
