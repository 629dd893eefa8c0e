//! Explicit tabular games, including the generator for games whose reward is
//! a sum of subset rewards at chosen credit-assignment levels.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::pomdp::{DecPomdp, JointActionSpace};
use crate::error::{MacaError, Result};

/// Reward paid when the agents in `agents` jointly play `actions`
/// (optionally only in `state`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<usize>,
    pub agents: Vec<usize>,
    pub actions: Vec<usize>,
    pub reward: f64,
}

impl SubsetEntry {
    pub fn level(&self) -> usize {
        self.agents.len()
    }

    pub fn matches(&self, state: usize, joint: &[usize]) -> bool {
        self.state.is_none_or(|s| s == state) && self.agents.iter().zip(&self.actions).all(|(&i, &a)| joint[i] == a)
    }
}

/// Global reward as a sum over subset contributions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetRewardTable {
    pub entries: Vec<SubsetEntry>,
}

impl SubsetRewardTable {
    pub fn validate(&self, n_agents: usize, n_actions: &[usize], n_states: usize) -> Result<()> {
        for e in &self.entries {
            if e.agents.is_empty() {
                return Err(MacaError::invalid("subset reward entry with no agents"));
            }
            if e.agents.len() != e.actions.len() {
                return Err(MacaError::invalid("subset entry agents/actions length mismatch"));
            }
            let unique: BTreeSet<_> = e.agents.iter().collect();
            if unique.len() != e.agents.len() {
                return Err(MacaError::invalid("subset entry repeats an agent"));
            }
            for (&i, &a) in e.agents.iter().zip(&e.actions) {
                if i >= n_agents {
                    return Err(MacaError::invalid(format!("agent {i} outside 0..{n_agents}")));
                }
                if a >= n_actions[i] {
                    return Err(MacaError::ActionOutOfRange {
                        agent: i,
                        action: a,
                        n_actions: n_actions[i],
                    });
                }
            }
            if let Some(s) = e.state {
                if s >= n_states {
                    return Err(MacaError::invalid(format!("state {s} outside 0..{n_states}")));
                }
            }
            if !e.reward.is_finite() {
                return Err(MacaError::NonFinite("subset reward".into()));
            }
        }
        Ok(())
    }

    pub fn reward(&self, state: usize, joint: &[usize]) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.matches(state, joint))
            .fold(0.0, |acc, e| acc + e.reward)
    }

    pub fn levels(&self) -> BTreeSet<usize> {
        self.entries.iter().map(SubsetEntry::level).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transitions {
    /// Deterministic `s → (s + 1) mod n_states`, independent of actions.
    Cycle,
    /// One next-state distribution per `(state, joint action index)`,
    /// stored at `state · |A| + joint`.
    Explicit { table: Vec<Vec<(usize, f64)>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardModel {
    Subset(SubsetRewardTable),
    /// Reward per `(state, joint action index)` at `state · |A| + joint`.
    Dense {
        table: Vec<f64>,
    },
}

/// Fully tabulated finite game. Observations are a one-hot agent identity
/// followed by a one-hot state tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularGame {
    pub n_agents: usize,
    pub actions: Vec<usize>,
    pub n_states: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Initial state distribution over `0..n_states`.
    pub initial: Vec<f64>,
    pub transitions: Transitions,
    pub rewards: RewardModel,
}

pub(crate) const PROB_TOL: f64 = 1e-12;

impl TabularGame {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.actions.len() != self.n_agents {
            return Err(MacaError::invalid("actions must list one size per agent"));
        }
        if self.actions.contains(&0) || self.n_states == 0 || self.horizon == 0 {
            return Err(MacaError::invalid("empty action set, state set or horizon"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(MacaError::invalid(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        check_distribution(
            &self.initial.iter().copied().enumerate().collect::<Vec<_>>(),
            self.n_states,
        )?;
        let joint = self.joint_len();
        if let Transitions::Explicit { table } = &self.transitions {
            if table.len() != self.n_states * joint {
                return Err(MacaError::shape("transition table size"));
            }
            for row in table {
                check_distribution(row, self.n_states)?;
            }
        }
        match &self.rewards {
            RewardModel::Subset(t) => t.validate(self.n_agents, &self.actions, self.n_states)?,
            RewardModel::Dense { table } => {
                if table.len() != self.n_states * joint {
                    return Err(MacaError::shape("dense reward table size"));
                }
            }
        }
        Ok(())
    }

    pub fn joint_len(&self) -> usize {
        self.actions.iter().product()
    }

    pub fn subset_table(&self) -> Option<&SubsetRewardTable> {
        match &self.rewards {
            RewardModel::Subset(t) => Some(t),
            RewardModel::Dense { .. } => None,
        }
    }

    /// One-state repeated game paying the sum of `table` every step.
    pub fn repeated(actions: Vec<usize>, table: SubsetRewardTable, horizon: usize, gamma: f64) -> Result<Self> {
        let game = Self {
            n_agents: actions.len(),
            actions,
            n_states: 1,
            horizon,
            gamma,
            initial: vec![1.0],
            transitions: Transitions::Cycle,
            rewards: RewardModel::Subset(table),
        };
        game.validate()?;
        Ok(game)
    }
}

fn check_distribution(dist: &[(usize, f64)], n_states: usize) -> Result<()> {
    let mut total = 0.0;
    for &(s, p) in dist {
        if s >= n_states || !(0.0..=1.0 + PROB_TOL).contains(&p) {
            return Err(MacaError::invalid(format!("bad transition entry ({s}, {p})")));
        }
        total += p;
    }
    if (total - 1.0).abs() > PROB_TOL {
        return Err(MacaError::invalid(format!("distribution sums to {total}")));
    }
    Ok(())
}

impl DecPomdp for TabularGame {
    fn n_agents(&self) -> usize {
        self.n_agents
    }
    fn n_states(&self) -> usize {
        self.n_states
    }
    fn n_actions(&self) -> &[usize] {
        &self.actions
    }
    fn obs_dim(&self) -> usize {
        self.n_agents + self.n_states
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn initial_distribution(&self) -> Vec<(usize, f64)> {
        self.initial
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, p)| p > 0.0)
            .collect()
    }
    fn transition(&self, state: usize, action: &[usize]) -> Result<Vec<(usize, f64)>> {
        self.check_action(action)?;
        if state >= self.n_states {
            return Err(MacaError::invalid(format!("state {state} out of range")));
        }
        Ok(match &self.transitions {
            Transitions::Cycle => vec![((state + 1) % self.n_states, 1.0)],
            Transitions::Explicit { table } => {
                let j = JointActionSpace::new(self.actions.clone()).encode(action);
                table[state * self.joint_len() + j].clone()
            }
        })
    }
    fn reward(&self, state: usize, action: &[usize], _next: usize) -> Result<f64> {
        self.check_action(action)?;
        Ok(match &self.rewards {
            RewardModel::Subset(t) => t.reward(state, action),
            RewardModel::Dense { table } => {
                let j = JointActionSpace::new(self.actions.clone()).encode(action);
                table[state * self.joint_len() + j]
            }
        })
    }
    fn observe(&self, state: usize, agent: usize) -> Vec<f64> {
        let mut o = vec![0.0; self.n_agents + self.n_states];
        o[agent] = 1.0;
        o[self.n_agents + state] = 1.0;
        o
    }
}

/// One credit-assignment level to generate: `count` distinct subsets of
/// `level` agents, each paying a reward drawn from `[reward_min, reward_max]`
/// for one randomly chosen coordinated sub-action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub level: usize,
    pub count: usize,
    #[serde(default)]
    pub reward_min: f64,
    #[serde(default = "one")]
    pub reward_max: f64,
}

fn one() -> f64 {
    1.0
}

impl LevelSpec {
    pub fn new(level: usize, count: usize, reward_min: f64, reward_max: f64) -> Self {
        Self {
            level,
            count,
            reward_min,
            reward_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetGameConfig {
    pub n_agents: usize,
    #[serde(default = "default_n_actions")]
    pub n_actions: usize,
    #[serde(default = "default_one")]
    pub n_states: usize,
    #[serde(default = "default_one")]
    pub horizon: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub levels: Vec<LevelSpec>,
    pub seed: u64,
}

fn default_n_actions() -> usize {
    2
}
fn default_one() -> usize {
    1
}
fn default_gamma() -> f64 {
    0.99
}

impl SubsetGameConfig {
    pub fn new(n_agents: usize, levels: Vec<LevelSpec>, seed: u64) -> Self {
        Self {
            n_agents,
            n_actions: default_n_actions(),
            n_states: 1,
            horizon: 1,
            gamma: default_gamma(),
            levels,
            seed,
        }
    }
}

/// Generates a repeated game (one state, or a deterministic cycle of
/// `n_states` states) whose reward is a [`SubsetRewardTable`] sum.
/// Subsets of different levels may overlap. Deterministic per seed.
pub fn make_subset_game(config: &SubsetGameConfig) -> Result<TabularGame> {
    let n = config.n_agents;
    if n == 0 || config.n_actions == 0 {
        return Err(MacaError::invalid("need at least one agent and one action"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut entries = Vec::new();
    for spec in &config.levels {
        if spec.level == 0 || spec.level > n {
            return Err(MacaError::invalid(format!(
                "credit-assignment level {} outside 1..={n}",
                spec.level
            )));
        }
        if spec.reward_min > spec.reward_max || !spec.reward_min.is_finite() || !spec.reward_max.is_finite() {
            return Err(MacaError::invalid("reward range must satisfy min <= max"));
        }
        let available = binomial(n, spec.level);
        if spec.count as u128 > available {
            return Err(MacaError::invalid(format!(
                "{} subsets of size {} requested but only {available} exist",
                spec.count, spec.level
            )));
        }
        let mut chosen: BTreeSet<Vec<usize>> = BTreeSet::new();
        while chosen.len() < spec.count {
            let mut subset = sample(&mut rng, n, spec.level).into_vec();
            subset.sort_unstable();
            chosen.insert(subset);
        }
        // Iterate in the order chosen-set sorting gives, so generation is
        // independent of hash order.
        for subset in chosen {
            for state in 0..config.n_states {
                let actions = subset.iter().map(|_| rng.gen_range(0..config.n_actions)).collect();
                let reward = if spec.reward_max > spec.reward_min {
                    rng.gen_range(spec.reward_min..=spec.reward_max)
                } else {
                    spec.reward_min
                };
                entries.push(SubsetEntry {
                    state: (config.n_states > 1).then_some(state),
                    agents: subset.clone(),
                    actions,
                    reward,
                });
            }
        }
    }
    let game = TabularGame {
        n_agents: n,
        actions: vec![config.n_actions; n],
        n_states: config.n_states,
        horizon: config.horizon,
        gamma: config.gamma,
        initial: {
            let mut v = vec![0.0; config.n_states];
            v[0] = 1.0;
            v
        },
        transitions: Transitions::Cycle,
        rewards: RewardModel::Subset(SubsetRewardTable { entries }),
    };
    game.validate()?;
    Ok(game)
}

/// Game with standard-normal dense rewards and, for more than one state,
/// random transition distributions. Deterministic per seed.
pub fn random_dense_game(
    actions: Vec<usize>,
    n_states: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> Result<TabularGame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let joint: usize = actions.iter().product();
    let rewards = (0..n_states * joint).map(|_| rng.sample(StandardNormal)).collect();
    let transitions = if n_states == 1 {
        Transitions::Cycle
    } else {
        let table = (0..n_states * joint)
            .map(|_| {
                let w: Vec<f64> = (0..n_states).map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = w.iter().sum();
                w.into_iter().enumerate().map(|(s, x)| (s, x / total)).collect()
            })
            .collect();
        Transitions::Explicit { table }
    };
    let mut initial = vec![0.0; n_states.max(1)];
    initial[0] = 1.0;
    let game = TabularGame {
        n_agents: actions.len(),
        actions,
        n_states,
        horizon,
        gamma,
        initial,
        transitions,
        rewards: RewardModel::Dense { table: rewards },
    };
    game.validate()?;
    Ok(game)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry_pays_only_when_matched() {
        let table = SubsetRewardTable {
            entries: vec![SubsetEntry {
                state: None,
                agents: vec![0],
                actions: vec![0],
                reward: 1.0,
            }],
        };
        let game = TabularGame::repeated(vec![2, 2], table, 1, 0.99).unwrap();
        for a0 in 0..2 {
            for a1 in 0..2 {
                let r = game.reward(0, &[a0, a1], 0).unwrap();
                assert_eq!(r, if a0 == 0 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn level_above_agent_count_is_rejected() {
        let cfg = SubsetGameConfig::new(2, vec![LevelSpec::new(3, 1, 0.0, 1.0)], 0);
        assert!(make_subset_game(&cfg).is_err());
        let cfg = SubsetGameConfig::new(2, vec![LevelSpec::new(1, 3, 0.0, 1.0)], 0);
        assert!(make_subset_game(&cfg).is_err());
    }

    #[test]
    fn coexisting_one_and_three_level_subsets_overlap() {
        let cfg = SubsetGameConfig::new(
            3,
            vec![LevelSpec::new(1, 1, 0.0, 1.0), LevelSpec::new(3, 1, 0.0, 1.0)],
            11,
        );
        let game = make_subset_game(&cfg).unwrap();
        let table = game.subset_table().unwrap();
        assert_eq!(table.levels().into_iter().collect::<Vec<_>>(), vec![1, 3]);
        let single = &table.entries.iter().find(|e| e.level() == 1).unwrap().agents[0];
        let triple = table.entries.iter().find(|e| e.level() == 3).unwrap();
        assert!(triple.agents.contains(single));
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let levels = vec![LevelSpec::new(1, 2, 0.0, 1.0), LevelSpec::new(2, 2, 0.0, 1.0)];
        let a = make_subset_game(&SubsetGameConfig::new(3, levels.clone(), 5)).unwrap();
        let b = make_subset_game(&SubsetGameConfig::new(3, levels.clone(), 5)).unwrap();
        let c = make_subset_game(&SubsetGameConfig::new(3, levels, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn validation_rejects_unnormalized_transitions() {
        let mut game = make_subset_game(&SubsetGameConfig::new(2, vec![LevelSpec::new(1, 1, 0.0, 1.0)], 0)).unwrap();
        game.transitions = Transitions::Explicit {
            table: vec![vec![(0, 0.5)]; 4],
        };
        assert!(game.validate().is_err());
    }
}
