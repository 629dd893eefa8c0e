//! Multi-step capture gridworld. A target is captured once at least its
//! required number of agents stand next to it (4-neighbourhood), so targets
//! requiring two agents produce 2-level credit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pomdp::DecPomdp;
use crate::error::{MacaError, Result};

pub const GRID_ACTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCaptureConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub n_targets: usize,
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Agents needed per target; defaults to alternating 1, 2, 1, …
    /// (capped at `n_agents`).
    #[serde(default)]
    pub required: Option<Vec<usize>>,
    /// Fixed start cells `(x, y)`; random per seed when absent.
    #[serde(default)]
    pub agent_positions: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub target_positions: Option<Vec<(usize, usize)>>,
}

fn default_horizon() -> usize {
    8
}
fn default_gamma() -> f64 {
    0.99
}

impl GridCaptureConfig {
    pub fn new(width: usize, height: usize, n_agents: usize, n_targets: usize, seed: u64) -> Self {
        Self {
            width,
            height,
            n_agents,
            n_targets,
            seed,
            horizon: default_horizon(),
            gamma: default_gamma(),
            required: None,
            agent_positions: None,
            target_positions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCapture {
    config: GridCaptureConfig,
    required: Vec<usize>,
    targets: Vec<usize>,
    start: usize,
    actions: Vec<usize>,
}

/// Builds the capture environment, placing entities per seed unless fixed
/// positions are given.
pub fn grid_capture_env(config: GridCaptureConfig) -> Result<GridCapture> {
    let cells = config.width * config.height;
    if config.width == 0 || config.height == 0 || config.n_agents == 0 || config.horizon == 0 {
        return Err(MacaError::invalid("grid needs positive size, agents and horizon"));
    }
    if config.n_targets == 0 || config.n_targets > 16 {
        return Err(MacaError::invalid("grid supports 1..=16 targets"));
    }
    if !(0.0..=1.0).contains(&config.gamma) {
        return Err(MacaError::invalid("gamma outside [0, 1]"));
    }
    if config.n_agents + config.n_targets > cells {
        return Err(MacaError::invalid(format!(
            "{} agents and {} targets do not fit on {} cells",
            config.n_agents, config.n_targets, cells
        )));
    }
    let required = match &config.required {
        Some(r) if r.len() != config.n_targets => {
            return Err(MacaError::invalid("required counts must list one entry per target"))
        }
        Some(r) => r.clone(),
        None => (0..config.n_targets)
            .map(|j| (1 + j % 2).min(config.n_agents))
            .collect(),
    };
    if required.iter().any(|&r| r == 0 || r > config.n_agents.min(4)) {
        return Err(MacaError::invalid(
            "each target needs between 1 and min(n_agents, 4) agents",
        ));
    }
    let to_cell = |(x, y): (usize, usize)| -> Result<usize> {
        if x >= config.width || y >= config.height {
            return Err(MacaError::invalid(format!("position ({x}, {y}) off the board")));
        }
        Ok(y * config.width + x)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut free: Vec<usize> = (0..cells).collect();
    free.shuffle(&mut rng);
    let targets: Vec<usize> = match &config.target_positions {
        Some(p) if p.len() != config.n_targets => return Err(MacaError::invalid("target position count")),
        Some(p) => p.iter().map(|&c| to_cell(c)).collect::<Result<_>>()?,
        None => free[..config.n_targets].to_vec(),
    };
    free.retain(|c| !targets.contains(c));
    let agents: Vec<usize> = match &config.agent_positions {
        Some(p) if p.len() != config.n_agents => return Err(MacaError::invalid("agent position count")),
        Some(p) => p.iter().map(|&c| to_cell(c)).collect::<Result<_>>()?,
        None => free[..config.n_agents].to_vec(),
    };
    let mut seen = targets.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != targets.len() || agents.iter().any(|a| targets.contains(a)) {
        return Err(MacaError::invalid("overlapping entity placement"));
    }
    let actions = vec![GRID_ACTIONS; config.n_agents];
    let mut env = GridCapture {
        config,
        required,
        targets,
        start: 0,
        actions,
    };
    env.start = env.encode(&agents, 0);
    Ok(env)
}

impl GridCapture {
    fn cells(&self) -> usize {
        self.config.width * self.config.height
    }

    pub fn config(&self) -> &GridCaptureConfig {
        &self.config
    }

    pub fn start_state(&self) -> usize {
        self.start
    }

    pub fn encode(&self, agents: &[usize], captured: u32) -> usize {
        let pos = agents.iter().fold(0usize, |acc, &c| acc * self.cells() + c);
        (pos << self.config.n_targets) | captured as usize
    }

    pub fn decode(&self, state: usize) -> (Vec<usize>, u32) {
        let captured = (state & ((1 << self.config.n_targets) - 1)) as u32;
        let mut pos = state >> self.config.n_targets;
        let mut agents = vec![0; self.config.n_agents];
        for slot in agents.iter_mut().rev() {
            *slot = pos % self.cells();
            pos /= self.cells();
        }
        (agents, captured)
    }

    fn xy(&self, cell: usize) -> (i64, i64) {
        ((cell % self.config.width) as i64, (cell / self.config.width) as i64)
    }

    fn moved(&self, cell: usize, action: usize) -> usize {
        let (x, y) = self.xy(cell);
        let (nx, ny) = match action {
            1 => (x, y - 1),
            2 => (x, y + 1),
            3 => (x - 1, y),
            4 => (x + 1, y),
            _ => (x, y),
        };
        if nx < 0 || ny < 0 || nx >= self.config.width as i64 || ny >= self.config.height as i64 {
            return cell;
        }
        let next = ny as usize * self.config.width + nx as usize;
        if self.targets.contains(&next) {
            cell
        } else {
            next
        }
    }

    fn adjacent(&self, a: usize, b: usize) -> bool {
        let (ax, ay) = self.xy(a);
        let (bx, by) = self.xy(b);
        (ax - bx).abs() + (ay - by).abs() == 1
    }

    /// Next state of the deterministic dynamics.
    pub fn next_state(&self, state: usize, action: &[usize]) -> usize {
        let (agents, mut captured) = self.decode(state);
        let moved: Vec<usize> = agents.iter().zip(action).map(|(&c, &a)| self.moved(c, a)).collect();
        for (j, &t) in self.targets.iter().enumerate() {
            if captured & (1 << j) != 0 {
                continue;
            }
            let near = moved.iter().filter(|&&c| self.adjacent(c, t)).count();
            if near >= self.required[j] {
                captured |= 1 << j;
            }
        }
        self.encode(&moved, captured)
    }

    pub fn required(&self) -> &[usize] {
        &self.required
    }
}

impl DecPomdp for GridCapture {
    fn n_agents(&self) -> usize {
        self.config.n_agents
    }
    fn n_states(&self) -> usize {
        self.cells().pow(self.config.n_agents as u32) << self.config.n_targets
    }
    fn n_actions(&self) -> &[usize] {
        &self.actions
    }
    fn obs_dim(&self) -> usize {
        self.config.n_agents + 2 + 3 * self.config.n_targets
    }
    fn horizon(&self) -> usize {
        self.config.horizon
    }
    fn gamma(&self) -> f64 {
        self.config.gamma
    }
    fn initial_distribution(&self) -> Vec<(usize, f64)> {
        vec![(self.start, 1.0)]
    }
    fn transition(&self, state: usize, action: &[usize]) -> Result<Vec<(usize, f64)>> {
        self.check_action(action)?;
        if state >= self.n_states() {
            return Err(MacaError::invalid(format!("state {state} out of range")));
        }
        Ok(vec![(self.next_state(state, action), 1.0)])
    }
    fn reward(&self, state: usize, action: &[usize], next: usize) -> Result<f64> {
        self.check_action(action)?;
        let (_, before) = self.decode(state);
        let (_, after) = self.decode(next);
        Ok((after & !before).count_ones() as f64)
    }
    fn observe(&self, state: usize, agent: usize) -> Vec<f64> {
        let (agents, captured) = self.decode(state);
        let (w, h) = (self.config.width as f64, self.config.height as f64);
        let (x, y) = self.xy(agents[agent]);
        let mut o = vec![0.0; self.obs_dim()];
        o[agent] = 1.0;
        let base = self.config.n_agents;
        o[base] = x as f64 / w;
        o[base + 1] = y as f64 / h;
        for (j, &t) in self.targets.iter().enumerate() {
            let (tx, ty) = self.xy(t);
            o[base + 2 + 3 * j] = (tx - x) as f64 / w;
            o[base + 3 + 3 * j] = (ty - y) as f64 / h;
            o[base + 4 + 3 * j] = if captured & (1 << j) != 0 { 1.0 } else { 0.0 };
        }
        o
    }
    fn is_terminal(&self, state: usize) -> bool {
        let (_, captured) = self.decode(state);
        captured.count_ones() as usize == self.config.n_targets
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let env = grid_capture_env(GridCaptureConfig::new(3, 3, 2, 2, 4)).unwrap();
        for s in (0..env.n_states()).step_by(7) {
            let (a, c) = env.decode(s);
            assert_eq!(env.encode(&a, c), s);
        }
    }

    #[test]
    fn infeasible_placement_errors() {
        assert!(grid_capture_env(GridCaptureConfig::new(2, 1, 2, 1, 0)).is_err());
        let mut cfg = GridCaptureConfig::new(3, 3, 1, 1, 0);
        cfg.agent_positions = Some(vec![(1, 1)]);
        cfg.target_positions = Some(vec![(1, 1)]);
        assert!(grid_capture_env(cfg).is_err());
    }

    #[test]
    fn agents_cannot_walk_onto_targets_or_off_board() {
        let mut cfg = GridCaptureConfig::new(3, 3, 1, 1, 0);
        cfg.agent_positions = Some(vec![(0, 0)]);
        cfg.target_positions = Some(vec![(1, 0)]);
        let env = grid_capture_env(cfg).unwrap();
        let s = env.start_state();
        // right would enter the target cell, left leaves the board
        let (a, _) = env.decode(env.next_state(s, &[4]));
        assert_eq!(a, vec![0]);
        let (a, _) = env.decode(env.next_state(s, &[3]));
        assert_eq!(a, vec![0]);
    }
}
