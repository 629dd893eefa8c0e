//! Serializable environment descriptions.

use serde::{Deserialize, Serialize};

use super::grid::{grid_capture_env, GridCapture, GridCaptureConfig};
use super::pomdp::DecPomdp;
use super::tabular::{make_subset_game, SubsetGameConfig, TabularGame};
use crate::error::Result;

/// JSON form of an environment. Tagged by `"kind"`:
/// `subset_game` (generated from levels and a seed), `tabular` (fully
/// explicit tables) or `grid_capture`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    SubsetGame(SubsetGameConfig),
    Tabular(TabularGame),
    GridCapture(GridCaptureConfig),
}

impl EnvSpec {
    pub fn build(&self) -> Result<Environment> {
        Ok(match self {
            EnvSpec::SubsetGame(cfg) => Environment::Tabular(make_subset_game(cfg)?),
            EnvSpec::Tabular(game) => {
                game.validate()?;
                Environment::Tabular(game.clone())
            }
            EnvSpec::GridCapture(cfg) => Environment::Grid(grid_capture_env(cfg.clone())?),
        })
    }
}

/// Concrete environment built from an [`EnvSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum Environment {
    Tabular(TabularGame),
    Grid(GridCapture),
}

macro_rules! dispatch {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            Environment::Tabular($e) => $body,
            Environment::Grid($e) => $body,
        }
    };
}

impl DecPomdp for Environment {
    fn n_agents(&self) -> usize {
        dispatch!(self, e => e.n_agents())
    }
    fn n_states(&self) -> usize {
        dispatch!(self, e => e.n_states())
    }
    fn n_actions(&self) -> &[usize] {
        dispatch!(self, e => e.n_actions())
    }
    fn obs_dim(&self) -> usize {
        dispatch!(self, e => e.obs_dim())
    }
    fn horizon(&self) -> usize {
        dispatch!(self, e => e.horizon())
    }
    fn gamma(&self) -> f64 {
        dispatch!(self, e => e.gamma())
    }
    fn initial_distribution(&self) -> Vec<(usize, f64)> {
        dispatch!(self, e => e.initial_distribution())
    }
    fn transition(&self, state: usize, action: &[usize]) -> Result<Vec<(usize, f64)>> {
        dispatch!(self, e => e.transition(state, action))
    }
    fn reward(&self, state: usize, action: &[usize], next: usize) -> Result<f64> {
        dispatch!(self, e => e.reward(state, action, next))
    }
    fn observe(&self, state: usize, agent: usize) -> Vec<f64> {
        dispatch!(self, e => e.observe(state, agent))
    }
    fn is_terminal(&self, state: usize) -> bool {
        dispatch!(self, e => e.is_terminal(state))
    }
}
