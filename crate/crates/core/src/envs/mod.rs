//! Finite cooperative environments.
//!
//! All concrete games here are desk-scale constructions: repeated games
//! whose reward is a sum of subset rewards, and a small capture gridworld.

pub mod enumerate;
pub mod grid;
pub mod pomdp;
pub mod spec;
pub mod tabular;
pub mod trajectory;

pub use enumerate::{enumerate, Enumeration, DEFAULT_ENUMERATION_CAP};
pub use grid::{grid_capture_env, GridCapture, GridCaptureConfig, GRID_ACTIONS};
pub use pomdp::{reset, sample_categorical, step, DecPomdp, EpisodeState, JointActionSpace, StepOutcome};
pub use spec::{EnvSpec, Environment};
pub use tabular::{
    make_subset_game, random_dense_game, LevelSpec, RewardModel, SubsetEntry, SubsetGameConfig, SubsetRewardTable,
    TabularGame, Transitions,
};
pub use trajectory::{Timestep, Trajectory};
