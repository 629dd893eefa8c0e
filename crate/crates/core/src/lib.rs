//! Multi-level counterfactual advantages for cooperative multi-agent
//! actor-critic learning.

pub mod advantage;
pub mod critic;
pub mod envs;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod oracle;
pub mod scalar;
pub mod trainer;

pub use error::{MacaError, Result};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type ParamStore = numerics::ParamStore<f64>;
pub type ParamStore32 = numerics::ParamStore<f32>;
pub type Critic = critic::Critic<f64>;
pub type Critic32 = critic::Critic<f32>;
pub type BaselineWeights = advantage::BaselineWeights<f64>;
pub type BaselineWeights32 = advantage::BaselineWeights<f32>;
pub type AdvantageEstimate = advantage::AdvantageEstimate<f64>;
pub type AdvantageEstimate32 = advantage::AdvantageEstimate<f32>;
