//! Dense tensors, reverse-mode differentiation and the layers used by the
//! critic and the actors.

pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_fn, relative_error, GradCheckReport};
pub use layers::{
    self_attention_forward, Activation, Embedding, EncoderBlock, Layer, LayerKind, LayerNorm, Linear, Mlp, MlpBlock,
    SelfAttention,
};
pub use ops::{gelu, log_softmax, relu, softmax};
pub use optim::Adam;
pub use params::{Init, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
