//! The coordinate MLP: activations, initialization and the three passes
//! (plain forward, forward with input tangents, reverse through both).

mod activation;
mod params;
mod pass;

pub use activation::{Activation, ActivationKind, ELU_ALPHA, SELU_ALPHA, SELU_LAMBDA};
pub use params::{init_params, InitScheme, Layer, MlpArch, MlpParams};
pub use pass::{
    backward_sobolev, backward_trace, forward, forward_dual, forward_trace, DualBatch, Trace,
};
