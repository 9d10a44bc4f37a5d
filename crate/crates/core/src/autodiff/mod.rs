//! Small reverse-mode autodiff engine, fully connected networks and Adam.
//!
//! Gradient penalties need the gradient of a critic with respect to its input
//! to itself be differentiable in the critic's weights. Rather than replaying
//! the tape, [`mlp::Mlp::record_backprop`] writes the layer-wise chain rule
//! out as ordinary graph nodes.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use mlp::{
    bind, gradient_penalty, gradient_penalty_value, input_gradient, mlp_forward, Activation, Layer,
    Mlp, MlpTrace, ScalarNet,
};
pub use tape::{Gradients, NodeId, Op, TapeGraph};
pub use tensor::Tensor;
