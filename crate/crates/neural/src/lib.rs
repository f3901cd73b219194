//! A small dense-array engine with reverse-mode differentiation and the layers
//! used by the exploration policy: convolution stacks, MLPs, self and cross
//! graph attention, Sinkhorn normalization and Adam.

pub mod array;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod sinkhorn;

pub use array::{matmul, Array};
pub use gradcheck::{check_gradients, GradCheck, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{conv_encoder, ConvStack, CrossOutput, GatCross, GatSelf, Linear, Mlp, ATTN_DIM};
pub use optim::{clip_grad_norm, grad_norm, Adam};
pub use params::{ParamId, ParameterSet};
pub use sinkhorn::{log_sinkhorn, row_argmax, sinkhorn, sinkhorn_array};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
