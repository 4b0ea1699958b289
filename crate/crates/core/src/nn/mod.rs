//! Minimal differentiable engine: parameter sets, MLP layers with explicit
//! backward passes, losses, SGD, finite-difference checking and checkpoints.

mod checkpoint;
mod gradcheck;
mod loss;
mod mlp;
mod model;
mod param;

pub use checkpoint::Checkpoint;
pub use gradcheck::grad_check;
pub use loss::{
    argmax, bce_with_logits, log_softmax_rows, masked_cross_entropy, mse, sigmoid, softmax_cross_entropy, softmax_rows,
};
pub use mlp::{Mlp, MlpTrace};
pub use model::{ForwardMode, Model, ModelDims, ModelTrace};
pub use param::{HasParams, Param, ParamSet};
