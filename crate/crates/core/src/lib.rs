//! Label-efficient learning on synthetic pools: contrastive pre-training,
//! active selection of examples to label, and semi-supervised fine-tuning,
//! plus a harness that runs every combination over budgets and seeds.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod contrastive;
pub mod data;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod select;
pub mod semisup;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
