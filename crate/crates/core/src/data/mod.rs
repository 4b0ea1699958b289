//! Synthetic pools, the labeling oracle, batching and augmentation policies.

mod augment;
mod dataset;
mod synthetic;

pub use augment::{augment, augment_batch, AugPolicy};
pub use dataset::{batches, shuffled_batches, BatchFilter, Dataset, Split};
pub use synthetic::{generate, generate_with_mixture, Mixture, SyntheticSpec};
