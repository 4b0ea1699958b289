use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Vector-space augmentation: global scaling, Gaussian jitter, coordinate masking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugPolicy {
    /// Per-coordinate Gaussian jitter standard deviation.
    pub jitter: f64,
    /// Fraction of coordinates zeroed; `⌈mask·d⌉` are chosen without replacement.
    pub mask: f64,
    /// Multiplicative factor drawn uniformly from `[1 − scale, 1 + scale]`.
    pub scale: f64,
}

impl AugPolicy {
    pub const IDENTITY: AugPolicy = AugPolicy {
        jitter: 0.0,
        mask: 0.0,
        scale: 0.0,
    };

    pub fn weak(jitter: f64) -> Self {
        Self {
            jitter,
            ..Self::IDENTITY
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0) || !(0.0..=1.0).contains(&self.mask) || !(0.0..1.0).contains(&self.scale) {
            return Err(Error::Config(format!("invalid augmentation policy {self:?}")));
        }
        Ok(())
    }

    /// Checks the weak/strong relationship the consistency loss relies on.
    pub fn validate_pair(weak: &AugPolicy, strong: &AugPolicy) -> Result<()> {
        weak.validate()?;
        strong.validate()?;
        if weak.mask != 0.0 {
            return Err(Error::Config("weak policy must not mask coordinates".into()));
        }
        if strong.mask <= 0.0 || strong.jitter < weak.jitter {
            return Err(Error::Config(
                "strong policy must mask and jitter at least as much as the weak one".into(),
            ));
        }
        Ok(())
    }

    pub fn masked_count(&self, dim: usize) -> usize {
        let raw = self.mask * dim as f64;
        // Guard against 0.3·10 = 3.0000000000000004 rounding up to 4.
        ((raw - 1e-9).ceil().max(0.0) as usize).min(dim)
    }
}

/// Scale, then jitter, then mask; draws are taken from `rng` in that order.
pub fn augment<R: Rng + ?Sized>(x: &[f64], policy: &AugPolicy, rng: &mut R) -> Vec<f64> {
    let mut out = x.to_vec();
    if policy.scale > 0.0 {
        let factor = rng.random_range(1.0 - policy.scale..=1.0 + policy.scale);
        out.iter_mut().for_each(|v| *v *= factor);
    }
    if policy.jitter > 0.0 {
        for v in &mut out {
            let z: f64 = rng.sample(StandardNormal);
            *v += policy.jitter * z;
        }
    }
    let count = policy.masked_count(out.len());
    if count > 0 {
        for j in sample(rng, out.len(), count) {
            out[j] = 0.0;
        }
    }
    out
}

/// Augments every row of `x` independently, in row order.
pub fn augment_batch<R: Rng + ?Sized>(x: &Tensor, policy: &AugPolicy, rng: &mut R) -> Tensor {
    if *policy == AugPolicy::IDENTITY {
        return x.clone();
    }
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        out.extend(augment(x.row(i), policy, rng));
    }
    Tensor::matrix(x.rows(), x.cols(), out).expect("same shape")
}
