use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng::{seeded, StageRng};
use crate::tensor::{dot, Tensor};

/// Parameters of the class-conditional Gaussian mixture.
///
/// Class centres are drawn in a random `intrinsic_dim`-dimensional subspace of
/// the ambient space with per-coordinate scale `separation`. Each class has
/// `modes` sub-modes offset from its centre by `mode_spread · separation`.
/// Samples add `noise` inside the subspace and `noise · nuisance_ratio` in
/// the orthogonal complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub modes: usize,
    pub intrinsic_dim: usize,
    pub ambient_dim: usize,
    pub separation: f64,
    pub mode_spread: f64,
    pub noise: f64,
    pub nuisance_ratio: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            modes: 2,
            intrinsic_dim: 8,
            ambient_dim: 32,
            separation: 1.0,
            mode_spread: 0.25,
            noise: 0.3,
            nuisance_ratio: 1.0,
            n_train: 2000,
            n_test: 1000,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("dataset: {msg}")));
        if self.classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.modes < 1 {
            return bad("need at least 1 mode per class");
        }
        if self.intrinsic_dim == 0 || self.intrinsic_dim > self.ambient_dim {
            return bad("intrinsic dim must be in 1..=ambient dim");
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("train and test sizes must be positive");
        }
        if !(self.noise >= 0.0) || !(self.nuisance_ratio >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        if !(self.separation >= 0.0) || !(self.mode_spread >= 0.0) {
            return bad("separation and mode spread must be non-negative");
        }
        Ok(())
    }
}

/// The sampled mixture: an orthonormal ambient basis and the mode means in
/// subspace coordinates.
#[derive(Debug, Clone)]
pub struct Mixture {
    spec: SyntheticSpec,
    /// `ambient_dim` orthonormal rows; the first `intrinsic_dim` span the signal.
    basis: Vec<Vec<f64>>,
    /// `mode_means[class][mode]` in subspace coordinates.
    mode_means: Vec<Vec<Vec<f64>>>,
}

impl Mixture {
    pub fn sample(spec: &SyntheticSpec, rng: &mut StageRng) -> Result<Self> {
        spec.validate()?;
        let d = spec.ambient_dim;
        let p = spec.intrinsic_dim;
        let basis = random_orthonormal(d, rng);
        let mut mode_means = Vec::with_capacity(spec.classes);
        for _ in 0..spec.classes {
            let centre: Vec<f64> = (0..p).map(|_| spec.separation * normal(rng)).collect();
            let modes = (0..spec.modes)
                .map(|_| {
                    centre
                        .iter()
                        .map(|c| c + spec.mode_spread * spec.separation * normal(rng))
                        .collect()
                })
                .collect();
            mode_means.push(modes);
        }
        Ok(Self {
            spec: spec.clone(),
            basis,
            mode_means,
        })
    }

    /// Ambient-space mean of `(class, mode)`.
    pub fn mode_mean(&self, class: usize, mode: usize) -> Vec<f64> {
        self.embed(&self.mode_means[class][mode], &[])
    }

    fn embed(&self, signal: &[f64], nuisance: &[f64]) -> Vec<f64> {
        let d = self.spec.ambient_dim;
        let p = self.spec.intrinsic_dim;
        let mut x = vec![0.0; d];
        for (k, &c) in signal.iter().enumerate() {
            for (xv, b) in x.iter_mut().zip(&self.basis[k]) {
                *xv += c * b;
            }
        }
        for (k, &c) in nuisance.iter().enumerate() {
            for (xv, b) in x.iter_mut().zip(&self.basis[p + k]) {
                *xv += c * b;
            }
        }
        x
    }

    /// Draws `n` class-balanced samples in shuffled order.
    pub fn draw(&self, n: usize, rng: &mut StageRng, split: Split) -> Result<Dataset> {
        let spec = &self.spec;
        let p = spec.intrinsic_dim;
        let nuisance_sigma = spec.noise * spec.nuisance_ratio;
        let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
        labels.shuffle(rng);
        let mut data = Vec::with_capacity(n * spec.ambient_dim);
        for &class in &labels {
            let mode = rng.random_range(0..spec.modes);
            let signal: Vec<f64> = self.mode_means[class][mode]
                .iter()
                .map(|m| m + spec.noise * normal(rng))
                .collect();
            let nuisance: Vec<f64> = (0..spec.ambient_dim - p)
                .map(|_| nuisance_sigma * normal(rng))
                .collect();
            data.extend(self.embed(&signal, &nuisance));
        }
        let features = Tensor::matrix(n, spec.ambient_dim, data)?;
        Dataset::new(features, labels, spec.classes, split)
    }
}

fn normal(rng: &mut StageRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Gram–Schmidt on Gaussian vectors.
fn random_orthonormal(d: usize, rng: &mut StageRng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        for b in &basis {
            let proj = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

/// Samples the mixture and draws `(train, test)`; bit-identical for equal specs.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    let (train, test, _) = generate_with_mixture(spec)?;
    Ok((train, test))
}

pub fn generate_with_mixture(spec: &SyntheticSpec) -> Result<(Dataset, Dataset, Mixture)> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let mixture = Mixture::sample(spec, &mut rng)?;
    let train = mixture.draw(spec.n_train, &mut rng, Split::Train)?;
    let test = mixture.draw(spec.n_test, &mut rng, Split::Test)?;
    Ok((train, test, mixture))
}
