//! Choosing which pool examples to send to the labeling oracle.

mod coreset;
mod pca;
mod vaal;

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use coreset::{coreset_select, coverage_radius};
pub use pca::{pca_reduce, Pca, PCA_MAX_ITERATIONS, PCA_TOLERANCE};
pub use vaal::{vaal_fit, vaal_select, Certainty, VaalConfig, VaalFit};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::StageRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Coreset,
    Vaal,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::Coreset, Strategy::Vaal];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Coreset => "coreset",
            Strategy::Vaal => "vaal",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "coreset" => Ok(Strategy::Coreset),
            "vaal" => Ok(Strategy::Vaal),
            _ => Err(Error::Config(format!("unknown selection strategy {s:?}"))),
        }
    }
}

impl FromStr for Certainty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowest_probability" => Ok(Certainty::LowestProbability),
            "closest_to_half" => Ok(Certainty::ClosestToHalf),
            _ => Err(Error::Config(format!("unknown certainty rule {s:?}"))),
        }
    }
}

impl Certainty {
    pub fn as_str(self) -> &'static str {
        match self {
            Certainty::LowestProbability => "lowest_probability",
            Certainty::ClosestToHalf => "closest_to_half",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    /// Total labels, seed labels included.
    pub budget: usize,
    pub seed_per_class: usize,
    pub pca_dim: usize,
    /// Acquisition rounds after seeding; the active picks are split evenly.
    pub rounds: usize,
    pub certainty: Certainty,
    pub vaal: VaalConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Random,
            budget: 20,
            seed_per_class: 1,
            pca_dim: 8,
            rounds: 1,
            certainty: Certainty::LowestProbability,
            vaal: VaalConfig::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, classes: usize, pool: usize, feature_dim: usize) -> Result<()> {
        let seeds = classes * self.seed_per_class;
        if self.budget < seeds {
            return Err(Error::Config(format!(
                "budget {} is below the {seeds} per-class seed labels",
                self.budget
            )));
        }
        if self.budget > pool {
            return Err(Error::Config(format!(
                "budget {} exceeds pool size {pool}",
                self.budget
            )));
        }
        if self.pca_dim == 0 || self.pca_dim > feature_dim {
            return Err(Error::Config(format!(
                "PCA dim {} must be in 1..={feature_dim}",
                self.pca_dim
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("at least one selection round is required".into()));
        }
        Ok(())
    }
}

/// Picked indices in selection order with per-step diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    /// Coreset coverage radius at each greedy step.
    pub deltas: Vec<f64>,
    /// Discriminator probability-of-labeled for every pool item (VAAL).
    pub scores: Vec<f64>,
}

/// `per_class` labels per class, uniformly without replacement.
pub fn seed_select(dataset: &Dataset, per_class: usize, rng: &mut StageRng) -> Result<Vec<usize>> {
    let mut picks = Vec::with_capacity(per_class * dataset.classes());
    for (class, members) in dataset.class_members().iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::Data(format!(
                "class {class} has {} examples, {per_class} seed labels requested",
                members.len()
            )));
        }
        picks.extend(sample(rng, members.len(), per_class).into_iter().map(|j| members[j]));
    }
    Ok(picks)
}

pub fn random_select(pool: &[usize], count: usize, rng: &mut StageRng) -> Result<Vec<usize>> {
    if count > pool.len() {
        return Err(Error::Budget(format!(
            "cannot pick {count} from a pool of {}",
            pool.len()
        )));
    }
    Ok(sample(rng, pool.len(), count).into_iter().map(|j| pool[j]).collect())
}

/// One row of the selection log.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStep {
    pub index: usize,
    /// Coverage radius for coreset picks, discriminator score for VAAL picks,
    /// NaN for seed and random picks.
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub steps: Vec<SelectionStep>,
    /// Coverage radius of the final labeled set in PCA space.
    pub coverage_delta: f64,
}

impl SelectionOutcome {
    pub fn indices(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.index).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,index,delta_or_score\n");
        for (i, s) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{}", s.index, fmt_value(s.value));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.6}")
    }
}

/// Seeds every class, then spends the rest of the budget with the configured
/// strategy on PCA-reduced `features`; every pick goes through the oracle.
pub fn run_selection(
    train: &mut Dataset,
    features: &Tensor,
    cfg: &SelectionConfig,
    rng: &mut StageRng,
) -> Result<SelectionOutcome> {
    if features.rows() != train.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows for a pool of {}",
            features.rows(),
            train.len()
        )));
    }
    cfg.validate(train.classes(), train.len(), features.cols())?;
    if train.labeled_count() > 0 {
        return Err(Error::Budget("selection must start from an unlabeled pool".into()));
    }
    let mut steps = Vec::with_capacity(cfg.budget);
    let seeds = seed_select(train, cfg.seed_per_class, rng)?;
    train.oracle_label(&seeds)?;
    steps.extend(seeds.iter().map(|&index| SelectionStep { index, value: f64::NAN }));

    let (_, embedded) = pca_reduce(features, cfg.pca_dim)?;
    let active = cfg.budget - seeds.len();
    for round in 0..cfg.rounds {
        let count = active / cfg.rounds + usize::from(round < active % cfg.rounds);
        if count == 0 {
            continue;
        }
        let pool = train.unlabeled_indices();
        let picked: Vec<SelectionStep> = match cfg.strategy {
            Strategy::Random => random_select(&pool, count, rng)?
                .into_iter()
                .map(|index| SelectionStep { index, value: f64::NAN })
                .collect(),
            Strategy::Coreset => {
                let r = coreset_select(&embedded, &train.labeled_indices(), count)?;
                r.indices
                    .iter()
                    .zip(&r.deltas)
                    .map(|(&index, &value)| SelectionStep { index, value })
                    .collect()
            }
            Strategy::Vaal => {
                let vcfg = VaalConfig {
                    seed: rng.random(),
                    ..cfg.vaal.clone()
                };
                let fit = vaal_fit(&embedded, train.labeled_mask(), &vcfg)?;
                let r = vaal_select(&fit.scores, &pool, count, cfg.certainty)?;
                r.indices
                    .iter()
                    .map(|&index| SelectionStep {
                        index,
                        value: fit.scores[index],
                    })
                    .collect()
            }
        };
        let idx: Vec<usize> = picked.iter().map(|s| s.index).collect();
        train.oracle_label(&idx)?;
        steps.extend(picked);
    }
    let coverage_delta = coverage_radius(&embedded, &train.labeled_indices())?;
    Ok(SelectionOutcome { steps, coverage_delta })
}
