//! Flat `key = value` experiment configuration.
//!
//! Lines are `section.key = value`; `#` starts a comment. Every key has a
//! default, unknown keys are rejected, and lists are comma separated.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contrastive::ContrastiveConfig;
use crate::data::{AugPolicy, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::ModelDims;
use crate::select::{Certainty, SelectionConfig, Strategy};
use crate::semisup::{Method, Report, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pretrain {
    None,
    Dcl,
}

impl Pretrain {
    pub fn as_str(self) -> &'static str {
        match self {
            Pretrain::None => "none",
            Pretrain::Dcl => "dcl",
        }
    }
}

impl FromStr for Pretrain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Pretrain::None),
            "dcl" => Ok(Pretrain::Dcl),
            _ => Err(Error::Config(format!("unknown pretraining {s:?}"))),
        }
    }
}

/// Which examples get labeled: an active strategy, or the whole pool for the
/// supervised reference cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Random,
    Coreset,
    Vaal,
    All,
}

impl Selector {
    pub fn as_str(self) -> &'static str {
        match self {
            Selector::Random => "random",
            Selector::Coreset => "coreset",
            Selector::Vaal => "vaal",
            Selector::All => "all",
        }
    }

    pub fn strategy(self) -> Option<Strategy> {
        match self {
            Selector::Random => Some(Strategy::Random),
            Selector::Coreset => Some(Strategy::Coreset),
            Selector::Vaal => Some(Strategy::Vaal),
            Selector::All => None,
        }
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Selector::All),
            other => Ok(match other.parse::<Strategy>()? {
                Strategy::Random => Selector::Random,
                Strategy::Coreset => Selector::Coreset,
                Strategy::Vaal => Selector::Vaal,
            }),
        }
    }
}

/// One ablation cell for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub pretrain: Pretrain,
    pub selector: Selector,
    pub trainer: Method,
    pub budget: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// `(pretraining, trainer)` blocks, each crossed with every selector.
    pub blocks: Vec<(Pretrain, Method)>,
    pub selectors: Vec<Selector>,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Adds a fully labeled labeled-only cell per pretraining.
    pub supervised: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            blocks: vec![
                (Pretrain::None, Method::LabeledOnly),
                (Pretrain::Dcl, Method::LabeledOnly),
                (Pretrain::None, Method::PseudoLabel),
                (Pretrain::None, Method::FixMatch),
            ],
            selectors: vec![Selector::Random, Selector::Coreset, Selector::Vaal],
            budgets: vec![20, 50, 100],
            seeds: vec![0, 1, 2],
            supervised: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: SyntheticSpec,
    pub hidden: Vec<usize>,
    pub feature: usize,
    pub weak: AugPolicy,
    pub strong: AugPolicy,
    pub pretrain: ContrastiveConfig,
    /// `None` means `1/K`.
    pub tau_plus: Option<f64>,
    pub select: SelectionConfig,
    pub train: TrainConfig,
    pub grid: GridSpec,
    pub master_seed: u64,
    pub timings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dataset = SyntheticSpec::default();
        let train = TrainConfig::default();
        Self {
            hidden: vec![64, 64],
            feature: 16,
            weak: train.weak,
            strong: train.strong,
            pretrain: ContrastiveConfig::for_classes(dataset.classes),
            tau_plus: None,
            select: SelectionConfig::default(),
            train,
            grid: GridSpec::default(),
            master_seed: 0,
            timings: false,
            dataset,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T, F>(key: &str, value: &str, item: F) -> Result<Vec<T>>
where
    F: Fn(&str) -> Result<T>,
{
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.dataset;
        let p = &mut self.pretrain;
        let t = &mut self.train;
        match key {
            "dataset.classes" => d.classes = parse(key, value)?,
            "dataset.modes" => d.modes = parse(key, value)?,
            "dataset.intrinsic_dim" => d.intrinsic_dim = parse(key, value)?,
            "dataset.ambient_dim" => d.ambient_dim = parse(key, value)?,
            "dataset.separation" => d.separation = parse(key, value)?,
            "dataset.mode_spread" => d.mode_spread = parse(key, value)?,
            "dataset.noise" => d.noise = parse(key, value)?,
            "dataset.nuisance_ratio" => d.nuisance_ratio = parse(key, value)?,
            "dataset.n_train" => d.n_train = parse(key, value)?,
            "dataset.n_test" => d.n_test = parse(key, value)?,
            "dataset.seed" => d.seed = parse(key, value)?,

            "model.hidden" => self.hidden = parse_list(key, value, |x| parse(key, x))?,
            "model.feature" => self.feature = parse(key, value)?,

            "aug.weak.jitter" => self.weak.jitter = parse(key, value)?,
            "aug.strong.jitter" => self.strong.jitter = parse(key, value)?,
            "aug.strong.mask" => self.strong.mask = parse(key, value)?,
            "aug.strong.scale" => self.strong.scale = parse(key, value)?,

            "pretrain.temperature" => p.temperature = parse(key, value)?,
            "pretrain.tau_plus" => {
                self.tau_plus = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "pretrain.batch_size" => p.batch_size = parse(key, value)?,
            "pretrain.epochs" => p.epochs = parse(key, value)?,
            "pretrain.lr" => p.lr = parse(key, value)?,
            "pretrain.momentum" => p.momentum = parse(key, value)?,
            "pretrain.cosine_decay" => p.cosine_decay = parse_bool(key, value)?,

            "select.seed_per_class" => self.select.seed_per_class = parse(key, value)?,
            "select.pca_dim" => self.select.pca_dim = parse(key, value)?,
            "select.rounds" => self.select.rounds = parse(key, value)?,
            "select.certainty" => self.select.certainty = value.parse::<Certainty>()?,
            "select.vaal.latent_dim" => self.select.vaal.latent_dim = parse(key, value)?,
            "select.vaal.hidden" => self.select.vaal.hidden = parse(key, value)?,
            "select.vaal.epochs" => self.select.vaal.epochs = parse(key, value)?,
            "select.vaal.batch_size" => self.select.vaal.batch_size = parse(key, value)?,
            "select.vaal.lambda_adv" => self.select.vaal.lambda_adv = parse(key, value)?,
            "select.vaal.beta_kl" => self.select.vaal.beta_kl = parse(key, value)?,
            "select.vaal.lr" => self.select.vaal.lr = parse(key, value)?,
            "select.vaal.momentum" => self.select.vaal.momentum = parse(key, value)?,

            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch_labeled" => t.batch_labeled = parse(key, value)?,
            "train.unlabeled_ratio" => t.unlabeled_ratio = parse(key, value)?,
            "train.threshold" => t.threshold = parse(key, value)?,
            "train.lambda_u" => t.lambda_u = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.momentum" => t.momentum = parse(key, value)?,
            "train.cosine_decay" => t.cosine_decay = parse_bool(key, value)?,
            "train.report" => {
                t.report = if value == "auto" {
                    None
                } else {
                    Some(value.parse::<Report>()?)
                }
            }

            "grid.blocks" => {
                self.grid.blocks = parse_list(key, value, |item| {
                    let (pre, tr) = item
                        .split_once('/')
                        .ok_or_else(|| Error::Config(format!("{key}: expected pretrain/trainer, got {item:?}")))?;
                    Ok((pre.trim().parse()?, tr.trim().parse()?))
                })?
            }
            "grid.selectors" => self.grid.selectors = parse_list(key, value, str::parse)?,
            "grid.budgets" => self.grid.budgets = parse_list(key, value, |x| parse(key, x))?,
            "grid.seeds" => self.grid.seeds = parse_list(key, value, |x| parse(key, x))?,
            "grid.supervised" => self.grid.supervised = parse_bool(key, value)?,

            "run.seed" => self.master_seed = parse(key, value)?,
            "output.timings" => self.timings = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.contrastive().validate()?;
        self.training(Method::FixMatch).validate()?;
        if self.feature == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("model: layer widths must be positive".into()));
        }
        if self.select.pca_dim == 0 || self.select.pca_dim > self.feature {
            return Err(Error::Config(format!(
                "select.pca_dim {} must be in 1..={}",
                self.select.pca_dim, self.feature
            )));
        }
        if self.grid.selectors.contains(&Selector::All) {
            return Err(Error::Config(
                "grid.selectors: use grid.supervised for fully labeled cells".into(),
            ));
        }
        let seeds = self.dataset.classes * self.select.seed_per_class;
        for &b in &self.grid.budgets {
            if b < seeds || b > self.dataset.n_train {
                return Err(Error::Config(format!(
                    "grid.budgets: {b} outside {seeds}..={}",
                    self.dataset.n_train
                )));
            }
        }
        Ok(())
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            input: self.dataset.ambient_dim,
            hidden: self.hidden.clone(),
            feature: self.feature,
            classes: self.dataset.classes,
        }
    }

    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            tau_plus: self.tau_plus.unwrap_or(1.0 / self.dataset.classes as f64),
            weak: self.weak,
            ..self.pretrain.clone()
        }
    }

    pub fn selection(&self, strategy: Strategy, budget: usize) -> SelectionConfig {
        SelectionConfig {
            strategy,
            budget,
            ..self.select.clone()
        }
    }

    pub fn training(&self, method: Method) -> TrainConfig {
        TrainConfig {
            method,
            weak: self.weak,
            strong: self.strong,
            ..self.train.clone()
        }
    }

    /// Every cell of the grid, in canonical order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &seed in &self.grid.seeds {
            for &(pretrain, trainer) in &self.grid.blocks {
                for &selector in &self.grid.selectors {
                    for &budget in &self.grid.budgets {
                        cells.push(Cell {
                            pretrain,
                            selector,
                            trainer,
                            budget,
                            seed,
                        });
                    }
                }
            }
            if self.grid.supervised {
                let mut pretrainings: Vec<Pretrain> = self.grid.blocks.iter().map(|b| b.0).collect();
                pretrainings.sort();
                pretrainings.dedup();
                for pretrain in pretrainings {
                    cells.push(Cell {
                        pretrain,
                        selector: Selector::All,
                        trainer: Method::LabeledOnly,
                        budget: self.dataset.n_train,
                        seed,
                    });
                }
            }
        }
        cells.sort();
        cells.dedup();
        cells
    }

    /// Canonical `key = value` listing of every setting.
    pub fn to_text(&self) -> String {
        let d = &self.dataset;
        let p = &self.pretrain;
        let s = &self.select;
        let v = &self.select.vaal;
        let t = &self.train;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("dataset.classes", d.classes.to_string());
        put("dataset.modes", d.modes.to_string());
        put("dataset.intrinsic_dim", d.intrinsic_dim.to_string());
        put("dataset.ambient_dim", d.ambient_dim.to_string());
        put("dataset.separation", format!("{:?}", d.separation));
        put("dataset.mode_spread", format!("{:?}", d.mode_spread));
        put("dataset.noise", format!("{:?}", d.noise));
        put("dataset.nuisance_ratio", format!("{:?}", d.nuisance_ratio));
        put("dataset.n_train", d.n_train.to_string());
        put("dataset.n_test", d.n_test.to_string());
        put("dataset.seed", d.seed.to_string());
        put("model.hidden", join(&self.hidden));
        put("model.feature", self.feature.to_string());
        put("aug.weak.jitter", format!("{:?}", self.weak.jitter));
        put("aug.strong.jitter", format!("{:?}", self.strong.jitter));
        put("aug.strong.mask", format!("{:?}", self.strong.mask));
        put("aug.strong.scale", format!("{:?}", self.strong.scale));
        put("pretrain.temperature", format!("{:?}", p.temperature));
        put(
            "pretrain.tau_plus",
            self.tau_plus.map_or("auto".into(), |x| format!("{x:?}")),
        );
        put("pretrain.batch_size", p.batch_size.to_string());
        put("pretrain.epochs", p.epochs.to_string());
        put("pretrain.lr", format!("{:?}", p.lr));
        put("pretrain.momentum", format!("{:?}", p.momentum));
        put("pretrain.cosine_decay", p.cosine_decay.to_string());
        put("select.seed_per_class", s.seed_per_class.to_string());
        put("select.pca_dim", s.pca_dim.to_string());
        put("select.rounds", s.rounds.to_string());
        put("select.certainty", s.certainty.as_str().into());
        put("select.vaal.latent_dim", v.latent_dim.to_string());
        put("select.vaal.hidden", v.hidden.to_string());
        put("select.vaal.epochs", v.epochs.to_string());
        put("select.vaal.batch_size", v.batch_size.to_string());
        put("select.vaal.lambda_adv", format!("{:?}", v.lambda_adv));
        put("select.vaal.beta_kl", format!("{:?}", v.beta_kl));
        put("select.vaal.lr", format!("{:?}", v.lr));
        put("select.vaal.momentum", format!("{:?}", v.momentum));
        put("train.epochs", t.epochs.to_string());
        put("train.batch_labeled", t.batch_labeled.to_string());
        put("train.unlabeled_ratio", t.unlabeled_ratio.to_string());
        put("train.threshold", format!("{:?}", t.threshold));
        put("train.lambda_u", format!("{:?}", t.lambda_u));
        put("train.lr", format!("{:?}", t.lr));
        put("train.momentum", format!("{:?}", t.momentum));
        put("train.cosine_decay", t.cosine_decay.to_string());
        put("train.report", t.report.map_or("auto", Report::as_str).into());
        put(
            "grid.blocks",
            self.grid
                .blocks
                .iter()
                .map(|(p, t)| format!("{}/{}", p.as_str(), t.as_str()))
                .collect::<Vec<_>>()
                .join(","),
        );
        put(
            "grid.selectors",
            self.grid
                .selectors
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("grid.budgets", join(&self.grid.budgets));
        put("grid.seeds", join(&self.grid.seeds));
        put("grid.supervised", self.grid.supervised.to_string());
        put("run.seed", self.master_seed.to_string());
        put("output.timings", self.timings.to_string());
        out
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}
