use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Cell, ExperimentConfig, Pretrain, Selector};
use crate::contrastive::pretrain;
use crate::data::{generate, Dataset};
use crate::error::{Error, Result};
use crate::nn::{ForwardMode, Model};
use crate::rng::{derive_seed, stage_rng};
use crate::select::{run_selection, SelectionStep};
use crate::semisup::{train, EpochRecord, Method};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub pretrain_s: f64,
    pub select_s: f64,
    pub train_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionLog {
    pub indices: Vec<usize>,
    /// Coverage radius or discriminator score per pick; `None` when neither applies.
    pub values: Vec<Option<f64>>,
}

impl SelectionLog {
    fn from_steps(steps: &[SelectionStep]) -> Self {
        Self {
            indices: steps.iter().map(|s| s.index).collect(),
            values: steps.iter().map(|s| s.value.is_finite().then_some(s.value)).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,index,delta_or_score\n");
        for (i, (idx, v)) in self.indices.iter().zip(&self.values).enumerate() {
            let v = v.map_or("nan".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!("{i},{idx},{v}\n"));
        }
        out
    }
}

/// Everything one cell produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fingerprint: String,
    pub cell: Cell,
    pub status: Status,
    pub error: Option<String>,
    pub times: StageTimes,
    pub coverage_delta: Option<f64>,
    pub selection: SelectionLog,
    pub pretrain_loss: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub initial_acc: Option<f64>,
    pub reported_acc: Option<f64>,
    pub final_acc: Option<f64>,
    pub best_acc: Option<f64>,
    /// Labels revealed by the oracle.
    pub labeled_count: usize,
    /// Label reads of training rows during fine-tuning.
    pub label_reads: usize,
    /// Attempts to read a label that was never revealed.
    pub label_violations: usize,
}

impl RunRecord {
    pub fn failed(cfg: &ExperimentConfig, cell: &Cell, err: &Error) -> Self {
        Self {
            fingerprint: fingerprint(cfg, cell),
            cell: *cell,
            status: Status::Error,
            error: Some(err.to_string()),
            times: StageTimes::default(),
            coverage_delta: None,
            selection: SelectionLog {
                indices: Vec::new(),
                values: Vec::new(),
            },
            pretrain_loss: Vec::new(),
            history: Vec::new(),
            initial_acc: None,
            reported_acc: None,
            final_acc: None,
            best_acc: None,
            labeled_count: 0,
            label_reads: 0,
            label_violations: 0,
        }
    }
}

pub fn record_json(record: &RunRecord) -> Result<String> {
    serde_json::to_string_pretty(record).map_err(|e| Error::Parse(e.to_string()))
}

/// Settings that determine a cell's result, one `key = value` per line.
pub fn canonical_cell_text(cfg: &ExperimentConfig, cell: &Cell) -> String {
    let mut text: String = cfg
        .to_text()
        .lines()
        .filter(|l| !l.starts_with("grid.") && !l.starts_with("output."))
        .map(|l| format!("{l}\n"))
        .collect();
    text.push_str(&format!(
        "cell.pretrain = {}\ncell.selector = {}\ncell.trainer = {}\ncell.budget = {}\ncell.seed = {}\n",
        cell.pretrain.as_str(),
        cell.selector.as_str(),
        cell.trainer.as_str(),
        cell.budget,
        cell.seed
    ));
    text
}

/// First 16 hex digits of the SHA-256 of the canonical cell text.
pub fn fingerprint(cfg: &ExperimentConfig, cell: &Cell) -> String {
    let digest = Sha256::digest(canonical_cell_text(cfg, cell).as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Master seed of one run; stage streams hang off it.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> u64 {
    derive_seed(cfg.master_seed, &format!("run/{seed}"))
}

/// Model after stage 1, with its loss history and wall time.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub model: Model,
    pub loss: Vec<f64>,
    pub seconds: f64,
}

/// Initializes from the run's `init` stream and, for DCL, pre-trains with the
/// `pretrain` stream. Depends only on pretraining and seed.
pub fn build_encoder(cfg: &ExperimentConfig, pretraining: Pretrain, seed: u64, train_set: &Dataset) -> Result<Encoder> {
    let master = run_seed(cfg, seed);
    let mut init = stage_rng(master, "init");
    let mut model = Model::new(cfg.model_dims(), &mut init);
    let start = Instant::now();
    let loss = match pretraining {
        Pretrain::None => Vec::new(),
        Pretrain::Dcl => {
            let ccfg = crate::contrastive::ContrastiveConfig {
                seed: derive_seed(master, "pretrain"),
                ..cfg.contrastive()
            };
            pretrain(&mut model, train_set, &ccfg).map_err(|e| e.in_stage("pretrain"))?
        }
    };
    Ok(Encoder {
        model,
        loss,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs selection, labeling and fine-tuning for `cell` from a built encoder.
pub fn run_from_encoder(
    cfg: &ExperimentConfig,
    cell: &Cell,
    encoder: &Encoder,
    pool: &Dataset,
    test: &Dataset,
) -> Result<RunRecord> {
    Ok(run_cell(cfg, cell, encoder, pool, test)?.0)
}

/// As [`run_from_encoder`], also returning the fine-tuned model.
pub fn run_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    encoder: &Encoder,
    pool: &Dataset,
    test: &Dataset,
) -> Result<(RunRecord, Model)> {
    let master = run_seed(cfg, cell.seed);
    let mut train_set = pool.clone();
    let mut model = encoder.model.clone();

    let start = Instant::now();
    let (selection, coverage_delta) = select_for_cell(cfg, cell, &model, &mut train_set)?;
    let select_s = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let tcfg = crate::semisup::TrainConfig {
        seed: derive_seed(master, "train"),
        ..cfg.training(cell.trainer)
    };
    let outcome = train(&mut model, &train_set, &tcfg, test).map_err(|e| e.in_stage("train"))?;
    let train_s = start.elapsed().as_secs_f64();

    let record = RunRecord {
        fingerprint: fingerprint(cfg, cell),
        cell: *cell,
        status: Status::Ok,
        error: None,
        times: StageTimes {
            pretrain_s: encoder.seconds,
            select_s,
            train_s,
        },
        coverage_delta,
        selection,
        pretrain_loss: encoder.loss.clone(),
        history: outcome.history,
        initial_acc: Some(outcome.initial_acc),
        reported_acc: Some(outcome.reported_acc),
        final_acc: Some(outcome.final_acc),
        best_acc: Some(outcome.best_acc),
        labeled_count: train_set.labeled_count(),
        label_reads: train_set.label_reads(),
        label_violations: train_set.label_violations(),
    };
    Ok((record, model))
}

/// Labels the pool for `cell`: per-class seeds plus the cell's strategy on
/// `model`'s features, or everything for a fully labeled cell. Returns the
/// selection log and the final coverage radius.
pub fn select_for_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    model: &Model,
    train_set: &mut Dataset,
) -> Result<(SelectionLog, Option<f64>)> {
    let master = run_seed(cfg, cell.seed);
    Ok(match cell.selector.strategy() {
        Some(strategy) => {
            if cell.budget < cfg.dataset.classes * cfg.select.seed_per_class {
                return Err(Error::Config(format!(
                    "budget {} is below {} per-class seed labels",
                    cell.budget,
                    cfg.dataset.classes * cfg.select.seed_per_class
                )));
            }
            let features = model
                .forward(train_set.features(), ForwardMode::Embed)
                .map_err(|e| e.in_stage("select"))?;
            let scfg = cfg.selection(strategy, cell.budget);
            let mut rng = stage_rng(master, "select");
            let out = run_selection(train_set, &features, &scfg, &mut rng).map_err(|e| e.in_stage("select"))?;
            (SelectionLog::from_steps(&out.steps), Some(out.coverage_delta))
        }
        None => {
            if cell.budget != train_set.len() {
                return Err(Error::Config(format!(
                    "fully labeled cells need budget {} (the pool size), got {}",
                    train_set.len(),
                    cell.budget
                )));
            }
            let all: Vec<usize> = (0..train_set.len()).collect();
            train_set.oracle_label(&all).map_err(|e| e.in_stage("select"))?;
            (
                SelectionLog {
                    values: vec![None; all.len()],
                    indices: all,
                },
                Some(0.0),
            )
        }
    })
}

/// The full pipeline for one cell: generate, pre-train, select, fine-tune.
pub fn run_pipeline(cfg: &ExperimentConfig, cell: &Cell) -> Result<RunRecord> {
    cfg.validate()?;
    if cell.selector == Selector::All && cell.trainer != Method::LabeledOnly {
        return Err(Error::Config("fully labeled cells train labeled-only".into()));
    }
    let (pool, test) = generate(&cfg.dataset)?;
    let encoder = build_encoder(cfg, cell.pretrain, cell.seed, &pool)?;
    run_from_encoder(cfg, cell, &encoder, &pool, &test)
}
