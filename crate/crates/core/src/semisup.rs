//! Fine-tuning from a partially labeled pool: labeled-only training, plain
//! pseudo-labeling and FixMatch-style consistency regularization.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contrastive::cosine_lr;
use crate::data::{augment_batch, shuffled_batches, AugPolicy, Dataset};
use crate::error::{Error, Result};
use crate::nn::{argmax, masked_cross_entropy, softmax_cross_entropy, softmax_rows, ForwardMode, HasParams, Model};
use crate::rng::{seeded, StageRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LabeledOnly,
    PseudoLabel,
    FixMatch,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::LabeledOnly, Method::PseudoLabel, Method::FixMatch];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::LabeledOnly => "labeled_only",
            Method::PseudoLabel => "pseudo_label",
            Method::FixMatch => "fixmatch",
        }
    }

    /// Best-during-training for labeled-only runs, final accuracy otherwise.
    pub fn default_report(self) -> Report {
        match self {
            Method::LabeledOnly => Report::Best,
            _ => Report::Final,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "labeled_only" => Ok(Method::LabeledOnly),
            "pseudo_label" => Ok(Method::PseudoLabel),
            "fixmatch" => Ok(Method::FixMatch),
            _ => Err(Error::Config(format!("unknown training method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Report {
    Final,
    Best,
}

impl FromStr for Report {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(Report::Final),
            "best" => Ok(Report::Best),
            _ => Err(Error::Config(format!("unknown reporting rule {s:?}"))),
        }
    }
}

impl Report {
    pub fn as_str(self) -> &'static str {
        match self {
            Report::Final => "final",
            Report::Best => "best",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_labeled: usize,
    /// Unlabeled batch size as a multiple of the labeled one.
    pub unlabeled_ratio: usize,
    pub threshold: f64,
    pub lambda_u: f64,
    pub weak: AugPolicy,
    pub strong: AugPolicy,
    pub lr: f64,
    pub momentum: f64,
    pub cosine_decay: bool,
    /// `None` picks the method's default rule.
    pub report: Option<Report>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::FixMatch,
            epochs: 30,
            batch_labeled: 16,
            unlabeled_ratio: 7,
            threshold: 0.95,
            lambda_u: 1.0,
            weak: AugPolicy::weak(0.5),
            strong: AugPolicy {
                jitter: 0.5,
                mask: 0.125,
                scale: 0.1,
            },
            lr: 0.003,
            momentum: 0.9,
            cosine_decay: true,
            report: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "train: threshold {} not in (0, 1]",
                self.threshold
            )));
        }
        if !(self.lambda_u >= 0.0) {
            return Err(Error::Config(format!("train: lambda_u {} is negative", self.lambda_u)));
        }
        if self.batch_labeled == 0 || self.unlabeled_ratio == 0 {
            return Err(Error::Config("train: batch sizes must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("train: invalid learning rate or momentum".into()));
        }
        AugPolicy::validate_pair(&self.weak, &self.strong)
    }

    pub fn batch_unlabeled(&self) -> usize {
        self.batch_labeled * self.unlabeled_ratio
    }

    pub fn report_rule(&self) -> Report {
        self.report.unwrap_or(self.method.default_report())
    }
}

/// Consistency term on one unlabeled batch.
#[derive(Debug, Clone)]
pub struct UnlabeledLoss {
    /// Mean over the whole batch; rows below the threshold contribute 0.
    pub loss: f64,
    /// Gradient w.r.t. the logits the loss is taken on.
    pub grad: Tensor,
    /// Gradient w.r.t. the logits the targets came from: always zero.
    pub grad_target: Tensor,
    pub passing: Vec<bool>,
}

/// Cross-entropy of `logits` against the confident argmax of `target_logits`.
///
/// Targets are constants: no gradient reaches `target_logits`.
pub fn consistency_loss(target_logits: &Tensor, logits: &Tensor, threshold: f64) -> Result<UnlabeledLoss> {
    if target_logits.shape() != logits.shape() {
        return Err(Error::Dimension(format!(
            "target logits {:?} vs logits {:?}",
            target_logits.shape(),
            logits.shape()
        )));
    }
    let probs = softmax_rows(target_logits);
    let targets: Vec<Option<usize>> = (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let k = argmax(row);
            (row[k] >= threshold).then_some(k)
        })
        .collect();
    let (loss, grad) = masked_cross_entropy(logits, &targets, logits.rows())?;
    Ok(UnlabeledLoss {
        loss,
        grad,
        grad_target: Tensor::zeros(target_logits.shape()),
        passing: targets.iter().map(Option::is_some).collect(),
    })
}

/// Plain pseudo-labeling on unaugmented unlabeled inputs.
pub fn pseudo_label_loss(model: &Model, unlabeled: &Tensor, threshold: f64) -> Result<UnlabeledLoss> {
    let logits = model.forward(unlabeled, ForwardMode::Classify)?;
    consistency_loss(&logits, &logits, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixMatchLoss {
    pub total: f64,
    pub supervised: f64,
    pub unlabeled: f64,
    pub passing: usize,
}

/// Inputs of one training step after augmentation, with their traces.
struct StepGrads {
    loss: FixMatchLoss,
    parts: Vec<(crate::nn::ModelTrace, Tensor)>,
}

#[allow(clippy::too_many_arguments)]
fn fixmatch_step(
    model: &Model,
    labeled: &Tensor,
    labels: &[usize],
    unlabeled: &Tensor,
    threshold: f64,
    lambda_u: f64,
    weak: &AugPolicy,
    strong: &AugPolicy,
    rng: &mut StageRng,
) -> Result<StepGrads> {
    let xl = augment_batch(labeled, weak, rng);
    let (logits_l, trace_l) = model.forward_traced(&xl, ForwardMode::Classify)?;
    let (supervised, grad_l) = softmax_cross_entropy(&logits_l, labels)?;
    let mut parts = Vec::with_capacity(2);
    let mut unl = 0.0;
    let mut passing = 0;
    if unlabeled.rows() > 0 {
        let xw = augment_batch(unlabeled, weak, rng);
        let xs = augment_batch(unlabeled, strong, rng);
        let weak_logits = model.forward(&xw, ForwardMode::Classify)?;
        let (strong_logits, trace_s) = model.forward_traced(&xs, ForwardMode::Classify)?;
        let u = consistency_loss(&weak_logits, &strong_logits, threshold)?;
        unl = u.loss;
        passing = u.passing.iter().filter(|&&p| p).count();
        if lambda_u != 0.0 && passing > 0 {
            let mut g = u.grad;
            g.scale(lambda_u);
            parts.push((trace_s, g));
        }
    }
    parts.insert(0, (trace_l, grad_l));
    Ok(StepGrads {
        loss: FixMatchLoss {
            total: supervised + lambda_u * unl,
            supervised,
            unlabeled: unl,
            passing,
        },
        parts,
    })
}

/// `L_s + λ_u·L_u` with weak views for the labeled batch and the targets,
/// strong views for the consistency term. Draws: labeled weak, unlabeled
/// weak, unlabeled strong.
#[allow(clippy::too_many_arguments)]
pub fn fixmatch_loss(
    model: &Model,
    labeled: &Tensor,
    labels: &[usize],
    unlabeled: &Tensor,
    threshold: f64,
    lambda_u: f64,
    weak: &AugPolicy,
    strong: &AugPolicy,
    rng: &mut StageRng,
) -> Result<FixMatchLoss> {
    Ok(fixmatch_step(
        model, labeled, labels, unlabeled, threshold, lambda_u, weak, strong, rng,
    )?
    .loss)
}

fn pseudo_label_step(
    model: &Model,
    labeled: &Tensor,
    labels: &[usize],
    unlabeled: &Tensor,
    threshold: f64,
    lambda_u: f64,
) -> Result<StepGrads> {
    let (logits_l, trace_l) = model.forward_traced(labeled, ForwardMode::Classify)?;
    let (supervised, grad_l) = softmax_cross_entropy(&logits_l, labels)?;
    let mut parts = vec![(trace_l, grad_l)];
    let mut unl = 0.0;
    let mut passing = 0;
    if unlabeled.rows() > 0 {
        let (logits_u, trace_u) = model.forward_traced(unlabeled, ForwardMode::Classify)?;
        let u = consistency_loss(&logits_u, &logits_u, threshold)?;
        unl = u.loss;
        passing = u.passing.iter().filter(|&&p| p).count();
        if lambda_u != 0.0 && passing > 0 {
            let mut g = u.grad;
            g.scale(lambda_u);
            parts.push((trace_u, g));
        }
    }
    Ok(StepGrads {
        loss: FixMatchLoss {
            total: supervised + lambda_u * unl,
            supervised,
            unlabeled: unl,
            passing,
        },
        parts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub initial_acc: f64,
    pub final_acc: f64,
    pub best_acc: f64,
    pub reported_acc: f64,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_acc\n");
        for r in &self.history {
            out.push_str(&format!("{},{:.6},{:.6}\n", r.epoch, r.train_loss, r.test_acc));
        }
        out
    }
}

/// Fraction of rows whose argmax logit matches `labels`.
pub fn accuracy(model: &Model, features: &Tensor, labels: &[usize]) -> Result<f64> {
    if features.rows() == 0 {
        return Err(Error::Domain("accuracy of an empty set".into()));
    }
    let logits = model.forward(features, ForwardMode::Classify)?;
    let correct = (0..logits.rows())
        .filter(|&i| argmax(logits.row(i)) == labels[i])
        .count();
    Ok(correct as f64 / features.rows() as f64)
}

pub fn evaluate(model: &Model, testset: &Dataset) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::Domain("empty test set".into()));
    }
    accuracy(model, testset.features(), testset.test_labels()?)
}

/// Fine-tunes the whole model. Only labeled rows' labels are ever read;
/// labeled-only training touches no unlabeled row at all.
pub fn train(model: &mut Model, dataset: &Dataset, cfg: &TrainConfig, testset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labeled = dataset.labeled_indices();
    if labeled.is_empty() {
        return Err(Error::Config("training needs at least one labeled example".into()));
    }
    let labels = dataset.labels_of(&labeled)?;
    let label_of = |i: usize| labels[labeled.binary_search(&i).expect("labeled index")];
    let unlabeled = match cfg.method {
        Method::LabeledOnly => Vec::new(),
        _ => dataset.unlabeled_indices(),
    };
    let bl = cfg.batch_labeled.min(labeled.len());
    let bu = cfg.batch_unlabeled();
    let steps_per_epoch = match cfg.method {
        Method::LabeledOnly => labeled.len().div_ceil(bl),
        _ => unlabeled.len().div_ceil(bu).max(1),
    };
    let total_steps = steps_per_epoch * cfg.epochs;

    let mut rng = seeded(cfg.seed);
    let initial_acc = evaluate(model, testset)?;
    let mut outcome = TrainOutcome {
        history: Vec::with_capacity(cfg.epochs),
        initial_acc,
        final_acc: initial_acc,
        best_acc: initial_acc,
        reported_acc: initial_acc,
    };
    let mut labeled_queue: Vec<usize> = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut unlabeled_batches = shuffled_batches(&unlabeled, bu, &mut rng)?;
        let mut sum = 0.0;
        for _ in 0..steps_per_epoch {
            if labeled_queue.len() < bl {
                let fresh: Vec<usize> = shuffled_batches(&labeled, labeled.len(), &mut rng)?.flatten().collect();
                labeled_queue.extend(fresh);
            }
            let lb: Vec<usize> = labeled_queue.drain(..bl).collect();
            let xl = dataset.features().select_rows(&lb);
            let yl: Vec<usize> = lb.iter().map(|&i| label_of(i)).collect();
            let xu = match unlabeled_batches.next() {
                Some(b) => dataset.features().select_rows(&b),
                None => Tensor::zeros(&[0, dataset.dim()]),
            };
            let grads = match cfg.method {
                Method::LabeledOnly => {
                    let empty = Tensor::zeros(&[0, dataset.dim()]);
                    fixmatch_step(model, &xl, &yl, &empty, 1.0, 0.0, &cfg.weak, &cfg.strong, &mut rng)?
                }
                Method::PseudoLabel => pseudo_label_step(model, &xl, &yl, &xu, cfg.threshold, cfg.lambda_u)?,
                Method::FixMatch => fixmatch_step(
                    model,
                    &xl,
                    &yl,
                    &xu,
                    cfg.threshold,
                    cfg.lambda_u,
                    &cfg.weak,
                    &cfg.strong,
                    &mut rng,
                )?,
            };
            if !grads.loss.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss {} at epoch {epoch}",
                    grads.loss.total
                )));
            }
            model.zero_grad();
            for (trace, g) in &grads.parts {
                model.backward(trace, g)?;
            }
            model.sgd_step(cosine_lr(cfg.lr, step, total_steps, cfg.cosine_decay), cfg.momentum);
            step += 1;
            sum += grads.loss.total;
        }
        let test_acc = evaluate(model, testset)?;
        outcome.history.push(EpochRecord {
            epoch,
            train_loss: sum / steps_per_epoch as f64,
            test_acc,
        });
        outcome.final_acc = test_acc;
    }
    if let Some(best) = outcome.history.iter().map(|r| r.test_acc).reduce(f64::max) {
        outcome.best_acc = best;
    }
    outcome.reported_acc = match cfg.report_rule() {
        Report::Final => outcome.final_acc,
        Report::Best => outcome.best_acc,
    };
    Ok(outcome)
}
