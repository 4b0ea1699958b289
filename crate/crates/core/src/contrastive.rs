//! Contrastive pre-training: NT-Xent and its debiased variant.
//!
//! A batch of `B` samples yields a `2B × f` matrix of unit-norm projections in
//! which rows `2j` and `2j + 1` are the two views of sample `j`. Every other
//! row serves as a negative for an anchor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment_batch, shuffled_batches, AugPolicy, Dataset};
use crate::error::{Error, Result};
use crate::nn::{argmax, softmax_cross_entropy, ForwardMode, HasParams, Mlp, Model};
use crate::rng::seeded;
use crate::tensor::{norm, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    /// Prior probability that a negative shares the anchor's class.
    pub tau_plus: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub cosine_decay: bool,
    pub weak: AugPolicy,
    pub seed: u64,
}

impl ContrastiveConfig {
    pub fn for_classes(classes: usize) -> Self {
        Self {
            temperature: 0.5,
            tau_plus: 1.0 / classes as f64,
            batch_size: 64,
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            cosine_decay: true,
            weak: AugPolicy::weak(0.5),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("pretrain: temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.tau_plus) {
            return Err(Error::Config("pretrain: tau_plus must be in [0, 1)".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("pretrain: batch size must be at least 2".into()));
        }
        self.weak.validate()
    }
}

/// Loss value, gradient w.r.t. the projections and per-anchor diagnostics.
#[derive(Debug, Clone)]
pub struct ContrastiveLoss {
    pub loss: f64,
    pub grad: Tensor,
    /// The clamped negative-mass estimate `g` of each anchor.
    pub g: Vec<f64>,
    /// Anchors whose estimate sat at the floor `e^{-1/t}`.
    pub clamped: usize,
}

fn check_projections(z: &Tensor) -> Result<()> {
    if z.shape().len() != 2 || !z.rows().is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "projections must be a 2B×f matrix of view pairs, got {:?}",
            z.shape()
        )));
    }
    for i in 0..z.rows() {
        let n = norm(z.row(i));
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("projection row {i} has norm {n}")));
        }
    }
    z.ensure_finite("projections")
}

fn partner(i: usize) -> usize {
    i ^ 1
}

/// Standard NT-Xent: each anchor's positive against all other rows.
pub fn nt_xent_loss(z: &Tensor, t: f64) -> Result<(f64, Tensor)> {
    check_projections(z)?;
    if !(t > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let n = z.rows();
    if n <= 2 {
        return Ok((0.0, Tensor::zeros(z.shape())));
    }
    let sims = z.matmul_t(z)?;
    let mut dsim = Tensor::zeros(&[n, n]);
    let mut total = 0.0;
    for i in 0..n {
        let p = partner(i);
        let row = sims.row(i);
        let m = (0..n)
            .filter(|&k| k != i)
            .map(|k| row[k] / t)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&k| k != i).map(|k| (row[k] / t - m).exp()).sum();
        let lse = m + denom.ln();
        total += lse - row[p] / t;
        let d = dsim.row_mut(i);
        for k in (0..n).filter(|&k| k != i) {
            d[k] = ((row[k] / t - lse).exp() - if k == p { 1.0 } else { 0.0 }) / t;
        }
    }
    let scale = 1.0 / n as f64;
    dsim.scale(scale);
    let grad = symmetric_sim_backward(&dsim, z)?;
    Ok((total * scale, grad))
}

/// Debiased contrastive loss with class prior `tau_plus`.
///
/// Per anchor, with `s⁺ = e^{sim⁺/t}` and `s̄⁻` the mean of `e^{sim/t}` over the
/// `N = 2B − 2` negatives, `g = max((s̄⁻ − τ⁺ s⁺)/(1 − τ⁺), e^{−1/t})` and
/// `ℓ = −log(s⁺ / (s⁺ + N g))`. When the estimate ties the floor the floor
/// branch (zero gradient) is taken.
pub fn debiased_loss(z: &Tensor, t: f64, tau_plus: f64) -> Result<ContrastiveLoss> {
    check_projections(z)?;
    if !(t > 0.0) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    if !(0.0..1.0).contains(&tau_plus) {
        return Err(Error::Config(format!("tau_plus {tau_plus} outside [0, 1)")));
    }
    let n = z.rows();
    let negatives = n.saturating_sub(2);
    if negatives == 0 {
        return Ok(ContrastiveLoss {
            loss: 0.0,
            grad: Tensor::zeros(z.shape()),
            g: vec![(-1.0 / t).exp(); n],
            clamped: n,
        });
    }
    let nf = negatives as f64;
    // Exponentials are shifted by e^{-1/t} so every term is at most 1.
    let shifted = |s: f64| ((s - 1.0) / t).exp();
    let floor_shifted = (-2.0 / t).exp();
    let unshift = (1.0 / t).exp();

    let sims = z.matmul_t(z)?;
    let mut dsim = Tensor::zeros(&[n, n]);
    let mut total = 0.0;
    let mut g_out = Vec::with_capacity(n);
    let mut clamped = 0;
    for i in 0..n {
        let p = partner(i);
        let row = sims.row(i);
        let pos = shifted(row[p]);
        let neg_mean = (0..n)
            .filter(|&k| k != i && k != p)
            .map(|k| shifted(row[k]))
            .sum::<f64>()
            / nf;
        let estimate = (neg_mean - tau_plus * pos) / (1.0 - tau_plus);
        let active = estimate > floor_shifted;
        let g = if active { estimate } else { floor_shifted };
        if !active {
            clamped += 1;
        }
        g_out.push(g * unshift);
        let denom = pos + nf * g;
        total += denom.ln() - (row[p] - 1.0) / t;

        let d = dsim.row_mut(i);
        let dg_dpos = if active {
            -tau_plus * pos / (t * (1.0 - tau_plus))
        } else {
            0.0
        };
        d[p] = (pos / t + nf * dg_dpos) / denom - 1.0 / t;
        if active {
            for k in (0..n).filter(|&k| k != i && k != p) {
                d[k] = shifted(row[k]) / (t * (1.0 - tau_plus) * denom);
            }
        }
    }
    let scale = 1.0 / n as f64;
    dsim.scale(scale);
    let grad = symmetric_sim_backward(&dsim, z)?;
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("debiased loss is {loss}")));
    }
    Ok(ContrastiveLoss {
        loss,
        grad,
        g: g_out,
        clamped,
    })
}

/// Backprop through `S = Z Zᵀ`: `dZ = (dS + dSᵀ) Z`.
fn symmetric_sim_backward(dsim: &Tensor, z: &Tensor) -> Result<Tensor> {
    let sym = {
        let mut s = dsim.clone();
        s.axpy(1.0, &dsim.transpose())?;
        s
    };
    sym.matmul(z)
}

/// Stacks two augmented views per row: rows `2j`, `2j+1` come from row `j`.
pub fn paired_views<R: Rng + ?Sized>(x: &Tensor, policy: &AugPolicy, rng: &mut R) -> Tensor {
    let mut rows = Vec::with_capacity(2 * x.rows());
    for j in 0..x.rows() {
        let one = Tensor::matrix(1, x.cols(), x.row(j).to_vec()).expect("row");
        rows.push(augment_batch(&one, policy, rng).into_data());
        rows.push(augment_batch(&one, policy, rng).into_data());
    }
    Tensor::from_rows(&rows).expect("equal widths")
}

pub(crate) fn cosine_lr(base: f64, step: usize, total: usize, enabled: bool) -> f64 {
    if !enabled || total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Trains encoder and projection head on unlabeled features; returns the
/// mean loss of each epoch. Labels are never read.
pub fn pretrain(model: &mut Model, train: &Dataset, cfg: &ContrastiveConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let all: Vec<usize> = (0..train.len()).collect();
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut step = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let mut count = 0;
        for batch in shuffled_batches(&all, cfg.batch_size, &mut rng)? {
            let x = train.features().select_rows(&batch);
            let views = paired_views(&x, &cfg.weak, &mut rng);
            let (z, trace) = model
                .forward_traced(&views, ForwardMode::Project)
                .map_err(|e| at_epoch(e, epoch))?;
            let out = debiased_loss(&z, cfg.temperature, cfg.tau_plus).map_err(|e| at_epoch(e, epoch))?;
            model.zero_grad();
            model.backward(&trace, &out.grad)?;
            model.sgd_step(cosine_lr(cfg.lr, step, total_steps, cfg.cosine_decay), cfg.momentum);
            step += 1;
            sum += out.loss;
            count += 1;
        }
        let mean = if count > 0 { sum / count as f64 } else { 0.0 };
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("pretraining loss {mean} at epoch {epoch}")));
        }
        history.push(mean);
    }
    Ok(history)
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric(msg) | Error::Degenerate(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

/// Test accuracy of a linear classifier trained on frozen encoder features
/// of a fully labeled training pool.
pub fn linear_probe(model: &Model, train: &Dataset, test: &Dataset, epochs: usize, lr: f64, seed: u64) -> Result<f64> {
    let all: Vec<usize> = (0..train.len()).collect();
    let labels = train.labels_of(&all)?;
    let feats = model.forward(train.features(), ForwardMode::Embed)?;
    let test_feats = model.forward(test.features(), ForwardMode::Embed)?;
    let mut rng = seeded(seed);
    let dims = model.dims();
    let mut head = Mlp::new("probe", &[dims.feature, dims.classes], &mut rng);
    for _ in 0..epochs {
        for batch in shuffled_batches(&all, 64, &mut rng)? {
            let x = feats.select_rows(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, trace) = head.forward_traced(&x)?;
            let (_, grad) = softmax_cross_entropy(&logits, &y)?;
            head.zero_grad();
            head.backward(&trace, &grad)?;
            head.params_set_mut().sgd_step(lr, 0.9);
        }
    }
    let logits = head.forward(&test_feats)?;
    let truth = test.test_labels()?;
    let correct = (0..test.len()).filter(|&i| argmax(logits.row(i)) == truth[i]).count();
    Ok(correct as f64 / test.len() as f64)
}
