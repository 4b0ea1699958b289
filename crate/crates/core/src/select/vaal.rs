//! Variational adversarial selection: a VAE learns latents that a
//! discriminator cannot tell apart between labeled and unlabeled pool items;
//! the discriminator's probability-of-labeled then ranks the pool.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SelectionResult;
use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, mse, sigmoid, HasParams, Mlp};
use crate::rng::{seeded, StageRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaalConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_adv: f64,
    pub beta_kl: f64,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for VaalConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden: 32,
            epochs: 20,
            batch_size: 64,
            lambda_adv: 1.0,
            beta_kl: 1.0,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// How "lowest discriminator certainty" is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certainty {
    /// Lowest predicted probability of being labeled.
    LowestProbability,
    /// Probability closest to one half.
    ClosestToHalf,
}

#[derive(Debug, Clone)]
pub struct VaalFit {
    /// Probability of being labeled, per pool item.
    pub scores: Vec<f64>,
    /// Mean KL divergence of every VAE step.
    pub kl_history: Vec<f64>,
    pub vae_loss: Vec<f64>,
    pub disc_loss: Vec<f64>,
}

struct Vae {
    encoder: Mlp,
    decoder: Mlp,
    latent: usize,
}

struct VaeForward {
    mu: Tensor,
    logvar: Tensor,
    eps: Tensor,
    recon: Tensor,
    enc_trace: crate::nn::MlpTrace,
    dec_trace: crate::nn::MlpTrace,
}

impl Vae {
    fn split(&self, h: &Tensor) -> (Tensor, Tensor) {
        let n = h.rows();
        let l = self.latent;
        let mut mu = Vec::with_capacity(n * l);
        let mut lv = Vec::with_capacity(n * l);
        for i in 0..n {
            let r = h.row(i);
            mu.extend_from_slice(&r[..l]);
            lv.extend_from_slice(&r[l..]);
        }
        (
            Tensor::matrix(n, l, mu).expect("shape"),
            Tensor::matrix(n, l, lv).expect("shape"),
        )
    }

    fn latent_mean(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.split(&self.encoder.forward(x)?).0)
    }

    fn forward(&self, x: &Tensor, rng: &mut StageRng) -> Result<VaeForward> {
        let (h, enc_trace) = self.encoder.forward_traced(x)?;
        let (mu, logvar) = self.split(&h);
        let n = x.rows();
        let eps = Tensor::matrix(
            n,
            self.latent,
            (0..n * self.latent).map(|_| rng.sample(StandardNormal)).collect(),
        )?;
        let mut z = mu.clone();
        for ((zv, &lv), &e) in z.data_mut().iter_mut().zip(logvar.data()).zip(eps.data()) {
            *zv += (0.5 * lv).exp() * e;
        }
        let (recon, dec_trace) = self.decoder.forward_traced(&z)?;
        Ok(VaeForward {
            mu,
            logvar,
            eps,
            recon,
            enc_trace,
            dec_trace,
        })
    }
}

/// Mean over rows of `KL(N(μ, σ²) ‖ N(0, I))` and its gradients.
fn gaussian_kl(mu: &Tensor, logvar: &Tensor) -> (f64, Tensor, Tensor) {
    let n = mu.rows().max(1) as f64;
    let mut total = 0.0;
    let mut dmu = mu.clone();
    let mut dlv = logvar.clone();
    for ((m, lv), (gm, gl)) in mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(dmu.data_mut().iter_mut().zip(dlv.data_mut().iter_mut()))
    {
        total += 0.5 * (m * m + lv.exp() - 1.0 - lv);
        *gm = m / n;
        *gl = 0.5 * (lv.exp() - 1.0) / n;
    }
    (total / n, dmu, dlv)
}

fn standardize(x: &Tensor) -> Tensor {
    let (n, d) = (x.rows(), x.cols());
    let mean: Vec<f64> = x.sum_rows().iter().map(|s| s / n as f64).collect();
    let mut sd = vec![0.0; d];
    for i in 0..n {
        for (j, v) in x.row(i).iter().enumerate() {
            sd[j] += (v - mean[j]).powi(2);
        }
    }
    sd.iter_mut().for_each(|s| {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    });
    let mut out = x.clone();
    for i in 0..n {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = (*v - mean[j]) / sd[j];
        }
    }
    out
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::matrix(a.rows() + b.rows(), a.cols(), data).expect("same width")
}

/// Trains the VAE and discriminator adversarially; returns per-item scores.
pub fn vaal_fit(features: &Tensor, labeled_mask: &[bool], cfg: &VaalConfig) -> Result<VaalFit> {
    let n = features.rows();
    if labeled_mask.len() != n {
        return Err(Error::Dimension(format!(
            "{} mask entries for {n} rows",
            labeled_mask.len()
        )));
    }
    let labeled: Vec<usize> = (0..n).filter(|&i| labeled_mask[i]).collect();
    let unlabeled: Vec<usize> = (0..n).filter(|&i| !labeled_mask[i]).collect();
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::Domain("VAAL needs both labeled and unlabeled items".into()));
    }
    if cfg.batch_size == 0 || cfg.latent_dim == 0 {
        return Err(Error::Config("VAAL batch size and latent dim must be positive".into()));
    }
    let x = standardize(features);
    let k = x.cols();
    let mut rng = seeded(cfg.seed);
    let mut vae = Vae {
        encoder: Mlp::new("vae.encoder", &[k, cfg.hidden, 2 * cfg.latent_dim], &mut rng),
        decoder: Mlp::new("vae.decoder", &[cfg.latent_dim, cfg.hidden, k], &mut rng),
        latent: cfg.latent_dim,
    };
    let mut disc = Mlp::new("vaal.discriminator", &[cfg.latent_dim, cfg.hidden, 1], &mut rng);

    let mut fit = VaalFit {
        scores: Vec::new(),
        kl_history: Vec::new(),
        vae_loss: Vec::new(),
        disc_loss: Vec::new(),
    };
    let lab_batch = cfg.batch_size.min(labeled.len());
    let mut lab_order: Vec<usize> = Vec::new();

    for epoch in 0..cfg.epochs {
        let mut unl = unlabeled.clone();
        unl.shuffle(&mut rng);
        let (mut vae_sum, mut disc_sum, mut steps) = (0.0, 0.0, 0usize);
        for ubatch in unl.chunks(cfg.batch_size) {
            if lab_order.len() < lab_batch {
                let mut fresh = labeled.clone();
                fresh.shuffle(&mut rng);
                lab_order.extend(fresh);
            }
            let lbatch: Vec<usize> = lab_order.drain(..lab_batch).collect();
            let xl = x.select_rows(&lbatch);
            let xu = x.select_rows(ubatch);

            // VAE step: reconstruction + KL on both sets, and fool the
            // discriminator into calling unlabeled latents labeled.
            let both = concat_rows(&xl, &xu);
            let f = vae.forward(&both, &mut rng)?;
            let (rec, drec) = mse(&f.recon, &both)?;
            let (kl, dmu_kl, dlv_kl) = gaussian_kl(&f.mu, &f.logvar);
            let mu_u = f.mu.select_rows(&(xl.rows()..both.rows()).collect::<Vec<_>>());
            let (d_logits, d_trace) = disc.forward_traced(&mu_u)?;
            let (adv, dadv) = bce_with_logits(d_logits.data(), &vec![1.0; mu_u.rows()]);
            let dadv = Tensor::matrix(mu_u.rows(), 1, dadv)?;
            let mut dmu_u = disc.backward(&d_trace, &dadv)?;
            dmu_u.scale(cfg.lambda_adv);
            let loss = rec + cfg.beta_kl * kl + cfg.lambda_adv * adv;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("VAE loss {loss} at epoch {epoch}")));
            }
            fit.kl_history.push(kl);

            vae.encoder.zero_grad();
            vae.decoder.zero_grad();
            let dz = vae.decoder.backward(&f.dec_trace, &drec)?;
            let l = cfg.latent_dim;
            let mut dh = Tensor::zeros(&[both.rows(), 2 * l]);
            for i in 0..both.rows() {
                let row = dh.row_mut(i);
                for j in 0..l {
                    let lv = f.logvar.get(i, j);
                    let e = f.eps.get(i, j);
                    let g = dz.get(i, j);
                    let mut gm = g + cfg.beta_kl * dmu_kl.get(i, j);
                    if i >= xl.rows() {
                        gm += dmu_u.get(i - xl.rows(), j);
                    }
                    row[j] = gm;
                    row[l + j] = g * e * 0.5 * (0.5 * lv).exp() + cfg.beta_kl * dlv_kl.get(i, j);
                }
            }
            vae.encoder.backward(&f.enc_trace, &dh)?;
            vae.encoder.params_set_mut().sgd_step(cfg.lr, cfg.momentum);
            vae.decoder.params_set_mut().sgd_step(cfg.lr, cfg.momentum);

            // Discriminator step on detached latent means.
            let mu = concat_rows(&vae.latent_mean(&xl)?, &vae.latent_mean(&xu)?);
            let mut targets = vec![1.0; xl.rows()];
            targets.extend(std::iter::repeat_n(0.0, xu.rows()));
            disc.zero_grad();
            let (logits, trace) = disc.forward_traced(&mu)?;
            let (dloss, dgrad) = bce_with_logits(logits.data(), &targets);
            if !dloss.is_finite() {
                return Err(Error::Numeric(format!("discriminator loss {dloss} at epoch {epoch}")));
            }
            disc.backward(&trace, &Tensor::matrix(mu.rows(), 1, dgrad)?)?;
            disc.params_set_mut().sgd_step(cfg.lr, cfg.momentum);

            vae_sum += loss;
            disc_sum += dloss;
            steps += 1;
        }
        fit.vae_loss.push(vae_sum / steps.max(1) as f64);
        fit.disc_loss.push(disc_sum / steps.max(1) as f64);
    }

    let logits = disc.forward(&vae.latent_mean(&x)?)?;
    fit.scores = logits.data().iter().map(|&v| sigmoid(v)).collect();
    Ok(fit)
}

/// Picks the `count` pool items the discriminator considers least labeled-like.
pub fn vaal_select(scores: &[f64], pool: &[usize], count: usize, certainty: Certainty) -> Result<SelectionResult> {
    if count > pool.len() {
        return Err(Error::Budget(format!(
            "cannot pick {count} from a pool of {}",
            pool.len()
        )));
    }
    if let Some(&bad) = pool.iter().find(|&&i| i >= scores.len()) {
        return Err(Error::Index(format!("pool index {bad} with {} scores", scores.len())));
    }
    let key = |i: usize| match certainty {
        Certainty::LowestProbability => scores[i],
        Certainty::ClosestToHalf => (scores[i] - 0.5).abs(),
    };
    let mut ranked = pool.to_vec();
    ranked.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    ranked.truncate(count);
    Ok(SelectionResult {
        indices: ranked,
        deltas: Vec::new(),
        scores: scores.to_vec(),
    })
}
