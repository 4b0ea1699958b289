#![allow(dead_code)]

use fewlabel::contrastive::{debiased_loss, nt_xent_loss, paired_views};
use fewlabel::data::{augment_batch, AugPolicy};
use fewlabel::harness::ExperimentConfig;
use fewlabel::nn::{grad_check, softmax_cross_entropy, ForwardMode, Model, ModelDims};
use fewlabel::rng::{seeded, StageRng};
use fewlabel::select::{coreset_select, coverage_radius};
use fewlabel::semisup::consistency_loss;
use fewlabel::{Result, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

pub const GRAD_TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;
const COORDS: usize = 24;

pub fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut StageRng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn small_model(seed: u64) -> Model {
    let dims = ModelDims {
        input: 6,
        hidden: vec![12, 10],
        feature: 5,
        classes: 3,
    };
    Model::new(dims, &mut seeded(seed))
}

/// Worst grad-check error of `loss ∘ model(mode)` on `x`.
fn check_model<F>(model: &mut Model, x: &Tensor, mode: ForwardMode, loss: F, rng: &mut StageRng) -> f64
where
    F: Fn(&Tensor) -> Result<(f64, Tensor)>,
{
    grad_check(
        model,
        |m: &mut Model| {
            let (out, trace) = m.forward_traced(x, mode)?;
            let (l, g) = loss(&out)?;
            m.backward(&trace, &g)?;
            Ok(l)
        },
        EPS,
        COORDS,
        rng,
    )
    .unwrap()
}

/// Draws inputs until every projection row is non-degenerate.
fn projectable(m: &Model, rows: usize, rng: &mut StageRng) -> Tensor {
    loop {
        let x = gaussian(rows, 6, 1.0, rng);
        if m.forward(&x, ForwardMode::Project).is_ok() {
            return x;
        }
    }
}

fn linear_loss(weights: Tensor) -> impl Fn(&Tensor) -> Result<(f64, Tensor)> {
    move |out: &Tensor| {
        let l = out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok((l, weights.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct GradResult {
    pub name: &'static str,
    pub worst: f64,
    pub trials: usize,
    /// Free-form note, e.g. how often a clamp or mask was exercised.
    pub note: String,
}

impl GradResult {
    pub fn ok(&self) -> bool {
        self.worst < GRAD_TOL
    }
}

fn run<F>(name: &'static str, trials: usize, mut trial: F) -> GradResult
where
    F: FnMut(u64, &mut StageRng) -> (f64, usize),
{
    let mut worst = 0.0f64;
    let mut hits = 0;
    for t in 0..trials {
        let mut rng = seeded(0xc0ffee ^ (t as u64).wrapping_mul(0x9e37_79b9));
        let (err, hit) = trial(t as u64, &mut rng);
        worst = worst.max(err);
        hits += hit;
    }
    GradResult {
        name,
        worst,
        trials,
        note: format!("{hits}"),
    }
}

/// Every gradient path the trainers use, `trials` random instances each.
pub fn gradient_suite(trials: usize) -> Vec<GradResult> {
    let mut out = Vec::new();

    out.push(run("encoder and head layers", trials, |t, rng| {
        let mut m = small_model(t);
        let x = gaussian(5, 6, 1.0, rng);
        let w = gaussian(5, 3, 1.0, rng);
        let a = check_model(&mut m, &x, ForwardMode::Classify, linear_loss(w), rng);
        let w = gaussian(5, 5, 1.0, rng);
        let b = check_model(&mut m, &x, ForwardMode::Embed, linear_loss(w), rng);
        (a.max(b), 0)
    }));

    out.push(run("l2-normalized projection", trials, |t, rng| {
        let mut m = small_model(t);
        let x = projectable(&m, 4, rng);
        let w = gaussian(4, 5, 1.0, rng);
        (check_model(&mut m, &x, ForwardMode::Project, linear_loss(w), rng), 0)
    }));

    out.push(run("softmax cross-entropy", trials, |t, rng| {
        let mut m = small_model(t);
        let x = gaussian(6, 6, 1.5, rng);
        let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
        (
            check_model(&mut m, &x, ForwardMode::Classify, |o| softmax_cross_entropy(o, &y), rng),
            0,
        )
    }));

    out.push(run("nt-xent", trials, |t, rng| {
        let mut m = small_model(t);
        let x = gaussian(4, 6, 1.0, rng);
        let views = paired_views(&x, &AugPolicy::weak(0.3), rng);
        let views = if m.forward(&views, ForwardMode::Project).is_ok() {
            views
        } else {
            projectable(&m, 8, rng)
        };
        (
            check_model(&mut m, &views, ForwardMode::Project, |z| nt_xent_loss(z, 0.5), rng),
            0,
        )
    }));

    // Instances are redrawn until every anchor sits above the floor.
    out.push(run("debiased, clamp inactive", trials, |t, rng| {
        let mut m = small_model(t);
        let views = loop {
            let x = gaussian(4, 6, 1.0, rng);
            let views = paired_views(&x, &AugPolicy::weak(0.3), rng);
            if let Ok(z) = m.forward(&views, ForwardMode::Project) {
                if debiased_loss(&z, 0.5, 0.05).unwrap().clamped == 0 {
                    break views;
                }
            }
        };
        let err = check_model(
            &mut m,
            &views,
            ForwardMode::Project,
            |z| debiased_loss(z, 0.5, 0.05).map(|o| (o.loss, o.grad)),
            rng,
        );
        (err, 0)
    }));

    // A large prior drives part of the anchors to the floor.
    out.push(run("debiased, clamp active", trials, |t, rng| {
        let mut m = small_model(t);
        let x = gaussian(5, 6, 1.0, rng);
        let views = paired_views(&x, &AugPolicy::weak(0.2), rng);
        let views = if m.forward(&views, ForwardMode::Project).is_ok() {
            views
        } else {
            projectable(&m, 10, rng)
        };
        let z = m.forward(&views, ForwardMode::Project).unwrap();
        let c = debiased_loss(&z, 0.5, 0.6).unwrap().clamped;
        let err = check_model(
            &mut m,
            &views,
            ForwardMode::Project,
            |z| debiased_loss(z, 0.5, 0.6).map(|o| (o.loss, o.grad)),
            rng,
        );
        (err, usize::from(c > 0 && c < z.rows()))
    }));

    out.push(run("pseudo-label unlabeled loss", trials, |t, rng| {
        let mut m = small_model(t);
        let x = gaussian(8, 6, 4.0, rng);
        let logits = m.forward(&x, ForwardMode::Classify).unwrap();
        let passing = consistency_loss(&logits, &logits, 0.6).unwrap().passing;
        let err = check_model(
            &mut m,
            &x,
            ForwardMode::Classify,
            |o| consistency_loss(o, o, 0.6).map(|u| (u.loss, u.grad)),
            rng,
        );
        (err, passing.iter().filter(|&&p| p).count())
    }));

    out.push(run("fixmatch unlabeled loss", trials, |t, rng| {
        let mut m = small_model(t);
        let x = gaussian(8, 6, 4.0, rng);
        let weak = AugPolicy::weak(0.1);
        let strong = AugPolicy {
            jitter: 0.2,
            mask: 0.25,
            scale: 0.2,
        };
        let xw = augment_batch(&x, &weak, rng);
        let xs = augment_batch(&x, &strong, rng);
        let mut passing = 0;
        let err = grad_check(
            &mut m,
            |m: &mut Model| {
                // Targets come from an untraced pass: no gradient through them.
                let targets = m.forward(&xw, ForwardMode::Classify)?;
                let (logits, trace) = m.forward_traced(&xs, ForwardMode::Classify)?;
                let u = consistency_loss(&targets, &logits, 0.6)?;
                assert!(u.grad_target.data().iter().all(|&g| g == 0.0));
                passing = u.passing.iter().filter(|&&p| p).count();
                m.backward(&trace, &u.grad)?;
                Ok(u.loss)
            },
            EPS,
            COORDS,
            rng,
        )
        .unwrap();
        (err, passing)
    }));

    out
}

/// Radius of the best `b`-center solution containing `fixed`, by enumeration.
pub fn optimal_radius(x: &Tensor, fixed: &[usize], b: usize) -> f64 {
    let n = x.rows();
    let free: Vec<usize> = (0..n).filter(|i| !fixed.contains(i)).collect();
    let mut best = f64::INFINITY;
    let mut chosen = Vec::new();
    fn recurse(
        x: &Tensor,
        fixed: &[usize],
        free: &[usize],
        start: usize,
        b: usize,
        chosen: &mut Vec<usize>,
        best: &mut f64,
    ) {
        if chosen.len() == b {
            let centers: Vec<usize> = fixed.iter().chain(chosen.iter()).copied().collect();
            *best = best.min(coverage_radius(x, &centers).unwrap());
            return;
        }
        for k in start..free.len() {
            if free.len() - k < b - chosen.len() {
                break;
            }
            chosen.push(free[k]);
            recurse(x, fixed, free, k + 1, b, chosen, best);
            chosen.pop();
        }
    }
    recurse(x, fixed, &free, 0, b, &mut chosen, &mut best);
    best
}

#[derive(Debug, Clone, Copy)]
pub struct KCenterTrial {
    pub greedy: f64,
    pub optimal: f64,
}

/// Random planar instances with `n ≤ 12`; half start from one labeled point.
pub fn kcenter_trials(count: usize) -> Vec<KCenterTrial> {
    let mut rng = seeded(0x6b63);
    (0..count)
        .map(|t| {
            let n = rng.random_range(3..=12);
            let x = gaussian(n, 2, 1.0, &mut rng);
            let fixed: Vec<usize> = if t % 2 == 0 {
                Vec::new()
            } else {
                vec![rng.random_range(0..n)]
            };
            let b = rng.random_range(1..n - fixed.len());
            let picks = coreset_select(&x, &fixed, b).unwrap().indices;
            let centers: Vec<usize> = fixed.iter().chain(picks.iter()).copied().collect();
            let greedy = coverage_radius(&x, &centers).unwrap();
            let optimal = optimal_radius(&x, &fixed, b);
            KCenterTrial { greedy, optimal }
        })
        .collect()
}

/// Leading eigenvector of a symmetric 2×2 matrix `[[a, b], [b, c]]`.
pub fn leading_eigvec_2x2(a: f64, b: f64, c: f64) -> [f64; 2] {
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    [theta.cos(), theta.sin()]
}

/// Sample covariance entries `(a, b, c)` with the `n − 1` normalization.
pub fn covariance_2d(x: &Tensor) -> (f64, f64, f64) {
    let n = x.rows() as f64;
    let mx = (0..x.rows()).map(|i| x.get(i, 0)).sum::<f64>() / n;
    let my = (0..x.rows()).map(|i| x.get(i, 1)).sum::<f64>() / n;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for i in 0..x.rows() {
        let (u, v) = (x.get(i, 0) - mx, x.get(i, 1) - my);
        a += u * u;
        b += u * v;
        c += v * v;
    }
    (a / (n - 1.0), b / (n - 1.0), c / (n - 1.0))
}

/// Anisotropic rotated Gaussian cloud in the plane.
pub fn planar_cloud(rng: &mut StageRng) -> Tensor {
    let n = rng.random_range(20..80);
    let (s1, s2) = (rng.random_range(1.0..3.0), rng.random_range(0.1..0.8));
    let phi: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (cs, sn) = (phi.cos(), phi.sin());
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let u = s1 * rng.sample::<f64, _>(StandardNormal);
        let v = s2 * rng.sample::<f64, _>(StandardNormal);
        rows.push(vec![cs * u - sn * v + 0.5, sn * u + cs * v - 1.0]);
    }
    Tensor::from_rows(&rows).unwrap()
}

/// Angle between the lines spanned by two unit vectors.
pub fn line_angle(u: &[f64], v: &[f64]) -> f64 {
    let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    d.abs().min(1.0).acos()
}

/// Largest deviation of `C Cᵀ` from the identity.
pub fn gram_error(components: &Tensor) -> f64 {
    let g = components.matmul_t(components).unwrap();
    let mut worst = 0.0f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g.get(i, j) - target).abs());
        }
    }
    worst
}

/// A configuration that runs a full grid in seconds.
pub fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("dataset.classes", "4"),
        ("dataset.n_train", "160"),
        ("dataset.n_test", "80"),
        ("model.hidden", "16"),
        ("model.feature", "8"),
        ("select.pca_dim", "4"),
        ("pretrain.epochs", "2"),
        ("pretrain.batch_size", "32"),
        ("select.vaal.epochs", "2"),
        ("train.epochs", "2"),
        ("grid.budgets", "8"),
        ("grid.seeds", "0,1"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}
