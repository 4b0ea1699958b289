//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any hard criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use common::{
    covariance_2d, gaussian, gradient_suite, gram_error, kcenter_trials, leading_eigvec_2x2, line_angle, planar_cloud,
};
use fewlabel::contrastive::{debiased_loss, nt_xent_loss};
use fewlabel::data::generate;
use fewlabel::harness::{
    build_encoder, mean_std, run_from_encoder, run_grid, Cell, Encoder, ExperimentConfig, Pretrain, RunRecord, Selector,
};
use fewlabel::rng::seeded;
use fewlabel::select::{coreset_select, Pca};
use fewlabel::semisup::Method;
use fewlabel::tensor::normalize_rows;
use fewlabel::Tensor;

type CellKind = (Pretrain, Selector, Method);

const SEEDS: u64 = 5;
const BUDGET: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let results = gradient_suite(100);
    let secs = start.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.worst).fold(0.0, f64::max);
    let failing: Vec<&str> = results.iter().filter(|r| !r.ok()).map(|r| r.name).collect();
    outcome(
        failing.is_empty() && secs < 30.0,
        format!(
            "{} paths x 100 trials, worst {worst:.2e}, {secs:.1}s, failing {failing:?}",
            results.len()
        ),
    )
}

fn debiased_reduction() -> Outcome {
    let mut rng = seeded(0xdc1);
    let mut worst = 0.0f64;
    let mut floor_ok = true;
    for trial in 0..100 {
        let rows = 2 * (2 + trial % 7);
        let (z, _) = normalize_rows(&gaussian(rows, 6, 1.0, &mut rng)).unwrap();
        let t = [0.1, 0.5, 1.0][trial % 3];
        let (nt, _) = nt_xent_loss(&z, t).unwrap();
        worst = worst.max((nt - debiased_loss(&z, t, 0.0).unwrap().loss).abs());
        let floor = (-1.0 / t).exp();
        for tau in [0.1, 0.5, 0.9] {
            floor_ok &= debiased_loss(&z, t, tau)
                .unwrap()
                .g
                .iter()
                .all(|&g| g >= floor * (1.0 - 1e-12));
        }
    }
    outcome(
        worst < 1e-9 && floor_ok,
        format!("max |diff| {worst:.1e}, floor respected {floor_ok}"),
    )
}

fn kcenter_oracle() -> Outcome {
    let trials = kcenter_trials(100);
    let held = trials.iter().filter(|t| t.greedy <= 2.0 * t.optimal + 1e-12).count();
    let worst = trials.iter().map(|t| t.greedy / t.optimal).fold(0.0, f64::max);
    let x = Tensor::matrix(4, 1, vec![0.0, 1.0, 5.0, 9.0]).unwrap();
    let picks = coreset_select(&x, &[0], 2).unwrap().indices;
    let hand = picks == vec![3, 2];
    outcome(
        held == 100 && hand,
        format!(
            "{held}/100 within 2x (worst ratio {worst:.3}), line example picks {:?}",
            picks.iter().map(|&i| x.get(i, 0)).collect::<Vec<_>>()
        ),
    )
}

fn pca_oracle() -> Outcome {
    let mut rng = seeded(0x9ca);
    let mut worst_angle = 0.0f64;
    for _ in 0..50 {
        let x = planar_cloud(&mut rng);
        let (a, b, c) = covariance_2d(&x);
        let e = leading_eigvec_2x2(a, b, c);
        let pca = Pca::fit(&x, 2).unwrap();
        worst_angle = worst_angle
            .max(line_angle(pca.components.row(0), &e))
            .max(line_angle(pca.components.row(1), &[-e[1], e[0]]));
    }
    let cfg = ExperimentConfig::default();
    let d = cfg.feature;
    let x = gaussian(300, d, 1.0, &mut rng);
    let worst_gram = (1..=d)
        .map(|k| gram_error(&Pca::fit(&x, k).unwrap().components))
        .fold(0.0, f64::max);
    outcome(
        worst_angle < 1e-6 && worst_gram < 1e-6,
        format!("worst angle {worst_angle:.1e} over 50 instances, worst Gram error {worst_gram:.1e} for k = 1..{d}"),
    )
}

/// Reported accuracies of the trend cells, keyed by (pretrain, selector, trainer).
struct TrendRuns {
    acc: BTreeMap<CellKind, Vec<f64>>,
    records: Vec<RunRecord>,
}

fn trend_runs(cfg: &ExperimentConfig) -> TrendRuns {
    let cells = [
        (Pretrain::None, Selector::Random, Method::PseudoLabel),
        (Pretrain::Dcl, Selector::Random, Method::PseudoLabel),
        (Pretrain::None, Selector::Random, Method::FixMatch),
        (Pretrain::Dcl, Selector::Random, Method::FixMatch),
        (Pretrain::Dcl, Selector::Coreset, Method::FixMatch),
        (Pretrain::None, Selector::Random, Method::LabeledOnly),
        (Pretrain::None, Selector::Coreset, Method::LabeledOnly),
    ];
    let (pool, test) = generate(&cfg.dataset).unwrap();
    let mut acc: BTreeMap<_, Vec<f64>> = BTreeMap::new();
    let mut records = Vec::new();
    for seed in 0..SEEDS {
        let mut encoders: BTreeMap<Pretrain, Encoder> = BTreeMap::new();
        for &(pretrain, selector, trainer) in &cells {
            let enc = encoders
                .entry(pretrain)
                .or_insert_with(|| build_encoder(cfg, pretrain, seed, &pool).unwrap());
            let cell = Cell {
                pretrain,
                selector,
                trainer,
                budget: BUDGET,
                seed,
            };
            let record = run_from_encoder(cfg, &cell, enc, &pool, &test).unwrap();
            acc.entry((pretrain, selector, trainer))
                .or_default()
                .push(record.reported_acc.unwrap());
            records.push(record);
        }
    }
    TrendRuns { acc, records }
}

fn fmt_accs(v: &[f64]) -> String {
    let (m, s) = mean_std(v).unwrap();
    format!("{m:.4}±{s:.4}")
}

fn trend_a(runs: &TrendRuns) -> Outcome {
    let none = &runs.acc[&(Pretrain::None, Selector::Random, Method::PseudoLabel)];
    let dcl = &runs.acc[&(Pretrain::Dcl, Selector::Random, Method::PseudoLabel)];
    let gap = mean_std(dcl).unwrap().0 - mean_std(none).unwrap().0;
    outcome(
        gap >= 0.10,
        format!(
            "pseudo_label at {BUDGET} labels: dcl {} vs none {}, gain {:.1} points",
            fmt_accs(dcl),
            fmt_accs(none),
            100.0 * gap
        ),
    )
}

fn trend_b(runs: &TrendRuns) -> Outcome {
    let none = &runs.acc[&(Pretrain::None, Selector::Random, Method::FixMatch)];
    let dcl = &runs.acc[&(Pretrain::Dcl, Selector::Random, Method::FixMatch)];
    let (sd, sn) = (mean_std(dcl).unwrap().1, mean_std(none).unwrap().1);
    outcome(
        sd <= sn,
        format!("fixmatch at {BUDGET} labels: std dcl {sd:.4} vs none {sn:.4}"),
    )
}

fn trend_c(runs: &TrendRuns) -> Outcome {
    let random = &runs.acc[&(Pretrain::Dcl, Selector::Random, Method::FixMatch)];
    let coreset = &runs.acc[&(Pretrain::Dcl, Selector::Coreset, Method::FixMatch)];
    let gap = mean_std(coreset).unwrap().0 - mean_std(random).unwrap().0;
    let lo_r = &runs.acc[&(Pretrain::None, Selector::Random, Method::LabeledOnly)];
    let lo_c = &runs.acc[&(Pretrain::None, Selector::Coreset, Method::LabeledOnly)];
    let wins = lo_c.iter().zip(lo_r).filter(|(c, r)| c >= r).count();
    outcome(
        gap.abs() <= 0.02,
        format!(
            "dcl+fixmatch coreset {} vs random {}, |gap| {:.2} points; none+labeled_only coreset >= random in {wins}/{SEEDS} seeds ({}, directional only)",
            fmt_accs(coreset),
            fmt_accs(random),
            100.0 * gap.abs(),
            if wins >= 3 { "holds" } else { "does not hold" }
        ),
    )
}

/// Default grid axes with short schedules so two full passes stay cheap.
fn reduced_grid_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("pretrain.epochs", "3"),
        ("train.epochs", "2"),
        ("select.vaal.epochs", "2"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn grid_structure(records: &mut Vec<RunRecord>) -> Outcome {
    let cfg = reduced_grid_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_grid(&cfg, a.path()).unwrap();
    let rb = run_grid(&cfg, b.path()).unwrap();
    let same = ["results.csv", "summary.csv"]
        .iter()
        .all(|f| fs::read(a.path().join(f)).unwrap() == fs::read(b.path().join(f)).unwrap());

    let mut blocks: BTreeMap<(usize, u64), BTreeSet<CellKind>> = BTreeMap::new();
    let mut supervised = 0;
    for r in &ra.records {
        if r.cell.selector == Selector::All {
            supervised += 1;
        } else {
            blocks.entry((r.cell.budget, r.cell.seed)).or_default().insert((
                r.cell.pretrain,
                r.cell.selector,
                r.cell.trainer,
            ));
        }
    }
    let expected: BTreeSet<_> = cfg
        .grid
        .blocks
        .iter()
        .flat_map(|&(p, t)| cfg.grid.selectors.iter().map(move |&s| (p, s, t)))
        .collect();
    let tables = cfg.grid.budgets.len() * cfg.grid.seeds.len();
    let shape_ok = expected.len() == 12
        && blocks.len() == tables
        && blocks.values().all(|set| *set == expected)
        && supervised == 2 * cfg.grid.seeds.len();
    let ok_status = ra.records.iter().all(|r| r.error.is_none());
    records.extend(ra.records);
    records.extend(rb.records);
    outcome(
        same && shape_ok && ok_status,
        format!(
            "{} rows: {tables} tables of {} cells plus {supervised} supervised; byte-identical {same}; all ok {ok_status}",
            records.len() / 2,
            expected.len()
        ),
    )
}

fn budget_audit(records: &[RunRecord]) -> Outcome {
    let bad_budget = records.iter().filter(|r| r.labeled_count != r.cell.budget).count();
    let violations: usize = records.iter().map(|r| r.label_violations).sum();
    let lo = records.iter().filter(|r| r.cell.trainer == Method::LabeledOnly);
    let lo_over = lo
        .clone()
        .filter(|r| r.label_reads > r.cell.budget || r.label_violations > 0)
        .count();
    outcome(
        bad_budget == 0 && violations == 0 && lo_over == 0,
        format!(
            "{} runs: {bad_budget} off-budget, {violations} unrevealed label reads, {} labeled_only runs with {lo_over} out of bounds",
            records.len(),
            lo.count()
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut failures = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        println!(
            "criterion {n} {name}: {} ({})",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failures += 1;
        }
    };
    report(1, "gradient integrity", gradient_integrity());
    report(2, "debiased reduction", debiased_reduction());
    report(3, "k-center oracle", kcenter_oracle());
    report(4, "pca oracle", pca_oracle());

    let cfg = ExperimentConfig::default();
    let runs = trend_runs(&cfg);
    report(5, "trend A pre-training boost", trend_a(&runs));
    report(6, "trend B stabilization", trend_b(&runs));
    report(7, "trend C subsumption", trend_c(&runs));

    let mut records = runs.records.clone();
    let mut grid_records = Vec::new();
    report(8, "grid structure", grid_structure(&mut grid_records));
    records.extend(grid_records);
    report(9, "budget audit", budget_audit(&records));

    println!(
        "acceptance finished in {:.1}s with {failures} failing criteria",
        start.elapsed().as_secs_f64()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
