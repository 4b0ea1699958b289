use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{Cell, ExperimentConfig, Pretrain, Selector};
use super::pipeline::{build_encoder, fingerprint, record_json, run_from_encoder, Encoder, RunRecord, Status};
use crate::data::generate;
use crate::error::{Error, Result};
use crate::semisup::Method;

pub const RESULTS_HEADER: &str = "pretrain,selector,trainer,budget,seed,reported_acc,final_acc,best_acc,coverage_delta,pretrain_s,select_s,train_s,status";
pub const SUMMARY_HEADER: &str = "pretrain,selector,trainer,budget,mean_acc,std_acc,gap_vs_random";

#[derive(Debug, Clone)]
pub struct GridOutput {
    /// One record per cell, canonical order.
    pub records: Vec<RunRecord>,
    /// Cells computed in this call (the rest were loaded from disk).
    pub computed: Vec<Cell>,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
}

pub(crate) fn fmt6(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        Some(x) if x.is_infinite() => {
            if x > 0.0 {
                "inf".into()
            } else {
                "-inf".into()
            }
        }
        _ => "nan".into(),
    }
}

pub fn record_dir(out: &Path, fingerprint: &str) -> PathBuf {
    out.join("runs").join(fingerprint)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_record(path: &Path, expected: &str) -> Option<RunRecord> {
    let text = fs::read_to_string(path).ok()?;
    let record: RunRecord = serde_json::from_str(&text).ok()?;
    (record.fingerprint == expected && record.status == Status::Ok).then_some(record)
}

fn save_record(out: &Path, record: &RunRecord) -> Result<()> {
    let dir = record_dir(out, &record.fingerprint);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join("record.json"), &record_json(record)?)?;
    write(&dir.join("selection.csv"), &record.selection.to_csv())?;
    let mut hist = String::from("epoch,train_loss,test_acc\n");
    for r in &record.history {
        let _ = writeln!(hist, "{},{:.6},{:.6}", r.epoch, r.train_loss, r.test_acc);
    }
    write(&dir.join("history.csv"), &hist)
}

/// Runs every cell not already recorded under `out`, then rewrites the
/// result tables. Failed cells are kept with `status=error`.
pub fn run_grid(cfg: &ExperimentConfig, out: &Path) -> Result<GridOutput> {
    cfg.validate()?;
    fs::create_dir_all(out.join("runs")).map_err(|e| Error::io(out, e))?;
    write(&out.join("config.cfg"), &cfg.to_text())?;
    let (pool, test) = generate(&cfg.dataset)?;
    let mut encoders: HashMap<(Pretrain, u64), std::result::Result<Encoder, String>> = HashMap::new();
    let mut records = Vec::new();
    let mut computed = Vec::new();

    for cell in cfg.cells() {
        let fp = fingerprint(cfg, &cell);
        let path = record_dir(out, &fp).join("record.json");
        if let Some(record) = load_record(&path, &fp) {
            records.push(record);
            continue;
        }
        let encoder = encoders
            .entry((cell.pretrain, cell.seed))
            .or_insert_with(|| build_encoder(cfg, cell.pretrain, cell.seed, &pool).map_err(|e| e.to_string()));
        let record = match encoder {
            Ok(enc) => {
                run_from_encoder(cfg, &cell, enc, &pool, &test).unwrap_or_else(|e| RunRecord::failed(cfg, &cell, &e))
            }
            Err(msg) => RunRecord::failed(cfg, &cell, &Error::Numeric(msg.clone()).in_stage("pretrain")),
        };
        save_record(out, &record)?;
        computed.push(cell);
        records.push(record);
    }
    records.sort_by_key(|r| r.cell);

    let results_path = out.join("results.csv");
    let summary_path = out.join("summary.csv");
    write(&results_path, &results_csv(&records, cfg.timings))?;
    write(&summary_path, &summary_csv(&records))?;
    write(&out.join("timings.csv"), &results_csv(&records, true))?;
    Ok(GridOutput {
        records,
        computed,
        results_path,
        summary_path,
    })
}

/// One row per record. Stage times print as zero unless `timings` is set so
/// that the file is reproducible byte for byte.
pub fn results_csv(records: &[RunRecord], timings: bool) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in records {
        let t = |v: f64| if timings { format!("{v:.6}") } else { "0.000000".into() };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.cell.pretrain.as_str(),
            r.cell.selector.as_str(),
            r.cell.trainer.as_str(),
            r.cell.budget,
            r.cell.seed,
            fmt6(r.reported_acc),
            fmt6(r.final_acc),
            fmt6(r.best_acc),
            fmt6(r.coverage_delta),
            t(r.times.pretrain_s),
            t(r.times.select_s),
            t(r.times.train_s),
            r.status.as_str()
        );
    }
    out
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

type CellKey = (Pretrain, Selector, Method, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub pretrain: Pretrain,
    pub selector: Selector,
    pub trainer: Method,
    pub budget: usize,
    pub mean_acc: Option<f64>,
    pub std_acc: Option<f64>,
    pub gap_vs_random: Option<f64>,
}

/// Groups reported accuracies of successful runs by cell.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<CellKey, Vec<f64>> = BTreeMap::new();
    for r in records {
        let key = (r.cell.pretrain, r.cell.selector, r.cell.trainer, r.cell.budget);
        let entry = groups.entry(key).or_default();
        if let (Status::Ok, Some(acc)) = (&r.status, r.reported_acc) {
            entry.push(acc);
        }
    }
    let stats: BTreeMap<CellKey, Option<(f64, f64)>> = groups.iter().map(|(k, v)| (*k, mean_std(v))).collect();
    stats
        .iter()
        .map(|(&(pretrain, selector, trainer, budget), s)| {
            let baseline = stats
                .get(&(pretrain, Selector::Random, trainer, budget))
                .copied()
                .flatten()
                .map(|b| b.0);
            let gap = match (selector, s, baseline) {
                (Selector::All, _, _) => None,
                (_, Some((m, _)), Some(b)) => Some(m - b),
                _ => None,
            };
            SummaryRow {
                pretrain,
                selector,
                trainer,
                budget,
                mean_acc: s.map(|x| x.0),
                std_acc: s.map(|x| x.1),
                gap_vs_random: gap,
            }
        })
        .collect()
}

pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for row in summarize(records) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.pretrain.as_str(),
            row.selector.as_str(),
            row.trainer.as_str(),
            row.budget,
            fmt6(row.mean_acc),
            fmt6(row.std_acc),
            fmt6(row.gap_vs_random)
        );
    }
    out
}
