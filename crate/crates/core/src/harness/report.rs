use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::grid::{fmt6, mean_std};
use crate::error::{Error, Result};

pub const GAPS_HEADER: &str = "pretrain,trainer,budget,random_acc,coreset_minus_random,vaal_minus_random";

/// Accuracy of each active selector minus the random baseline, per block.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub pretrain: String,
    pub trainer: String,
    pub budget: usize,
    pub random_acc: Option<f64>,
    pub coreset_gap: Option<f64>,
    pub vaal_gap: Option<f64>,
}

/// Builds the gap table from the text of a results file.
pub fn gap_table(results_csv: &str) -> Result<Vec<GapRow>> {
    let mut reader = csv::Reader::from_reader(results_csv.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("results file lacks a {name} column")))
    };
    let (pre, sel, tr, bud, acc, st) = (
        col("pretrain")?,
        col("selector")?,
        col("trainer")?,
        col("budget")?,
        col("reported_acc")?,
        col("status")?,
    );
    let mut groups: BTreeMap<(String, String, usize), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse(e.to_string()))?;
        let budget: usize = row[bud]
            .parse()
            .map_err(|_| Error::Parse(format!("bad budget {:?}", &row[bud])))?;
        let entry = groups
            .entry((row[pre].to_string(), row[tr].to_string(), budget))
            .or_default()
            .entry(row[sel].to_string())
            .or_default();
        if &row[st] == "ok" {
            if let Ok(v) = row[acc].parse::<f64>() {
                if v.is_finite() {
                    entry.push(v);
                }
            }
        }
    }
    let mut rows = Vec::new();
    for ((pretrain, trainer, budget), by_sel) in groups {
        let mean = |s: &str| by_sel.get(s).and_then(|v| mean_std(v)).map(|x| x.0);
        let Some(random) = mean("random") else { continue };
        rows.push(GapRow {
            pretrain,
            trainer,
            budget,
            random_acc: Some(random),
            coreset_gap: mean("coreset").map(|m| m - random),
            vaal_gap: mean("vaal").map(|m| m - random),
        });
    }
    Ok(rows)
}

pub fn gaps_csv(rows: &[GapRow]) -> String {
    let mut out = format!("{GAPS_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.pretrain,
            r.trainer,
            r.budget,
            fmt6(r.random_acc),
            fmt6(r.coreset_gap),
            fmt6(r.vaal_gap)
        );
    }
    out
}

/// Reads `results.csv` in `dir` and writes `gaps.csv` next to it.
pub fn write_report(dir: &Path) -> Result<Vec<GapRow>> {
    let path = dir.join("results.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let rows = gap_table(&text)?;
    let out = dir.join("gaps.csv");
    std::fs::write(&out, gaps_csv(&rows)).map_err(|e| Error::io(&out, e))?;
    Ok(rows)
}
