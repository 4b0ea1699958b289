//! Experiment orchestration: configs, single runs, the ablation grid and
//! its reports.

mod config;
mod grid;
mod pipeline;
mod report;

pub use config::{Cell, ExperimentConfig, GridSpec, Pretrain, Selector};
pub use grid::{
    mean_std, record_dir, results_csv, run_grid, summarize, summary_csv, GridOutput, SummaryRow, RESULTS_HEADER,
    SUMMARY_HEADER,
};
pub use pipeline::{
    build_encoder, canonical_cell_text, fingerprint, record_json, run_cell, run_from_encoder, run_pipeline, run_seed,
    select_for_cell, Encoder, RunRecord, SelectionLog, StageTimes, Status,
};
pub use report::{gap_table, gaps_csv, write_report, GapRow, GAPS_HEADER};
