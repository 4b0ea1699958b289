use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fewlabel::data::{generate, Dataset};
use fewlabel::harness::{
    build_encoder, record_json, run_cell, run_grid, run_seed, select_for_cell, write_report, Cell, Encoder,
    ExperimentConfig, Pretrain, Selector,
};
use fewlabel::nn::{Checkpoint, Model};
use fewlabel::rng::stage_rng;
use fewlabel::semisup::Method;
use fewlabel::Error;

/// Contrastive pre-training, active selection and semi-supervised
/// fine-tuning on synthetic pools.
#[derive(Parser, Debug)]
#[command(name = "fewlabel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (`run.seed`); for `gen`, the dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CellArgs {
    #[arg(long, default_value = "dcl")]
    pretrain: String,
    #[arg(long, default_value = "random")]
    selector: String,
    #[arg(long, default_value = "fixmatch")]
    trainer: String,
    /// Total labels; defaults to the first grid budget.
    #[arg(long)]
    budget: Option<usize>,
    /// Run seed; defaults to the first grid seed.
    #[arg(long)]
    run: Option<u64>,
    /// Encoder checkpoint from `pretrain` to start from.
    #[arg(long)]
    encoder: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic train and test sets as CSV.
    Gen(Common),
    /// Contrastive pre-training; writes an encoder checkpoint and loss history.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Run seed; defaults to the first grid seed.
        #[arg(long)]
        run: Option<u64>,
    },
    /// Seed and active selection for one cell; writes selection.csv.
    Select {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: CellArgs,
    },
    /// Full pipeline for one cell; writes history, record and final checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        cell: CellArgs,
    },
    /// Every cell of the configured grid; writes results.csv and summary.csv.
    Grid(Common),
    /// Gap table (selector minus random) from a grid's results.csv.
    Report {
        /// Directory holding results.csv.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn resolve_cell(cfg: &ExperimentConfig, args: &CellArgs) -> Result<Cell, Error> {
    let selector: Selector = args.selector.parse()?;
    let budget = match (selector, args.budget) {
        (Selector::All, _) => cfg.dataset.n_train,
        (_, Some(b)) => b,
        (_, None) => cfg.grid.budgets[0],
    };
    Ok(Cell {
        pretrain: args.pretrain.parse()?,
        selector,
        trainer: args.trainer.parse::<Method>()?,
        budget,
        seed: args.run.unwrap_or(cfg.grid.seeds[0]),
    })
}

fn encoder_for(cfg: &ExperimentConfig, cell: &Cell, path: Option<&Path>, pool: &Dataset) -> Result<Encoder, Error> {
    match path {
        None => build_encoder(cfg, cell.pretrain, cell.seed, pool),
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let mut model = Model::new(cfg.model_dims(), &mut stage_rng(run_seed(cfg, cell.seed), "init"));
            ckpt.apply_to(&mut model)?;
            Ok(Encoder {
                model,
                loss: Vec::new(),
                seconds: 0.0,
            })
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen(common) => {
            let mut cfg = load_config(&common)?;
            if let Some(seed) = common.seed {
                cfg.dataset.seed = seed;
            }
            let (train, test) = generate(&cfg.dataset)?;
            ensure_dir(&common.out)?;
            let path = common.out.join("dataset.csv");
            Dataset::write_csv(&path, &[&train, &test])?;
            println!(
                "wrote {} ({} train, {} test rows)",
                path.display(),
                train.len(),
                test.len()
            );
        }
        Command::Pretrain { common, run } => {
            let cfg = load_config(&common)?;
            let seed = run.unwrap_or(cfg.grid.seeds[0]);
            let (pool, _) = generate(&cfg.dataset)?;
            let enc = build_encoder(&cfg, Pretrain::Dcl, seed, &pool)?;
            ensure_dir(&common.out)?;
            let c = cfg.contrastive();
            let ckpt = Checkpoint::from_model(&enc.model)
                .with_tag("pretrain.temperature", format!("{:?}", c.temperature))
                .with_tag("pretrain.tau_plus", format!("{:?}", c.tau_plus))
                .with_tag("pretrain.batch_size", c.batch_size.to_string())
                .with_tag("pretrain.epochs", c.epochs.to_string())
                .with_tag("pretrain.lr", format!("{:?}", c.lr))
                .with_tag("aug.weak.jitter", format!("{:?}", c.weak.jitter))
                .with_tag("run.seed", cfg.master_seed.to_string())
                .with_tag("run", seed.to_string());
            let path = common.out.join("encoder.ckpt");
            ckpt.save(&path)?;
            let mut hist = String::from("epoch,loss\n");
            for (i, l) in enc.loss.iter().enumerate() {
                hist.push_str(&format!("{i},{l:.6}\n"));
            }
            write(&common.out.join("pretrain_loss.csv"), &hist)?;
            println!("wrote {} after {} epochs", path.display(), enc.loss.len());
        }
        Command::Select { common, cell } => {
            let cfg = load_config(&common)?;
            let c = resolve_cell(&cfg, &cell)?;
            let (pool, _) = generate(&cfg.dataset)?;
            let enc = encoder_for(&cfg, &c, cell.encoder.as_deref(), &pool)?;
            let mut train_set = pool.clone();
            let (log, delta) = select_for_cell(&cfg, &c, &enc.model, &mut train_set)?;
            ensure_dir(&common.out)?;
            let path = common.out.join("selection.csv");
            write(&path, &log.to_csv())?;
            println!(
                "selected {} labels, coverage radius {:.6}; wrote {}",
                train_set.labeled_count(),
                delta.unwrap_or(f64::NAN),
                path.display()
            );
        }
        Command::Train { common, cell } => {
            let cfg = load_config(&common)?;
            let c = resolve_cell(&cfg, &cell)?;
            let (pool, test) = generate(&cfg.dataset)?;
            let enc = encoder_for(&cfg, &c, cell.encoder.as_deref(), &pool)?;
            let (record, model) = run_cell(&cfg, &c, &enc, &pool, &test)?;
            ensure_dir(&common.out)?;
            Checkpoint::from_model(&model)
                .with_tag("cell.fingerprint", record.fingerprint.clone())
                .save(&common.out.join("model.ckpt"))?;
            let mut hist = String::from("epoch,train_loss,test_acc\n");
            for r in &record.history {
                hist.push_str(&format!("{},{:.6},{:.6}\n", r.epoch, r.train_loss, r.test_acc));
            }
            write(&common.out.join("history.csv"), &hist)?;
            write(&common.out.join("selection.csv"), &record.selection.to_csv())?;
            let json = record_json(&record)?;
            write(&common.out.join("record.json"), &json)?;
            println!(
                "{} {} {} budget {}: reported accuracy {:.6}",
                c.pretrain.as_str(),
                c.selector.as_str(),
                c.trainer.as_str(),
                c.budget,
                record.reported_acc.unwrap_or(f64::NAN)
            );
        }
        Command::Grid(common) => {
            let cfg = load_config(&common)?;
            let out = run_grid(&cfg, &common.out)?;
            let failed = out.records.iter().filter(|r| r.error.is_some()).count();
            println!(
                "{} runs ({} computed, {} failed); wrote {} and {}",
                out.records.len(),
                out.computed.len(),
                failed,
                out.results_path.display(),
                out.summary_path.display()
            );
        }
        Command::Report { out } => {
            let rows = write_report(&out)?;
            println!(
                "{:<6} {:<13} {:>6} {:>10} {:>10} {:>10}",
                "pre", "trainer", "budget", "random", "coreset-r", "vaal-r"
            );
            let f = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{:.4}", x));
            for r in rows {
                println!(
                    "{:<6} {:<13} {:>6} {:>10} {:>10} {:>10}",
                    r.pretrain,
                    r.trainer,
                    r.budget,
                    f(r.random_acc),
                    f(r.coreset_gap),
                    f(r.vaal_gap)
                );
            }
            println!("wrote {}", out.join("gaps.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
