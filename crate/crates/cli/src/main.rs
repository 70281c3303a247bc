//! Command-line interface for the point-process toolkit: synthetic data
//! generation, training, evaluation, forecasting, imputation, constrained
//! fine-tuning, prior-scale sweeps, and the Markov baseline.
//!
//! Every command reads an optional plain-text config (see the core config
//! module for the schema), honors `MTPP_*` environment overrides, and
//! writes a `manifest.json` describing exactly what ran. Defaults favor
//! reproducibility: one thread, fixed seed, derived random substreams
//! everywhere.

mod manifest;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use manifest::ManifestBuilder;
use mtpp_core::config::RunConfig;
use mtpp_core::data::{
    ingest, ingest_keep_empty, normalize_aligned, normalize_times, split, write_jsonl, SplitSpec,
};
use mtpp_core::eval::{
    drilldown, evaluate, forecast, impute_eval, markov_baseline, write_drilldown_csv,
    write_forecast_csv, write_latent_dump, write_per_event_csv, write_summary_csv, ImputeConfig,
};
use mtpp_core::hawkes::{apply_deletion, delete_exact, simulate, write_mask};
use mtpp_core::model::ParameterStore;
use mtpp_core::train::{
    finetune_pp, sweep_mu, train, write_sweep_csv, write_train_log_csv, TrainVariant,
};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "mtpp",
    about = "Marked temporal point processes with latent missing events",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Plain-text key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Sequence-file format (only `jsonl` in this version).
    #[arg(long, default_value = "jsonl")]
    format: String,

    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,

    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads (default 1 for reproducibility).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic event sequences with the Hawkes simulator.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the generative model on a JSONL dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset (JSON Lines, one sequence per line).
        #[arg(long)]
        data: PathBuf,
        /// Train the latent-free variant (observed likelihood only).
        #[arg(long)]
        observed_only: bool,
    },
    /// One-step-ahead test metrics for a trained checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Also evaluate a baseline checkpoint and emit the per-event gain
        /// drill-down (absolute error of baseline minus this checkpoint).
        #[arg(long)]
        baseline_ckpt: Option<PathBuf>,
    },
    /// Multi-step autoregressive forecasting metrics.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Steps ahead (overrides the config `horizon`).
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Score posterior imputations against held-out events.
    Impute {
        #[command(flatten)]
        common: Common,
        /// Observed dataset (events that survived deletion).
        #[arg(long)]
        data: PathBuf,
        /// Held-out dataset (the deleted events, one line per sequence).
        #[arg(long)]
        heldout: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Keep only the top-k latents per sequence by posterior density.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Constrained fine-tuning with a fixed latent budget per sequence.
    FinetunePp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Latent events per sequence (overrides the config `n_bar`).
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Train once per prior scale and rank them on validation MAE.
    SweepMu {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Markov-chain mark baseline (orders 1..=max-order).
    BaselineMc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        max_order: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    if common.format != "jsonl" {
        bail!(
            "unsupported --format {:?}; only jsonl is available",
            common.format
        );
    }
    let mut cfg = match &common.config {
        Some(path) => {
            RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?
        }
        None => {
            let mut c = RunConfig::new();
            c.apply_env();
            c
        }
    };
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string());
    }
    if let Some(threads) = common.threads {
        cfg.set("threads", &threads.to_string());
    }
    Ok(cfg)
}

fn prepare_out(common: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    Ok(&common.out)
}

fn load_normalized(data: &Path, cfg: &RunConfig) -> Result<(mtpp_core::Dataset, mtpp_core::Split)> {
    let (raw, stats) = ingest(data).with_context(|| format!("ingesting {}", data.display()))?;
    if stats.dropped_nonmonotonic > 0 || stats.dropped_empty_sequences > 0 {
        eprintln!(
            "warning: dropped {} non-monotonic events and {} empty sequences during ingestion",
            stats.dropped_nonmonotonic, stats.dropped_empty_sequences
        );
    }
    let frac = cfg.train_fraction()?;
    let normalized = normalize_times(&raw, frac)?;
    let sp = split(&normalized, SplitSpec::new(frac)?);
    Ok((normalized, sp))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = load_config(&common)?;
            let out = prepare_out(&common)?;
            let seed = cfg.seed()?;
            let mut m = ManifestBuilder::new("simulate", &cfg.canonical());
            m.seed(seed).threads(cfg.threads()?);
            let spec = cfg.hawkes_spec()?;
            let (dataset, stats) = simulate(&spec, seed)?;
            if stats.aborted_sequences > 0 {
                eprintln!(
                    "warning: {} sequences aborted (runaway intensity)",
                    stats.aborted_sequences
                );
            }
            let exact = cfg.delete_exact()?;
            let fraction = cfg.delete_fraction()?;
            let data_path = out.join("data.jsonl");
            if exact > 0 || fraction > 0.0 {
                let (observed, heldout, mask) = if exact > 0 {
                    delete_exact(&dataset, exact, seed)?
                } else {
                    apply_deletion(&dataset, fraction, cfg.delete_jitter()?, seed)?
                };
                let held_path = out.join("heldout.jsonl");
                let mask_path = out.join("mask.json");
                write_jsonl(&observed, &data_path)?;
                write_jsonl(&heldout, &held_path)?;
                write_mask(&mask, &mask_path)?;
                m.output(&data_path).output(&held_path).output(&mask_path);
            } else {
                write_jsonl(&dataset, &data_path)?;
                m.output(&data_path);
            }
            m.write(out)?;
            println!("wrote {}", data_path.display());
            Ok(())
        }

        Command::Train {
            common,
            data,
            observed_only,
        } => {
            let cfg = load_config(&common)?;
            let out = prepare_out(&common)?;
            let mut m = ManifestBuilder::new("train", &cfg.canonical());
            m.input("data", &data)?;
            let (dataset, sp) = load_normalized(&data, &cfg)?;
            let tc = cfg.train_config()?;
            m.seed(tc.seed).threads(tc.threads);
            let variant = if observed_only {
                TrainVariant::ObservedOnly
            } else {
                TrainVariant::Full
            };
            let outcome = train(&dataset, &sp, &tc, variant)?;
            if outcome.diverged {
                eprintln!("warning: training diverged; checkpoints hold the last finite state");
            }
            let best = out.join("best.ckpt");
            let last = out.join("last.ckpt");
            let log = out.join("training_log.csv");
            outcome.best.save(&best)?;
            outcome.last.save(&last)?;
            write_train_log_csv(&outcome.log, &log)?;
            m.output(&best).output(&last).output(&log);
            m.write(out)?;
            println!(
                "trained {} epochs, best epoch {} (val MAE {:.6})",
                outcome.log.len(),
                outcome.best_epoch,
                outcome
                    .log
                    .get(outcome.best_epoch)
                    .map(|r| r.val_mae)
                    .unwrap_or(f64::NAN)
            );
            Ok(())
        }

        Command::Evaluate {
            common,
            data,
            ckpt,
            baseline_ckpt,
        } => {
            let cfg = load_config(&common)?;
            let out = prepare_out(&common)?;
            let mut m = ManifestBuilder::new("evaluate", &cfg.canonical());
            m.input("data", &data)?.input("ckpt", &ckpt)?;
            let (dataset, sp) = load_normalized(&data, &cfg)?;
            let store = ParameterStore::load(&ckpt)?;
            let ec = cfg.eval_config()?;
            m.seed(ec.seed).threads(cfg.threads()?);
            let (report, records) = evaluate(&store, &dataset, &sp, &ec)?;
            let summary = out.join("summary.csv");
            write_summary_csv(&report, &summary)?;
            m.output(&summary);
            for run in 0..ec.runs {
                let path = out.join(format!("per_event_run{run}.csv"));
                write_per_event_csv(&records, run, &path)?;
                m.output(&path);
            }
            if let Some(base) = baseline_ckpt {
                m.input("baseline_ckpt", &base)?;
                let base_store = ParameterStore::load(&base)?;
                let (_, base_records) = evaluate(&base_store, &dataset, &sp, &ec)?;
                let dd = drilldown(&records, &base_records)?;
                let dd_path = out.join("drilldown.csv");
                write_drilldown_csv(&dd, &dd_path)?;
                m.output(&dd_path);
                println!(
                    "drill-down: positive-gain fraction {:.4}, total gain {:.6}",
                    dd.positive_fraction, dd.total_gain
                );
            }
            m.write(out)?;
            println!(
                "MAE {:.6} (+-{:.6})  MPA {:.4} (+-{:.4})  over {} events",
                report.mae, report.mae_ci, report.mpa, report.mpa_ci, report.n_events
            );
            Ok(())
        }

        Command::Forecast {
            common,
            data,
            ckpt,
            horizon,
        } => {
            let cfg = load_config(&common)?;
            let out = prepare_out(&common)?;
            let mut m = ManifestBuilder::new("forecast", &cfg.canonical());
            m.input("data", &data)?.input("ckpt", &ckpt)?;
            let (dataset, sp) = load_normalized(&data, &cfg)?;
            let store = ParameterStore::load(&ckpt)?;
            let ec = cfg.eval_config()?;
            let n = horizon.unwrap_or(cfg.horizon()?);
            m.seed(ec.seed).threads(cfg.threads()?);
            let report = forecast(&store, &dataset, &sp, n, &ec)?;
            let path = out.join("forecast.csv");
            write_forecast_csv(&report, &path)?;
            m.output(&path);
            m.write(out)?;
            println!(
                "forecast horizon {n}: step-1 MAE {:.6}, step-{n} MAE {:.6}",
                report.mae[0],
                report.mae[n - 1]
            );
            Ok(())
        }

        Command::Impute {
            common,
            data,
            heldout,
            ckpt,
            budget,
        } => {
            let cfg = load_config(&common)?;
            let out = prepare_out(&common)?;
            let mut m = ManifestBuilder::new("impute", &cfg.canonical());
            m.input("data", &data)?
                .input("heldout", &heldout)?
                .input("ckpt", &ckpt)?;
            let (obs_raw, _) = ingest(&data)?;
            let (held_raw, _) = ingest_keep_empty(&heldout)?;
            let (obs, held) = normalize_aligned(&obs_raw, &held_raw, cfg.train_fraction()?)?;
            let store = ParameterStore::load(&ckpt)?;
            let ic = ImputeConfig {
                eval: cfg.eval_config()?,
                matching: cfg.matching()?,
                budget,
            };
            m.seed(ic.eval.seed).threads(cfg.threads()?);
            let (report, dumps) = impute_eval(&store, &obs, &held, &ic)?;
            let summary = out.join("impute_summary.csv");
            write_summary_csv(&report.metrics, &summary)?;
            let dump_path = out.join("latents.jsonl");
            write_latent_dump(&dumps, &dump_path)?;
            m.output(&summary).output(&dump_path);
            m.write(out)?;
            println!(
                "imputation MAE {:.6}  MPA {:.4}  over {} held-out events ({} unmatched, {} outside intervals)",
                report.metrics.mae,
                report.metrics.mpa,
                report.metrics.n_events,
                report.unmatched,
                report.outside_intervals
            );
            Ok(())
        }

        Command::FinetunePp {
            common,
            data,
            ckpt,
            budget,
        } => {
            let cfg = load_config(&common)?;
            let out = prepare_out(&common)?;
            let mut m = ManifestBuilder::new("finetune-pp", &cfg.canonical());
            m.input("data", &data)?.input("ckpt", &ckpt)?;
            let (dataset, sp) = load_normalized(&data, &cfg)?;
            let store = ParameterStore::load(&ckpt)?;
            let tc = cfg.train_config()?;
            let n_bar = budget.unwrap_or(cfg.n_bar()?);
            m.seed(tc.seed).threads(tc.threads);
            let outcome = finetune_pp(&store, &dataset, &sp, n_bar, &tc)?;
            if outcome.short_of_budget > 0 {
                eprintln!(
                    "warning: {} sequences produced fewer latents than the budget {}",
                    outcome.short_of_budget, n_bar
                );
            }
            let best = out.join("best.ckpt");
            let last = out.join("last.ckpt");
            let log = out.join("training_log.csv");
            outcome.train.best.save(&best)?;
            outcome.train.last.save(&last)?;
            write_train_log_csv(&outcome.train.log, &log)?;
            m.output(&best).output(&last).output(&log);
            m.write(out)?;
            println!(
                "fine-tuned with budget {} ({} frozen latents total)",
                n_bar,
                outcome.frozen.iter().map(|f| f.len()).sum::<usize>()
            );
            Ok(())
        }

        Command::SweepMu { common, data } => {
            let cfg = load_config(&common)?;
            let out = prepare_out(&common)?;
            let mut m = ManifestBuilder::new("sweep-mu", &cfg.canonical());
            m.input("data", &data)?;
            let (dataset, sp) = load_normalized(&data, &cfg)?;
            let tc = cfg.train_config()?;
            let scales = cfg.mu_sweep()?;
            m.seed(tc.seed).threads(tc.threads);
            let rows = sweep_mu(&dataset, &sp, &scales, &tc)?;
            let path = out.join("sweep.csv");
            write_sweep_csv(&rows, &path)?;
            m.output(&path);
            m.write(out)?;
            let best = rows.iter().find(|r| r.best).expect("one best row");
            println!(
                "best prior scale {} (val MAE {:.6})",
                best.mu_bar, best.val_mae
            );
            Ok(())
        }

        Command::BaselineMc {
            common,
            data,
            max_order,
        } => {
            let cfg = load_config(&common)?;
            let out = prepare_out(&common)?;
            let mut m = ManifestBuilder::new("baseline-mc", &cfg.canonical());
            m.input("data", &data)?;
            if max_order == 0 {
                bail!("max-order must be at least 1");
            }
            let (dataset, sp) = load_normalized(&data, &cfg)?;
            m.seed(cfg.seed()?).threads(cfg.threads()?);
            let report = markov_baseline(&dataset, &sp, max_order, 0.1)?;
            let path = out.join("markov.csv");
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            writeln!(f, "order,val_mpa,test_mpa,best")?;
            for (i, (v, t)) in report.val_mpa.iter().zip(&report.test_mpa).enumerate() {
                writeln!(
                    f,
                    "{},{:.9},{:.9},{}",
                    i + 1,
                    v,
                    t,
                    (i + 1 == report.best_order) as u8
                )?;
            }
            f.flush()?;
            drop(f);
            m.output(&path);
            m.write(out)?;
            println!(
                "best order {} with test MPA {:.4} over {} events",
                report.best_order,
                report.test_mpa[report.best_order - 1],
                report.n_test_events
            );
            Ok(())
        }
    }
}
