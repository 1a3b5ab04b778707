//! Command-line entry points. Every command except `serve` is deterministic
//! given its config and seeds.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use hyperpheno_core::checkpoint::{load_checkpoint, save_checkpoint};
use hyperpheno_core::config::ExperimentConfig;
use hyperpheno_core::ehr::{generate_synthetic, load_dataset, write_dataset_csv, Dataset};
use hyperpheno_core::eval::{evaluate, robustness_experiment, write_json, EvalOptions, FrequencyBaseline, RankingReport, RobustnessRow, SeedReports};
use hyperpheno_core::metrics::ChangeMeasure;
use hyperpheno_core::model::ShyModel;
use hyperpheno_core::train::train;
use serde::Serialize;

use crate::payload::{check_vocabulary, explain_patient, DEFAULT_TOP_K};
use crate::session::SessionStore;
use crate::state::AppState;

pub const CORPUS_FILE: &str = "corpus.csv";
pub const RULES_FILE: &str = "rules.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "hyperpheno", version, about = "Hypergraph phenotype model: data, training, evaluation and the intervention service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Measure {
    L1,
    L2,
}

impl From<Measure> for ChangeMeasure {
    fn from(m: Measure) -> Self {
        match m {
            Measure::L1 => ChangeMeasure::L1,
            Measure::L2 => ChangeMeasure::L2,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus: corpus.csv, rules.json, config.json.
    Synth {
        /// Experiment config (JSON); the bundled one when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one checkpoint per seed into OUT/seed-<s>/.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Corpus CSV (patient_id, visit_id, visit_timestamp, icd9_code).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed list; repeatable.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
    },
    /// Evaluate checkpoints on the test split and write a JSON report.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory; repeat for a multi-seed mean.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the first checkpoint's robustness table as CSV.
        #[arg(long)]
        robustness_csv: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "l1")]
        change_measure: Measure,
    },
    /// Write the explanation payload of one patient.
    Explain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        patient: String,
        /// Freshly initialised weights from the config when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Initialisation seed when no checkpoint is given.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
        /// Standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the intervention HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Without one, model routes answer 503.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top_k: usize,
    },
}

/// Bad configuration; the binary prints usage and exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::shipped()),
        Some(p) => ExperimentConfig::load(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())).into()),
    }
}

fn load_data(cfg: &ExperimentConfig, path: &Path) -> anyhow::Result<Dataset> {
    load_dataset(path, &cfg.ingest).with_context(|| format!("loading {}", path.display()))
}

fn load_model(dir: &Path, ds: &Dataset) -> anyhow::Result<(ShyModel, Vec<u64>)> {
    let (model, manifest) = load_checkpoint(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    check_vocabulary(&model, ds)?;
    Ok((model, manifest.seeds))
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    seed: u64,
    checkpoint: PathBuf,
    best_epoch: usize,
    best_val_recall_at_20: Option<f64>,
    epochs_run: usize,
}

#[derive(Debug, Serialize)]
pub struct EvaluationOutput {
    pub test_patients: usize,
    pub model: SeedReports,
    pub frequency_baseline: RankingReport,
    pub robustness: Vec<SeedRobustnessView>,
}

#[derive(Debug, Serialize)]
pub struct SeedRobustnessView {
    pub seed: u64,
    pub rows: Vec<RobustnessRow>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let corpus = generate_synthetic(&cfg.synth, cfg.synth_seed)?;
            std::fs::create_dir_all(&out)?;
            write_dataset_csv(&corpus.dataset, &out.join(CORPUS_FILE))?;
            write_json(&out.join(RULES_FILE), &corpus.rules)?;
            write_json(&out.join(CONFIG_FILE), &cfg)?;
            log::info!("wrote {} patients to {}", corpus.dataset.len(), out.display());
        }
        Command::Train { config, data, out, seeds } => {
            let cfg = load_config(config.as_deref())?;
            let ds = load_data(&cfg, &data)?;
            let (train_ds, val, _) = cfg.split.apply(&ds)?;
            let seeds = if seeds.is_empty() { cfg.train.seeds.clone() } else { seeds };
            let mut summary = Vec::new();
            for seed in seeds {
                let outcome = train(&cfg.train, &train_ds, &val, seed)?;
                let dir = out.join(format!("seed-{seed}"));
                save_checkpoint(&outcome.model, vec![seed], &dir)?;
                outcome.write_log(&dir.join("train_log.jsonl"))?;
                log::info!(
                    "seed {seed}: best epoch {} of {}, val Recall@20 {:?}",
                    outcome.best_epoch,
                    outcome.epochs_run,
                    outcome.best_val_recall_at_20
                );
                summary.push(TrainSummary {
                    seed,
                    checkpoint: dir,
                    best_epoch: outcome.best_epoch,
                    best_val_recall_at_20: outcome.best_val_recall_at_20,
                    epochs_run: outcome.epochs_run,
                });
            }
            write_json(&out.join("summary.json"), &summary)?;
        }
        Command::Evaluate {
            config,
            data,
            checkpoints,
            out,
            robustness_csv,
            change_measure,
        } => {
            let cfg = load_config(config.as_deref())?;
            let ds = load_data(&cfg, &data)?;
            let (train_ds, _, test) = cfg.split.apply(&ds)?;
            let opts = EvalOptions {
                change_measure: change_measure.into(),
            };
            let mut per_seed = Vec::new();
            let mut robustness = Vec::new();
            for (i, dir) in checkpoints.iter().enumerate() {
                let (model, seeds) = load_model(dir, &ds)?;
                let seed = seeds.first().copied().unwrap_or(i as u64);
                per_seed.push((seed, evaluate(&model, &test, &opts)?));
                let table = robustness_experiment(&model, &test, &cfg.robustness.fractions, cfg.robustness.seed)?;
                if i == 0 {
                    if let Some(path) = &robustness_csv {
                        table.write_csv(path)?;
                    }
                }
                robustness.push(SeedRobustnessView { seed, rows: table.rows });
            }
            let report = EvaluationOutput {
                test_patients: test.len(),
                model: SeedReports::new(per_seed),
                frequency_baseline: FrequencyBaseline::fit(&train_ds).evaluate(&test)?,
                robustness,
            };
            write_json(&out, &report)?;
        }
        Command::Explain {
            config,
            data,
            patient,
            checkpoint,
            seed,
            top_k,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let ds = load_data(&cfg, &data)?;
            let model = match checkpoint {
                Some(dir) => load_model(&dir, &ds)?.0,
                None => ShyModel::for_dataset(cfg.train.model.clone(), &ds, seed)?,
            };
            let payload = explain_patient(&model, &ds, &patient, top_k)?;
            match out {
                Some(path) => write_json(&path, &payload)?,
                None => println!("{}", serde_json::to_string_pretty(&payload)?),
            }
        }
        Command::Serve {
            config,
            data,
            checkpoint,
            sessions,
            addr,
            top_k,
        } => {
            let cfg = load_config(config.as_deref())?;
            let ds = load_data(&cfg, &data)?;
            let model = match &checkpoint {
                Some(dir) => Some(load_model(dir, &ds)?.0),
                None => {
                    log::warn!("no checkpoint given; explanation and intervention routes will answer 503");
                    None
                }
            };
            if top_k == 0 {
                bail!("--top-k must be positive");
            }
            let state = AppState::new(model, ds, SessionStore::open(&sessions)?)?.with_top_k(top_k);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                log::info!("listening on {}", listener.local_addr()?);
                axum::serve(listener, crate::api::router(state)).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}
