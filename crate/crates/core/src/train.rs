//! Mini-batch training with Adam, straight-through mask sampling and early
//! stopping on validation Recall@20.

use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::ehr::{Dataset, PatientRecord};
use crate::error::{Error, Result};
use crate::eval::ranking_report;
use crate::model::{ForwardOptions, ModelConfig, ShyModel};
use crate::objectives::{LossReport, LossWeights};
use crate::optim::{Adam, AdamConfig};
use crate::params::Gradients;
use crate::phenotype::ExtractionMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Epochs without a validation Recall@20 improvement before stopping.
    pub patience: usize,
    pub seeds: Vec<u64>,
    /// Final temperature of a linear schedule starting at the model's `τ`.
    pub anneal_temperature_to: Option<f64>,
    pub selection: Selection,
}

/// Which epoch's parameters [`train`] returns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Best validation Recall@20, with early stopping.
    #[default]
    BestValidation,
    /// The final epoch; no early stopping.
    LastEpoch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            batch_size: 128,
            learning_rate: 5e-3,
            epochs: 60,
            patience: 10,
            seeds: vec![0, 1, 2, 3, 4],
            anneal_temperature_to: None,
            selection: Selection::BestValidation,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig("batch_size, epochs and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list must not be empty".into()));
        }
        if let Some(t) = self.anneal_temperature_to {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::BadTemperature(t));
            }
        }
        Ok(())
    }

    /// Temperature used during `epoch`.
    pub fn temperature(&self, epoch: usize) -> f64 {
        let start = self.model.temperature;
        match self.anneal_temperature_to {
            Some(end) if self.epochs > 1 => start + (end - start) * epoch as f64 / (self.epochs - 1) as f64,
            _ => start,
        }
    }
}

/// Loss of one patient, kept for divergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientLossReport {
    pub patient_id: String,
    #[serde(flatten)]
    pub report: LossReport,
}

/// Batch-mean loss and gradient. Per-patient gradients are summed in batch
/// order so the result does not depend on thread scheduling.
pub fn batch_gradients(
    model: &ShyModel,
    records: &[&PatientRecord],
    weights: &LossWeights,
    opts: &ForwardOptions,
) -> Result<(LossReport, Gradients, Vec<PatientLossReport>)> {
    let n = records.len();
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let seed = 1.0 / n as f64;
    let parts: Vec<_> = records
        .par_iter()
        .map(|r| {
            let mut g = Graph::new();
            let pass = model.forward(&mut g, r, opts)?;
            let loss = model.patient_loss(&mut g, r, &pass, weights);
            let grads = g.param_grads(loss.total, seed);
            Ok((loss.report(&g), grads))
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(&model.store);
    let mut report = LossReport::default();
    let mut per_patient = Vec::with_capacity(n);
    for (r, (rep, grads)) in records.iter().zip(parts) {
        for (id, g) in &grads {
            total.add(*id, g);
        }
        report.accumulate(&rep);
        per_patient.push(PatientLossReport {
            patient_id: r.patient_id.clone(),
            report: rep,
        });
    }
    Ok((report.scaled(seed), total, per_patient))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Batch {
        epoch: usize,
        batch: usize,
        patients: usize,
        temperature: f64,
        #[serde(flatten)]
        report: LossReport,
    },
    Epoch {
        epoch: usize,
        #[serde(flatten)]
        report: LossReport,
        val_recall_at_20: Option<f64>,
        best: bool,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: ShyModel,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_recall_at_20: Option<f64>,
    pub epochs_run: usize,
    pub log: Vec<LogEntry>,
}

impl TrainOutcome {
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for e in &self.log {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn epoch_reports(&self) -> Vec<LossReport> {
        self.log
            .iter()
            .filter_map(|e| match e {
                LogEntry::Epoch { report, .. } => Some(*report),
                _ => None,
            })
            .collect()
    }
}

/// Trains one model for one seed. With an empty validation set the last
/// epoch is kept.
pub fn train(config: &TrainConfig, train_ds: &Dataset, val_ds: &Dataset, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    let model = ShyModel::for_dataset(config.model.clone(), train_ds, seed)?;
    train_model(config, model, train_ds, val_ds, seed)
}

/// Continues training from the given parameters. `config.model` is ignored
/// in favour of the model's own configuration.
pub fn train_model(
    config: &TrainConfig,
    mut model: ShyModel,
    train_ds: &Dataset,
    val_ds: &Dataset,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_ds.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if train_ds.vocabulary != val_ds.vocabulary && !val_ds.is_empty() {
        return Err(Error::InvalidConfig("training and validation vocabularies differ".into()));
    }
    config.weights.check_phenotype_count(model.k());
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, crate::params::ParamStore)> = None;
    let mut since_best = 0;
    let mut step = 0u64;
    let mut epochs_run = 0;
    for epoch in 0..config.epochs {
        epochs_run = epoch + 1;
        let temperature = config.temperature(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_report = LossReport::default();
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let records: Vec<&PatientRecord> = chunk.iter().map(|&i| &train_ds.records[i]).collect();
            let opts = ForwardOptions {
                mode: ExtractionMode::Sample,
                temperature,
                noise_seed: seed,
                step,
            };
            let (report, grads, per_patient) = batch_gradients(&model, &records, &config.weights, &opts)?;
            if !report.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: serde_json::to_string(&per_patient)?,
                });
            }
            adam.step(&mut model.store, &grads);
            log.push(LogEntry::Batch {
                epoch,
                batch: b,
                patients: records.len(),
                temperature,
                report,
            });
            epoch_report.accumulate(&report);
            batches += 1;
            step += 1;
        }
        let epoch_report = epoch_report.scaled(1.0 / batches as f64);
        let val = if val_ds.is_empty() {
            None
        } else {
            Some(ranking_report(val_ds, |r| Ok(model.explain(r)?.scores))?.recall_at_20)
        };
        let improved = match (&best, val, config.selection) {
            (None, ..) | (_, _, Selection::LastEpoch) | (Some(_), None, _) => true,
            (Some((b, ..)), Some(v), _) => v > *b,
        };
        if improved {
            best = Some((val.unwrap_or(f64::NEG_INFINITY), epoch, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        log::info!(
            "seed {seed} epoch {epoch}: loss {:.4} (pred {:.4}) val recall@20 {:?}",
            epoch_report.total,
            epoch_report.pred,
            val
        );
        log.push(LogEntry::Epoch {
            epoch,
            report: epoch_report,
            val_recall_at_20: val,
            best: improved,
        });
        if since_best >= config.patience {
            break;
        }
    }
    let (best_val, best_epoch, store) = best.expect("at least one epoch runs");
    model.store = store;
    Ok(TrainOutcome {
        model,
        seed,
        best_epoch,
        best_val_recall_at_20: best_val.is_finite().then_some(best_val),
        epochs_run,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{generate_synthetic, SynthConfig};

    fn tiny() -> (TrainConfig, Dataset) {
        let ds = generate_synthetic(
            &SynthConfig {
                num_codes: 20,
                num_patients: 10,
                num_clusters: 2,
                ..SynthConfig::default()
            },
            2,
        )
        .unwrap()
        .dataset;
        let cfg = TrainConfig {
            model: ModelConfig {
                code_dim: 3,
                unigin_widths: vec![6],
                hidden: 6,
                num_phenotypes: 2,
                attention_heads: 2,
                attention_key_dim: 3,
                attention_value_dim: 3,
                ..ModelConfig::default()
            },
            batch_size: 4,
            epochs: 1,
            seeds: vec![0],
            ..TrainConfig::default()
        };
        (cfg, ds)
    }

    #[test]
    fn one_epoch_logs_every_batch() {
        let (cfg, ds) = tiny();
        let out = train(&cfg, &ds, &ds, 0).unwrap();
        let batches: Vec<_> = out.log.iter().filter(|e| matches!(e, LogEntry::Batch { .. })).collect();
        assert_eq!(batches.len(), 3);
        let w = cfg.weights;
        for e in &out.log {
            let r = match e {
                LogEntry::Batch { report, .. } | LogEntry::Epoch { report, .. } => report,
            };
            let expect = r.pred + w.fidelity * r.fidelity + w.distinct * r.distinct + w.alpha * r.alpha;
            assert!((r.total - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_result() {
        let (mut cfg, ds) = tiny();
        cfg.epochs = 2;
        let a = train(&cfg, &ds, &ds, 7).unwrap();
        let b = train(&cfg, &ds, &ds, 7).unwrap();
        assert_eq!(a.model.store.checksum(), b.model.store.checksum());
        assert_eq!(a.best_val_recall_at_20, b.best_val_recall_at_20);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn log_round_trips_as_json_lines() {
        let (cfg, ds) = tiny();
        let out = train(&cfg, &ds, &ds, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        out.write_log(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: Vec<LogEntry> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed.len(), out.log.len());
        assert!(text.lines().next().unwrap().contains("\"kind\":\"batch\""));
    }

    #[test]
    fn divergence_aborts_with_batch_dump() {
        let (cfg, ds) = tiny();
        let mut model = ShyModel::for_dataset(cfg.model.clone(), &ds, 0).unwrap();
        let id = model.head.bias;
        model.store.value_mut(id)[[0, 0]] = f64::NAN;
        match train_model(&cfg, model, &ds, &ds, 0) {
            Err(Error::Diverged { epoch, batch, detail }) => {
                assert_eq!((epoch, batch), (0, 0));
                // non-finite values serialise as null
                let dump: Vec<serde_json::Value> = serde_json::from_str(&detail).unwrap();
                assert_eq!(dump.len(), cfg.batch_size);
                assert!(dump.iter().all(|p| p["patient_id"].is_string() && p["total"].is_null()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn last_epoch_selection_runs_every_epoch() {
        let (mut cfg, ds) = tiny();
        cfg.epochs = 3;
        cfg.patience = 1;
        cfg.selection = Selection::LastEpoch;
        let out = train(&cfg, &ds, &ds, 0).unwrap();
        assert_eq!((out.epochs_run, out.best_epoch), (3, 2));
    }

    #[test]
    fn temperature_schedule_is_linear() {
        let cfg = TrainConfig {
            epochs: 5,
            anneal_temperature_to: Some(0.5),
            ..TrainConfig::default()
        };
        assert_eq!(cfg.temperature(0), 1.0);
        assert_eq!(cfg.temperature(4), 0.5);
        assert!((cfg.temperature(2) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            TrainConfig {
                seeds: vec![],
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
