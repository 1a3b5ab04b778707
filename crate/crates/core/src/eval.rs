//! Evaluation: ranking metrics, explanation quality, the frequency
//! baseline and the masked-history robustness experiment.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ehr::{mask_diagnoses, Dataset, PatientRecord};
use crate::error::Result;
use crate::hypergraph::Cell;
use crate::metrics::{complexity, distinctness, ndcg_at_k, pearson, recall_at_k, ChangeMeasure};
use crate::model::{Explanation, ShyModel};
use crate::phenotype::PhenotypeSet;

/// Mean Recall and nDCG at 10 and 20.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub recall_at_10: f64,
    pub recall_at_20: f64,
    pub ndcg_at_10: f64,
    pub ndcg_at_20: f64,
    /// Patients included in the means.
    pub patients: usize,
    /// Patients whose label visit is empty.
    pub excluded_empty_labels: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub ranking: RankingReport,
    /// `None` when no patient has a defined correlation.
    pub faithfulness: Option<f64>,
    pub faithfulness_skipped: usize,
    pub complexity: f64,
    pub distinctness: Option<f64>,
    pub distinctness_skipped: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub change_measure: ChangeMeasure,
}

/// Per-patient ranking values, `None` for an empty label.
fn ranking_row(scores: &[f64], record: &PatientRecord) -> Option<[f64; 4]> {
    let y = &record.label().codes;
    Some([
        recall_at_k(scores, y, 10)?,
        recall_at_k(scores, y, 20)?,
        ndcg_at_k(scores, y, 10)?,
        ndcg_at_k(scores, y, 20)?,
    ])
}

fn ranking_from_rows(rows: &[Option<[f64; 4]>]) -> RankingReport {
    let mut sum = [0.0; 4];
    let mut n = 0;
    for r in rows.iter().flatten() {
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
        n += 1;
    }
    let d = n.max(1) as f64;
    RankingReport {
        recall_at_10: sum[0] / d,
        recall_at_20: sum[1] / d,
        ndcg_at_10: sum[2] / d,
        ndcg_at_20: sum[3] / d,
        patients: n,
        excluded_empty_labels: rows.len() - n,
    }
}

/// Ranking metrics for any scorer over a dataset.
pub fn ranking_report<F>(ds: &Dataset, scorer: F) -> Result<RankingReport>
where
    F: Fn(&PatientRecord) -> Result<Vec<f64>> + Sync,
{
    let rows: Vec<Option<[f64; 4]>> = ds
        .records
        .par_iter()
        .map(|r| scorer(r).map(|s| ranking_row(&s, r)))
        .collect::<Result<_>>()?;
    Ok(ranking_from_rows(&rows))
}

/// Prediction changes from removing each phenotype in turn.
pub fn removal_changes(model: &ShyModel, e: &Explanation, measure: ChangeMeasure) -> Result<Vec<f64>> {
    (0..e.phenotypes.k())
        .map(|k| {
            let mut removed = e.phenotypes.clone();
            removed.phenotypes[k].clear();
            let (y, _) = model.predict_from_phenotypes(&removed, &e.personalized)?;
            Ok(measure.distance(&e.scores, &y))
        })
        .collect()
}

/// Pearson correlation of importance weights against removal changes.
pub fn patient_faithfulness(model: &ShyModel, e: &Explanation, measure: ChangeMeasure) -> Result<Option<f64>> {
    Ok(pearson(&e.alpha, &removal_changes(model, e, measure)?))
}

/// Mean faithfulness and skip count.
pub fn faithfulness(model: &ShyModel, ds: &Dataset, measure: ChangeMeasure) -> Result<(Option<f64>, usize)> {
    let values: Vec<Option<f64>> = ds
        .records
        .par_iter()
        .map(|r| patient_faithfulness(model, &model.explain(r)?, measure))
        .collect::<Result<_>>()?;
    Ok(mean_skip(&values))
}

fn mean_skip(values: &[Option<f64>]) -> (Option<f64>, usize) {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let skipped = values.len() - defined.len();
    if defined.is_empty() {
        (None, skipped)
    } else {
        (Some(defined.iter().sum::<f64>() / defined.len() as f64), skipped)
    }
}

/// Full report with deterministic extraction.
pub fn evaluate(model: &ShyModel, ds: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    struct Row {
        ranking: Option<[f64; 4]>,
        faith: Option<f64>,
        set: PhenotypeSet,
    }
    let rows: Vec<Row> = ds
        .records
        .par_iter()
        .map(|r| {
            let e = model.explain(r)?;
            Ok(Row {
                ranking: ranking_row(&e.scores, r),
                faith: patient_faithfulness(model, &e, opts.change_measure)?,
                set: e.phenotypes,
            })
        })
        .collect::<Result<_>>()?;
    let ranking = ranking_from_rows(&rows.iter().map(|r| r.ranking).collect::<Vec<_>>());
    let (faith, faith_skipped) = mean_skip(&rows.iter().map(|r| r.faith).collect::<Vec<_>>());
    let sets: Vec<PhenotypeSet> = rows.into_iter().map(|r| r.set).collect();
    let (dist, dist_skipped) = distinctness(&sets);
    Ok(EvalReport {
        ranking,
        faithfulness: faith,
        faithfulness_skipped: faith_skipped,
        complexity: complexity(&sets),
        distinctness: dist,
        distinctness_skipped: dist_skipped,
    })
}

/// Reports for several seeds with their arithmetic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReports {
    pub per_seed: Vec<(u64, EvalReport)>,
    pub mean: EvalReport,
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl SeedReports {
    pub fn new(per_seed: Vec<(u64, EvalReport)>) -> Self {
        let n = per_seed.len().max(1) as f64;
        let avg = |f: &dyn Fn(&EvalReport) -> f64| per_seed.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
        let mean = EvalReport {
            ranking: RankingReport {
                recall_at_10: avg(&|r| r.ranking.recall_at_10),
                recall_at_20: avg(&|r| r.ranking.recall_at_20),
                ndcg_at_10: avg(&|r| r.ranking.ndcg_at_10),
                ndcg_at_20: avg(&|r| r.ranking.ndcg_at_20),
                patients: per_seed.first().map_or(0, |(_, r)| r.ranking.patients),
                excluded_empty_labels: per_seed.first().map_or(0, |(_, r)| r.ranking.excluded_empty_labels),
            },
            faithfulness: mean_opt(per_seed.iter().map(|(_, r)| r.faithfulness)),
            faithfulness_skipped: per_seed.iter().map(|(_, r)| r.faithfulness_skipped).sum(),
            complexity: avg(&|r| r.complexity),
            distinctness: mean_opt(per_seed.iter().map(|(_, r)| r.distinctness)),
            distinctness_skipped: per_seed.iter().map(|(_, r)| r.distinctness_skipped).sum(),
        };
        Self { per_seed, mean }
    }
}

/// Ranks codes by their occurrence count over every visit of the training
/// patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBaseline {
    pub counts: Vec<f64>,
}

impl FrequencyBaseline {
    pub fn fit(train: &Dataset) -> Self {
        let mut counts = vec![0.0; train.num_codes()];
        for r in &train.records {
            for v in &r.visits {
                for &c in &v.codes {
                    counts[c] += 1.0;
                }
            }
        }
        Self { counts }
    }

    pub fn evaluate(&self, ds: &Dataset) -> Result<RankingReport> {
        ranking_report(ds, |_| Ok(self.counts.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub fraction: f64,
    pub masked_occurrences: usize,
    pub recall_at_20: f64,
    pub ndcg_at_20: f64,
    /// Percentage drop relative to the unmasked row.
    pub recall_at_20_drop_pct: f64,
    pub ndcg_at_20_drop_pct: f64,
    /// Masked occurrences found in some extracted phenotype of the same patient.
    pub recovered: usize,
    pub recovered_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

fn drop_pct(base: f64, v: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        100.0 * (base - v) / base
    }
}

/// Masks each fraction of input occurrences and re-evaluates. An unmasked
/// row (fraction 0) is always first.
pub fn robustness_experiment(model: &ShyModel, test: &Dataset, fractions: &[f64], seed: u64) -> Result<RobustnessTable> {
    let mut all = vec![0.0];
    all.extend(fractions.iter().copied().filter(|&f| f != 0.0));
    let mut rows: Vec<RobustnessRow> = Vec::with_capacity(all.len());
    for f in all {
        let (masked, ledger) = mask_diagnoses(test, f, seed)?;
        let explanations: Vec<Explanation> = masked.records.par_iter().map(|r| model.explain(r)).collect::<Result<_>>()?;
        let ranking_rows: Vec<Option<[f64; 4]>> = explanations
            .iter()
            .zip(&masked.records)
            .map(|(e, r)| ranking_row(&e.scores, r))
            .collect();
        let ranking = ranking_from_rows(&ranking_rows);
        let by_patient: HashMap<&str, &Explanation> = masked
            .records
            .iter()
            .map(|r| r.patient_id.as_str())
            .zip(&explanations)
            .collect();
        let recovered = ledger
            .entries
            .iter()
            .filter(|entry| {
                let (Some(e), Some(code)) = (by_patient.get(entry.patient_id.as_str()), masked.code_index(&entry.code)) else {
                    return false;
                };
                let cell = Cell::new(code, entry.visit_index);
                e.phenotypes.phenotypes.iter().any(|p| p.binary_search(&cell).is_ok())
            })
            .count();
        let (base_r, base_n) = rows
            .first()
            .map_or((ranking.recall_at_20, ranking.ndcg_at_20), |b| (b.recall_at_20, b.ndcg_at_20));
        rows.push(RobustnessRow {
            fraction: f,
            masked_occurrences: ledger.len(),
            recall_at_20: ranking.recall_at_20,
            ndcg_at_20: ranking.ndcg_at_20,
            recall_at_20_drop_pct: drop_pct(base_r, ranking.recall_at_20),
            ndcg_at_20_drop_pct: drop_pct(base_n, ranking.ndcg_at_20),
            recovered,
            recovered_rate: if ledger.is_empty() { 0.0 } else { recovered as f64 / ledger.len() as f64 },
        });
    }
    Ok(RobustnessTable { rows })
}

/// Writes any serialisable value as one pretty JSON document.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
