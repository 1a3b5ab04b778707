//! JSON views of records, explanations and predictions. Codes are reported
//! as ICD-9 strings; `code_index` is the vocabulary position.

use chrono::NaiveDateTime;
use hyperpheno_core::ehr::icd9;
use hyperpheno_core::ehr::{Dataset, PatientRecord, Visit};
use hyperpheno_core::hypergraph::Cell;
use hyperpheno_core::metrics::top_k;
use hyperpheno_core::model::{Explanation, ShyModel};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeInfo {
    pub code: String,
    pub code_index: Option<usize>,
    pub description: Option<String>,
    pub chapter: Option<String>,
}

impl CodeInfo {
    pub fn lookup(code: &str, ds: &Dataset) -> Self {
        let parsed = icd9::Icd9::parse(code);
        let canonical = parsed.as_ref().map_or_else(|| code.to_string(), |p| p.canonical());
        Self {
            code_index: ds.code_index(&canonical),
            code: canonical,
            description: icd9::describe(code),
            chapter: parsed.map(|p| p.chapter().to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCode {
    /// 1-based.
    pub rank: usize,
    pub code: String,
    pub code_index: usize,
    pub score: f64,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadCell {
    pub code: String,
    pub code_index: usize,
    pub visit_index: usize,
    pub from_augmentation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenotypePayload {
    pub k: usize,
    pub weight: f64,
    pub cells: Vec<PayloadCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitView {
    pub visit_index: usize,
    pub timestamp: NaiveDateTime,
    pub codes: Vec<CodeInfo>,
}

/// Full record. The final visit is the prediction target and is not seen by
/// the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPayload {
    pub patient_id: String,
    pub visits: Vec<VisitView>,
    pub target: VisitView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub patient_id: String,
    pub input_visits: usize,
    pub occurrences: usize,
    pub distinct_codes: usize,
    pub first_visit: NaiveDateTime,
    pub last_visit: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub top_k: Vec<ScoredCode>,
    pub alpha: Vec<f64>,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationPayload {
    pub patient_id: String,
    pub prediction: Prediction,
    pub phenotypes: Vec<PhenotypePayload>,
    /// Cells added by augmentation, in selection order.
    pub augmented: Vec<PayloadCell>,
    pub record: RecordSummary,
}

fn visit_view(ds: &Dataset, index: usize, v: &Visit) -> VisitView {
    VisitView {
        visit_index: index,
        timestamp: v.timestamp,
        codes: v.codes.iter().map(|&c| CodeInfo::lookup(ds.code_str(c), ds)).collect(),
    }
}

pub fn record_payload(ds: &Dataset, r: &PatientRecord) -> RecordPayload {
    RecordPayload {
        patient_id: r.patient_id.clone(),
        visits: r.inputs().iter().enumerate().map(|(j, v)| visit_view(ds, j, v)).collect(),
        target: visit_view(ds, r.input_len(), r.label()),
    }
}

pub fn record_summary(r: &PatientRecord) -> RecordSummary {
    let inputs = r.inputs();
    let mut codes: Vec<usize> = inputs.iter().flat_map(|v| v.codes.iter().copied()).collect();
    codes.sort_unstable();
    codes.dedup();
    RecordSummary {
        patient_id: r.patient_id.clone(),
        input_visits: inputs.len(),
        occurrences: r.input_occurrences(),
        distinct_codes: codes.len(),
        first_visit: inputs.first().map_or(r.label().timestamp, |v| v.timestamp),
        last_visit: inputs.last().map_or(r.label().timestamp, |v| v.timestamp),
    }
}

pub fn prediction(model: &ShyModel, scores: Vec<f64>, alpha: Vec<f64>, k: usize) -> Prediction {
    let top = top_k(&scores, k)
        .into_iter()
        .enumerate()
        .map(|(r, c)| ScoredCode {
            rank: r + 1,
            code: model.vocabulary[c].clone(),
            code_index: c,
            score: scores[c],
            description: icd9::describe(&model.vocabulary[c]),
        })
        .collect();
    Prediction {
        top_k: top,
        alpha,
        scores,
    }
}

pub fn payload_cell(model: &ShyModel, cell: Cell, augmented: &[Cell]) -> PayloadCell {
    PayloadCell {
        code: model.vocabulary[cell.code].clone(),
        code_index: cell.code,
        visit_index: cell.visit,
        from_augmentation: augmented.contains(&cell),
    }
}

pub fn phenotype_payloads(model: &ShyModel, phenotypes: &[Vec<Cell>], alpha: &[f64], augmented: &[Cell]) -> Vec<PhenotypePayload> {
    phenotypes
        .iter()
        .zip(alpha)
        .enumerate()
        .map(|(k, (cells, &weight))| PhenotypePayload {
            k,
            weight,
            cells: cells.iter().map(|&c| payload_cell(model, c, augmented)).collect(),
        })
        .collect()
}

pub fn explanation_payload(model: &ShyModel, r: &PatientRecord, e: &Explanation, k: usize) -> ExplanationPayload {
    ExplanationPayload {
        patient_id: r.patient_id.clone(),
        phenotypes: phenotype_payloads(model, &e.phenotypes.phenotypes, &e.alpha, &e.augmented),
        augmented: e.augmented.iter().map(|&c| payload_cell(model, c, &e.augmented)).collect(),
        prediction: prediction(model, e.scores.clone(), e.alpha.clone(), k),
        record: record_summary(r),
    }
}

/// Explains one patient of `ds`.
pub fn explain_patient(model: &ShyModel, ds: &Dataset, patient_id: &str, k: usize) -> Result<ExplanationPayload, ServiceError> {
    let r = ds
        .record(patient_id)
        .map_err(|_| ServiceError::UnknownPatient(patient_id.to_string()))?;
    let e = model.explain(r)?;
    Ok(explanation_payload(model, r, &e, k))
}

/// The model and dataset must index codes identically.
pub fn check_vocabulary(model: &ShyModel, ds: &Dataset) -> Result<(), ServiceError> {
    let same = model.vocabulary.len() == ds.vocabulary.len()
        && model.vocabulary.iter().zip(&ds.vocabulary).all(|(a, b)| *a == b.code);
    if same {
        Ok(())
    } else {
        Err(ServiceError::VocabularyMismatch {
            model: model.vocabulary.len(),
            data: ds.vocabulary.len(),
        })
    }
}
