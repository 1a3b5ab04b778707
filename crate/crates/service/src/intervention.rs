//! Opening sessions and committing edit batches. Edits go through the
//! phenotype bottleneck only; parameters are never touched.

use chrono::Utc;
use hyperpheno_core::ehr::Dataset;
use hyperpheno_core::phenotype::PhenotypeSet;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::payload::{phenotype_payloads, prediction, PhenotypePayload, Prediction};
use crate::session::{apply_edits, Edit, EditAction, InterventionSession, PredictionDiff, Revision, SessionHeader, SessionStore};
use crate::state::ModelHandle;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub k: usize,
    pub code: String,
    pub visit_index: usize,
    pub action: EditAction,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterveneRequest {
    /// Continue this session; a new one is opened when absent.
    pub session_id: Option<String>,
    pub author: Option<String>,
    pub edits: Vec<EditRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterveneResponse {
    pub session_id: String,
    pub patient_id: String,
    pub revision: usize,
    pub prediction: Prediction,
    pub diff: PredictionDiff,
    pub phenotypes: Vec<PhenotypePayload>,
}

/// Builds revision 0 from the deterministic explanation.
pub fn new_session(
    handle: &ModelHandle,
    ds: &Dataset,
    session_id: String,
    patient_id: &str,
    top_k: usize,
) -> Result<InterventionSession, ServiceError> {
    let record = ds
        .record(patient_id)
        .map_err(|_| ServiceError::UnknownPatient(patient_id.to_string()))?;
    let e = handle.model.explain(record)?;
    let now = Utc::now();
    let p = prediction(&handle.model, e.scores, e.alpha, top_k);
    Ok(InterventionSession {
        header: SessionHeader {
            session_id,
            patient_id: patient_id.to_string(),
            created_at: now,
            num_codes: e.phenotypes.num_codes,
            num_visits: e.phenotypes.num_visits,
            model_checksum: handle.checksum.clone(),
            augmented: e.augmented,
            base: e.phenotypes.phenotypes.clone(),
        },
        revisions: vec![Revision {
            revision: 0,
            created_at: now,
            edits: Vec::new(),
            phenotypes: e.phenotypes.phenotypes,
            diff: PredictionDiff::between(&p, &p),
            prediction: p,
        }],
    })
}

fn resolve_edits(handle: &ModelHandle, ds: &Dataset, req: &InterveneRequest) -> Result<Vec<Edit>, ServiceError> {
    let author = req.author.clone().unwrap_or_else(|| "anonymous".to_string());
    let timestamp = Utc::now();
    req.edits
        .iter()
        .enumerate()
        .map(|(index, e)| {
            let code_index = ds.code_index(&e.code).ok_or_else(|| ServiceError::InvalidEdit {
                index,
                message: format!("code {:?} is not in the vocabulary", e.code),
            })?;
            Ok(Edit {
                k: e.k,
                code: handle.model.vocabulary[code_index].clone(),
                code_index,
                visit_index: e.visit_index,
                action: e.action,
                author: author.clone(),
                timestamp,
            })
        })
        .collect()
}

/// Validates the whole batch, re-predicts through the bottleneck and
/// persists the next revision. Nothing is written if any edit is invalid.
pub fn intervene(
    handle: &ModelHandle,
    ds: &Dataset,
    store: &SessionStore,
    patient_id: &str,
    req: &InterveneRequest,
    top_k: usize,
) -> Result<InterveneResponse, ServiceError> {
    let record = ds
        .record(patient_id)
        .map_err(|_| ServiceError::UnknownPatient(patient_id.to_string()))?;
    let edits = resolve_edits(handle, ds, req)?;

    let session_id = match &req.session_id {
        Some(id) => id.clone(),
        None => {
            let s = new_session(handle, ds, store.new_id(), patient_id, top_k)?;
            // Validate before creating the file so a rejected first batch
            // leaves no session behind.
            apply_edits(&s.header.base, &edits, s.header.num_codes, s.header.num_visits)?;
            store.save(&s)?;
            s.header.session_id
        }
    };
    let lock = store.lock(&session_id);
    let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
    let session = store.load(&session_id)?;
    let h = &session.header;
    if h.patient_id != patient_id {
        return Err(ServiceError::SessionPatientMismatch {
            session: session_id,
            expected: h.patient_id.clone(),
            got: patient_id.to_string(),
        });
    }
    if h.model_checksum != handle.checksum {
        return Err(ServiceError::ModelChanged(session_id));
    }
    let previous = session.latest();
    let phenotypes = apply_edits(&previous.phenotypes, &edits, h.num_codes, h.num_visits)?;

    let personalized = handle.model.explain(record)?.personalized;
    let set = PhenotypeSet::new(h.num_codes, h.num_visits, phenotypes.clone())?;
    let (scores, alpha) = handle.model.predict_from_phenotypes(&set, &personalized)?;
    let p = prediction(&handle.model, scores, alpha, top_k);
    let rev = Revision {
        revision: session.revisions.len(),
        created_at: Utc::now(),
        edits,
        diff: PredictionDiff::between(&previous.prediction, &p),
        phenotypes,
        prediction: p,
    };
    store.append(&session_id, &rev)?;
    Ok(InterveneResponse {
        phenotypes: phenotype_payloads(&handle.model, &rev.phenotypes, &rev.prediction.alpha, &h.augmented),
        session_id,
        patient_id: patient_id.to_string(),
        revision: rev.revision,
        prediction: rev.prediction,
        diff: rev.diff,
    })
}
