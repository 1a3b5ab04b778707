//! Central finite-difference check of analytic gradients of the training
//! loss, per parameter tensor.

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::ehr::PatientRecord;
use crate::error::Result;
use crate::model::{ForwardOptions, ShyModel};
use crate::objectives::LossWeights;
use crate::train::batch_gradients;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `||a - n|| / max(||a||, ||n||)`, or 0 when both norms are below 1e-12.
    pub relative_error: f64,
}

/// Batch-mean total loss without gradients.
pub fn batch_loss(model: &ShyModel, records: &[&PatientRecord], weights: &LossWeights, opts: &ForwardOptions) -> Result<f64> {
    let mut total = 0.0;
    for r in records {
        let mut g = Graph::new();
        let pass = model.forward(&mut g, r, opts)?;
        let loss = model.patient_loss(&mut g, r, &pass, weights);
        total += g.scalar(loss.total);
    }
    Ok(total / records.len() as f64)
}

/// Compares analytic and central-difference gradients for every parameter
/// tensor. Use [`crate::phenotype::ExtractionMode::Relaxed`] so the loss is
/// smooth in every parameter.
pub fn check_gradients(
    model: &ShyModel,
    records: &[&PatientRecord],
    weights: &LossWeights,
    opts: &ForwardOptions,
    step: f64,
) -> Result<Vec<GradCheck>> {
    let (_, analytic, _) = batch_gradients(model, records, weights, opts)?;
    let mut probe = model.clone();
    let ids: Vec<_> = model.store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let a = analytic.get(id);
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for idx in 0..a.len() {
            let (r, c) = (idx / a.ncols(), idx % a.ncols());
            let orig = probe.store.value(id)[[r, c]];
            probe.store.value_mut(id)[[r, c]] = orig + step;
            let plus = batch_loss(&probe, records, weights, opts)?;
            probe.store.value_mut(id)[[r, c]] = orig - step;
            let minus = batch_loss(&probe, records, weights, opts)?;
            probe.store.value_mut(id)[[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let an = a[[r, c]];
            diff2 += (an - numeric).powi(2);
            a2 += an * an;
            n2 += numeric * numeric;
        }
        let (an, nn) = (a2.sqrt(), n2.sqrt());
        let scale = an.max(nn);
        out.push(GradCheck {
            name: model.store.name(id).to_string(),
            analytic_norm: an,
            numeric_norm: nn,
            relative_error: if scale < 1e-12 { 0.0 } else { diff2.sqrt() / scale },
        });
    }
    Ok(out)
}
