//! Training objectives: next-visit prediction, reconstruction fidelity,
//! phenotype distinctness and importance-weight diversity.
//!
//! The `*_term` functions build per-patient terms on the tape. The `loss_*`
//! functions evaluate the same terms on plain arrays, averaged over patients.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::hypergraph::Cell;

/// Predictions are clamped into `[PRED_CLAMP, 1 - PRED_CLAMP]` inside BCE.
pub const PRED_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the reconstruction term.
    pub fidelity: f64,
    /// Weight of the distinctness term.
    pub distinct: f64,
    /// Weight of the importance-diversity term.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            fidelity: 0.1,
            distinct: 0.01,
            alpha: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("fidelity", self.fidelity), ("distinct", self.distinct), ("alpha", self.alpha)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("loss weight {name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }

    /// Warns when the diversity term is active but constant (`K = 1`).
    pub fn check_phenotype_count(&self, k: usize) {
        if k == 1 && self.alpha > 0.0 {
            log::warn!("importance-diversity term is constant with a single phenotype; its weight has no effect");
        }
    }
}

/// Batch-mean values of each term and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub pred: f64,
    pub fidelity: f64,
    pub distinct: f64,
    pub alpha: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.pred, self.fidelity, self.distinct, self.alpha, self.total]
            .iter()
            .all(|x| x.is_finite())
    }

    pub fn accumulate(&mut self, other: &LossReport) {
        self.pred += other.pred;
        self.fidelity += other.fidelity;
        self.distinct += other.distinct;
        self.alpha += other.alpha;
        self.total += other.total;
    }

    pub fn scaled(&self, c: f64) -> LossReport {
        LossReport {
            pred: self.pred * c,
            fidelity: self.fidelity * c,
            distinct: self.distinct * c,
            alpha: self.alpha * c,
            total: self.total * c,
        }
    }
}

/// Summed BCE between the `1 x |C|` prediction and the multi-hot label.
pub fn pred_term(g: &mut Graph, scores: Var, label: Arc<Array2<f64>>) -> Var {
    g.bce_sum(scores, label, PRED_CLAMP, 1.0 - PRED_CLAMP)
}

/// Mean BCE between `P̂` and the `T x |C|` visit matrix.
pub fn fidelity_term(g: &mut Graph, recon: Var, visits: Arc<Array2<f64>>) -> Var {
    let n = visits.len().max(1) as f64;
    let s = g.bce_sum(recon, visits, PRED_CLAMP, 1.0 - PRED_CLAMP);
    g.scale(s, 1.0 / n)
}

/// `(1/T) Σ_j ||I_K - B_jᵀ B_j||_F`, `B_j` the mask values of visit `j`'s
/// support cells (rows) across the K heads (columns).
pub fn distinct_term(g: &mut Graph, masks: &[Var], support: &[Cell], num_visits: usize) -> Var {
    let k = masks.len();
    let eye = g.constant(Array2::eye(k));
    let stacked = g.concat_cols(masks);
    let mut total: Option<Var> = None;
    let mut empty = 0usize;
    for j in 0..num_visits {
        let rows: Vec<usize> = support
            .iter()
            .enumerate()
            .filter(|(_, c)| c.visit == j)
            .map(|(r, _)| r)
            .collect();
        if rows.is_empty() {
            empty += 1;
            continue;
        }
        let b = g.gather_rows(stacked, rows);
        let bt = g.transpose(b);
        let gram = g.matmul(bt, b);
        let d = g.sub(eye, gram);
        let sq = g.square(d);
        let s = g.sum_all(sq);
        let f = g.sqrt(s);
        total = Some(match total {
            Some(t) => g.add(t, f),
            None => f,
        });
    }
    // visits with no support contribute ||I_K||_F = sqrt(K)
    let constant = empty as f64 * (k as f64).sqrt();
    let sum = match total {
        Some(t) => g.add_const(t, constant),
        None => g.constant(Array2::from_elem((1, 1), constant)),
    };
    g.scale(sum, 1.0 / num_visits.max(1) as f64)
}

/// `-(std(α) - ||α||_2)` with the population standard deviation.
pub fn alpha_term(g: &mut Graph, alpha: Var) -> Var {
    let k = g.value(alpha).len() as f64;
    let total = g.sum_all(alpha);
    let neg_mean = g.scale(total, -1.0 / k);
    let centred = g.add_scalar(alpha, neg_mean);
    let sq = g.square(centred);
    let ss = g.sum_all(sq);
    let var = g.scale(ss, 1.0 / k);
    let std = g.sqrt(var);
    let a2 = g.square(alpha);
    let a2 = g.sum_all(a2);
    let norm = g.sqrt(a2);
    g.sub(norm, std)
}

/// Per-patient term nodes.
#[derive(Debug, Clone, Copy)]
pub struct PatientLoss {
    pub pred: Var,
    pub fidelity: Var,
    pub distinct: Var,
    pub alpha: Var,
    pub total: Var,
}

impl PatientLoss {
    pub fn combine(g: &mut Graph, pred: Var, fidelity: Var, distinct: Var, alpha: Var, w: &LossWeights) -> Self {
        let f = g.scale(fidelity, w.fidelity);
        let d = g.scale(distinct, w.distinct);
        let a = g.scale(alpha, w.alpha);
        let t = g.add(pred, f);
        let t = g.add(t, d);
        let total = g.add(t, a);
        Self {
            pred,
            fidelity,
            distinct,
            alpha,
            total,
        }
    }

    pub fn report(&self, g: &Graph) -> LossReport {
        LossReport {
            pred: g.scalar(self.pred),
            fidelity: g.scalar(self.fidelity),
            distinct: g.scalar(self.distinct),
            alpha: g.scalar(self.alpha),
            total: g.scalar(self.total),
        }
    }
}

fn batch_mean<T>(items: &[T], f: impl Fn(&T) -> Result<f64>) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut total = 0.0;
    for it in items {
        total += f(it)?;
    }
    Ok(total / items.len() as f64)
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape")
}

/// Batch mean of summed next-visit BCE. Each pair is (prediction, label).
pub fn loss_pred(batch: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    batch_mean(batch, |(p, y)| {
        if p.len() != y.len() {
            return Err(Error::Shape(format!("prediction {} vs label {}", p.len(), y.len())));
        }
        let mut g = Graph::new();
        let pv = g.constant(row(p));
        let t = pred_term(&mut g, pv, Arc::new(row(y)));
        Ok(g.scalar(t))
    })
}

/// Batch mean of the reconstruction term. Each pair is (`P̂`, visits), both `T x |C|`.
pub fn loss_fidelity(batch: &[(Array2<f64>, Array2<f64>)]) -> Result<f64> {
    batch_mean(batch, |(r, v)| {
        if r.dim() != v.dim() {
            return Err(Error::Shape(format!("reconstruction {:?} vs visits {:?}", r.dim(), v.dim())));
        }
        let mut g = Graph::new();
        let rv = g.constant(r.clone());
        let t = fidelity_term(&mut g, rv, Arc::new(v.clone()));
        Ok(g.scalar(t))
    })
}

/// Batch mean of the distinctness term. Each item holds K dense `|C| x T`
/// masks that are zero outside the augmented support.
pub fn loss_distinct(batch: &[Vec<Array2<f64>>]) -> Result<f64> {
    batch_mean(batch, |masks| {
        let (nc, t) = masks.first().map(|m| m.dim()).ok_or_else(|| Error::Shape("no masks".into()))?;
        if masks.iter().any(|m| m.dim() != (nc, t)) {
            return Err(Error::Shape("masks differ in shape".into()));
        }
        let support: Vec<Cell> = (0..t).flat_map(|j| (0..nc).map(move |i| Cell::new(i, j))).collect();
        let mut g = Graph::new();
        let vars: Vec<Var> = masks
            .iter()
            .map(|m| {
                let col = Array2::from_shape_fn((support.len(), 1), |(r, _)| m[[support[r].code, support[r].visit]]);
                g.constant(col)
            })
            .collect();
        let d = distinct_term(&mut g, &vars, &support, t);
        Ok(g.scalar(d))
    })
}

/// Batch mean of the importance-diversity term.
pub fn loss_alpha(batch: &[Vec<f64>]) -> Result<f64> {
    batch_mean(batch, |a| {
        if a.is_empty() {
            return Err(Error::Shape("empty importance vector".into()));
        }
        let mut g = Graph::new();
        let av = g.constant(row(a));
        let t = alpha_term(&mut g, av);
        Ok(g.scalar(t))
    })
}

/// Weighted sum of batch-mean terms.
pub fn total_loss(pred: f64, fidelity: f64, distinct: f64, alpha: f64, w: &LossWeights) -> LossReport {
    LossReport {
        pred,
        fidelity,
        distinct,
        alpha,
        total: pred + w.fidelity * fidelity + w.distinct * distinct + w.alpha * alpha,
    }
}
