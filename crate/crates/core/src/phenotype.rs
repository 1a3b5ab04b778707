//! Temporal phenotype extraction: K independent heads score every cell of
//! the augmented hypergraph, and a binary Gumbel relaxation turns those
//! probabilities into sub-hypergraph masks.

use std::sync::Arc;

use ndarray::Array2;
use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{self, Graph, Var};
use crate::error::{Error, Result};
use crate::hypergraph::{Cell, LEAKY_SLOPE};
use crate::params::{ParamId, ParamStore};

/// Mask probabilities are kept inside `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-6;

/// Two-layer MLP `[M_i ; V_j] -> O_ij`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractorHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl ExtractorHead {
    pub fn init<R: Rng>(store: &mut ParamStore, k: usize, dim: usize, rng: &mut R) -> Self {
        let b_in = 1.0 / ((2 * dim) as f64).sqrt();
        let b_hid = 1.0 / (dim as f64).sqrt();
        Self {
            w1: store.add_uniform(format!("extractor.{k}.w1"), (2 * dim, dim), b_in, rng),
            b1: store.add_uniform(format!("extractor.{k}.b1"), (1, dim), b_in, rng),
            w2: store.add_uniform(format!("extractor.{k}.w2"), (dim, 1), b_hid, rng),
            b2: store.add_uniform(format!("extractor.{k}.b2"), (1, 1), b_hid, rng),
        }
    }
}

/// Gathered `[M_i ; V_j]` rows for a cell list, shared across heads.
pub fn cell_features(g: &mut Graph, m: Var, v: Var, cells: &[Cell]) -> Var {
    let mi = g.gather_rows(m, cells.iter().map(|c| c.code).collect());
    let vj = g.gather_rows(v, cells.iter().map(|c| c.visit).collect());
    g.concat_cols(&[mi, vj])
}

/// `n_cells x 1` probabilities `O^k` on the given cells.
pub fn mask_probabilities(g: &mut Graph, store: &ParamStore, head: ExtractorHead, features: Var) -> Var {
    let w1 = g.param(store, head.w1);
    let b1 = g.param(store, head.b1);
    let w2 = g.param(store, head.w2);
    let b2 = g.param(store, head.b2);
    let h = g.matmul(features, w1);
    let h = g.add_row(h, b1);
    let h = g.leaky_relu(h, LEAKY_SLOPE);
    let o = g.matmul(h, w2);
    let o = g.add_row(o, b2);
    let o = g.sigmoid(o);
    g.clamp(o, PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// How the binary mask is produced from `O`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    /// No noise; `Γ = 1` iff `O > 0.5`. No gradient reaches `O`.
    Deterministic,
    /// Hard sample in the forward pass, relaxed sample's gradient backward.
    Sample,
    /// Relaxed sample in both passes.
    Relaxed,
}

/// Standard Gumbel draw.
pub fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(-u.ln()).ln()
}

/// Relaxed Bernoulli value `sigmoid((logit(o) + noise) / tau)`.
pub fn relaxed_bernoulli(o: f64, noise: f64, tau: f64) -> f64 {
    autodiff::sigmoid(((o / (1.0 - o)).ln() + noise) / tau)
}

/// Independent stream per (seed, patient, head, step).
pub fn noise_rng(seed: u64, patient_id: &str, head: usize, step: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((patient_id.len() as u64).to_le_bytes());
    h.update(patient_id.as_bytes());
    h.update((head as u64).to_le_bytes());
    h.update(step.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Binary mask `Γ` from probabilities `o` (`n x 1`).
pub fn gumbel_binary<R: Rng>(
    g: &mut Graph,
    o: Var,
    tau: f64,
    mode: ExtractionMode,
    rng: &mut R,
) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::BadTemperature(tau));
    }
    if mode == ExtractionMode::Deterministic {
        let hard = g.value(o).mapv(|p| if p > 0.5 { 1.0 } else { 0.0 });
        return Ok(g.constant(hard));
    }
    let n = g.value(o).nrows();
    let noise = Array2::from_shape_fn((n, 1), |_| gumbel(rng) - gumbel(rng));
    // logit(o) = ln o - ln(1 - o)
    let neg = g.scale(o, -1.0);
    let one_minus = g.add_const(neg, 1.0);
    let ln_o = g.ln(o);
    let ln_1mo = g.ln(one_minus);
    let logit = g.sub(ln_o, ln_1mo);
    let noise = g.constant(noise);
    let shifted = g.add(logit, noise);
    let scaled = g.scale(shifted, 1.0 / tau);
    let soft = g.sigmoid(scaled);
    Ok(match mode {
        ExtractionMode::Relaxed => soft,
        _ => {
            let hard = g.value(soft).mapv(|s| if s > 0.5 { 1.0 } else { 0.0 });
            g.straight_through(soft, hard)
        }
    })
}

/// K phenotypes `Ψ^k`, each a sorted list of active cells. This is the
/// whole interface between extraction and prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhenotypeSet {
    pub num_codes: usize,
    pub num_visits: usize,
    pub phenotypes: Vec<Vec<Cell>>,
}

impl PhenotypeSet {
    pub fn new(num_codes: usize, num_visits: usize, mut phenotypes: Vec<Vec<Cell>>) -> Result<Self> {
        for cells in &mut phenotypes {
            cells.sort_unstable();
            cells.dedup();
            if let Some(c) = cells.iter().find(|c| c.code >= num_codes || c.visit >= num_visits) {
                return Err(Error::Shape(format!(
                    "phenotype cell (code {}, visit {}) outside {num_codes}x{num_visits}",
                    c.code, c.visit
                )));
            }
        }
        Ok(Self {
            num_codes,
            num_visits,
            phenotypes,
        })
    }

    pub fn k(&self) -> usize {
        self.phenotypes.len()
    }

    /// Dense `Ψ^k` (`|C| x T`).
    pub fn dense(&self, k: usize) -> Array2<f64> {
        let mut m = Array2::zeros((self.num_codes, self.num_visits));
        for c in &self.phenotypes[k] {
            m[[c.code, c.visit]] = 1.0;
        }
        m
    }

    /// Total active cells over all phenotypes.
    pub fn total_cells(&self) -> usize {
        self.phenotypes.iter().map(Vec::len).sum()
    }

    /// `(code, visit) -> source` cells for the weighted-sum kernel.
    pub fn kernel_cells(cells: &[Cell]) -> Arc<Vec<(usize, usize)>> {
        Arc::new(cells.iter().map(|c| (c.code, c.visit)).collect())
    }
}

/// Result of running every extractor head on one patient.
#[derive(Debug, Clone)]
pub struct Extraction {
    /// Support of `P~`, sorted by visit then code.
    pub support: Vec<Cell>,
    /// `O^k` on the support.
    pub probabilities: Vec<Var>,
    /// `Γ^k` on the support.
    pub masks: Vec<Var>,
}

/// Runs all heads over the support of `P~`.
#[allow(clippy::too_many_arguments)]
pub fn extract_phenotypes(
    g: &mut Graph,
    store: &ParamStore,
    heads: &[ExtractorHead],
    m: Var,
    v: Var,
    support: Vec<Cell>,
    tau: f64,
    mode: ExtractionMode,
    mut rng_for_head: impl FnMut(usize) -> ChaCha8Rng,
) -> Result<Extraction> {
    let features = cell_features(g, m, v, &support);
    let mut probabilities = Vec::with_capacity(heads.len());
    let mut masks = Vec::with_capacity(heads.len());
    for (k, &head) in heads.iter().enumerate() {
        let o = mask_probabilities(g, store, head, features);
        let mut rng = rng_for_head(k);
        masks.push(gumbel_binary(g, o, tau, mode, &mut rng)?);
        probabilities.push(o);
    }
    Ok(Extraction {
        support,
        probabilities,
        masks,
    })
}

/// Active cells per head: support cells whose mask value exceeds 0.5.
pub fn active_cells(g: &Graph, extraction: &Extraction) -> Vec<Vec<Cell>> {
    extraction
        .masks
        .iter()
        .map(|&mask| {
            let values = g.value(mask);
            extraction
                .support
                .iter()
                .zip(values.column(0))
                .filter(|(_, &x)| x > 0.5)
                .map(|(&c, _)| c)
                .collect()
        })
        .collect()
}
