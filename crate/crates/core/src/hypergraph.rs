//! Per-patient hypergraph (codes as nodes, visits as hyperedges) and the
//! UniGIN message-passing stack that personalises code embeddings.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, SparseMat, Var};
use crate::ehr::PatientRecord;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

pub const LEAKY_SLOPE: f64 = 0.01;

/// One incidence-matrix entry. Orders by visit, then code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub visit: usize,
    pub code: usize,
}

impl Cell {
    pub fn new(code: usize, visit: usize) -> Self {
        Self { visit, code }
    }
}

/// Binary incidence matrix `P` of size `|C| x T`, stored as its sorted
/// nonzero cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientHypergraph {
    pub num_codes: usize,
    pub num_visits: usize,
    cells: Vec<Cell>,
}

impl PatientHypergraph {
    pub fn from_cells(num_codes: usize, num_visits: usize, mut cells: Vec<Cell>) -> Result<Self> {
        cells.sort_unstable();
        cells.dedup();
        for c in &cells {
            if c.code >= num_codes {
                return Err(Error::CodeOutOfRange {
                    index: c.code,
                    size: num_codes,
                });
            }
            if c.visit >= num_visits {
                return Err(Error::Shape(format!(
                    "visit {} outside a {num_visits}-visit hypergraph",
                    c.visit
                )));
            }
        }
        Ok(Self {
            num_codes,
            num_visits,
            cells,
        })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn nnz(&self) -> usize {
        self.cells.len()
    }

    pub fn contains(&self, code: usize, visit: usize) -> bool {
        self.cells.binary_search(&Cell::new(code, visit)).is_ok()
    }

    /// Codes in visit `j`, ascending.
    pub fn members(&self, visit: usize) -> impl Iterator<Item = usize> + '_ {
        let lo = self.cells.partition_point(|c| c.visit < visit);
        let hi = self.cells.partition_point(|c| c.visit <= visit);
        self.cells[lo..hi].iter().map(|c| c.code)
    }

    pub fn visit_size(&self, visit: usize) -> usize {
        self.members(visit).count()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut p = Array2::zeros((self.num_codes, self.num_visits));
        for c in &self.cells {
            p[[c.code, c.visit]] = 1.0;
        }
        p
    }

    /// `|C| x T` incidence as a sparse constant.
    pub fn incidence(&self) -> SparseMat {
        SparseMat::new(
            self.num_codes,
            self.num_visits,
            self.cells.iter().map(|c| (c.code, c.visit, 1.0)).collect(),
        )
    }

    /// `T x |C|` row-normalised transpose: row `j` averages the members of
    /// visit `j`. Empty visits give an all-zero row.
    pub fn visit_mean(&self) -> SparseMat {
        let mut sizes = vec![0usize; self.num_visits];
        for c in &self.cells {
            sizes[c.visit] += 1;
        }
        SparseMat::new(
            self.num_visits,
            self.num_codes,
            self.cells
                .iter()
                .map(|c| (c.visit, c.code, 1.0 / sizes[c.visit] as f64))
                .collect(),
        )
    }
}

/// Builds `P` from the input visits (all but the last) of a record.
pub fn build_incidence(record: &PatientRecord, num_codes: usize) -> Result<PatientHypergraph> {
    let inputs = record.inputs();
    let cells = inputs
        .iter()
        .enumerate()
        .flat_map(|(j, v)| v.codes.iter().map(move |&i| Cell::new(i, j)))
        .collect();
    PatientHypergraph::from_cells(num_codes, inputs.len(), cells)
}

/// Visit embeddings: each row is the mean of its member codes' rows.
pub fn visit_aggregate(g: &mut Graph, p: &PatientHypergraph, m: Var) -> Var {
    g.sparse_matmul(Arc::new(p.visit_mean()), m)
}

/// One UniGIN layer: `M' = LeakyReLU(((1 + eps) M + P V) W)`, `V` the visit
/// means of `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniGinLayer {
    /// `d_in x d_out`.
    pub weight: ParamId,
    /// `1 x 1`, initialised to zero.
    pub eps: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniGinStack {
    pub layers: Vec<UniGinLayer>,
}

impl UniGinStack {
    /// `widths` lists the output width of each layer.
    pub fn init<R: rand::Rng>(store: &mut ParamStore, input_dim: usize, widths: &[usize], rng: &mut R) -> Self {
        let mut d_in = input_dim;
        let layers = widths
            .iter()
            .enumerate()
            .map(|(z, &d_out)| {
                let bound = 1.0 / (d_in as f64).sqrt();
                let weight = store.add_uniform(format!("unigin.{z}.weight"), (d_in, d_out), bound, rng);
                let eps = store.add_zeros(format!("unigin.{z}.eps"), (1, 1));
                d_in = d_out;
                UniGinLayer { weight, eps }
            })
            .collect();
        Self { layers }
    }
}

/// Sparse operators for one patient, built once and shared by all layers.
#[derive(Debug, Clone)]
pub struct HypergraphOps {
    pub incidence: Arc<SparseMat>,
    pub visit_mean: Arc<SparseMat>,
}

impl HypergraphOps {
    pub fn new(p: &PatientHypergraph) -> Self {
        Self {
            incidence: Arc::new(p.incidence()),
            visit_mean: Arc::new(p.visit_mean()),
        }
    }
}

pub fn unigin_layer(g: &mut Graph, store: &ParamStore, layer: UniGinLayer, ops: &HypergraphOps, m: Var) -> Var {
    let v = g.sparse_matmul(ops.visit_mean.clone(), m);
    let agg = g.sparse_matmul(ops.incidence.clone(), v);
    let eps = g.param(store, layer.eps);
    let one_plus = g.add_const(eps, 1.0);
    let own = g.mul_scalar(m, one_plus);
    let h = g.add(own, agg);
    let w = g.param(store, layer.weight);
    let hw = g.matmul(h, w);
    g.leaky_relu(hw, LEAKY_SLOPE)
}

/// Runs every layer of the stack and returns the personalised table `M^(Z)`.
pub fn message_passing(
    g: &mut Graph,
    store: &ParamStore,
    stack: &UniGinStack,
    p: &PatientHypergraph,
    m0: Var,
) -> Var {
    let ops = HypergraphOps::new(p);
    stack
        .layers
        .iter()
        .fold(m0, |m, &layer| unigin_layer(g, store, layer, &ops, m))
}
