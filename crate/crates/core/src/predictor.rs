//! Phenotype-based prediction: each phenotype is read as a sequence of
//! visit vectors by a GRU with location attention, multi-head self-attention
//! weighs the phenotypes, and the prediction is the importance-weighted mix
//! of per-phenotype distributions. A second GRU decodes the phenotype
//! embeddings back into the visit matrix.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::hypergraph::Cell;
use crate::params::{ParamId, ParamStore};
use crate::phenotype::PhenotypeSet;

/// Single-layer GRU:
/// `r = σ(x W_ir + h W_hr + b_r)`, `z = σ(x W_iz + h W_hz + b_z)`,
/// `n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))`, `h' = (1 - z) ⊙ n + z ⊙ h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    pub w_ir: ParamId,
    pub w_iz: ParamId,
    pub w_in: ParamId,
    pub w_hr: ParamId,
    pub w_hz: ParamId,
    pub w_hn: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_in: ParamId,
    pub b_hn: ParamId,
    pub hidden: usize,
}

impl Gru {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let b = 1.0 / (hidden as f64).sqrt();
        let mut p = |name: &str, shape| store.add_uniform(format!("{prefix}.{name}"), shape, b, rng);
        Self {
            w_ir: p("w_ir", (input, hidden)),
            w_iz: p("w_iz", (input, hidden)),
            w_in: p("w_in", (input, hidden)),
            w_hr: p("w_hr", (hidden, hidden)),
            w_hz: p("w_hz", (hidden, hidden)),
            w_hn: p("w_hn", (hidden, hidden)),
            b_r: p("b_r", (1, hidden)),
            b_z: p("b_z", (1, hidden)),
            b_in: p("b_in", (1, hidden)),
            b_hn: p("b_hn", (1, hidden)),
            hidden,
        }
    }

    /// Runs over the rows of `inputs` (`T x in`) from a zero state and
    /// returns all hidden states stacked (`T x hidden`).
    pub fn run(&self, g: &mut Graph, store: &ParamStore, inputs: Var) -> Var {
        let t = g.value(inputs).nrows();
        let w_ir = g.param(store, self.w_ir);
        let w_iz = g.param(store, self.w_iz);
        let w_in = g.param(store, self.w_in);
        let w_hr = g.param(store, self.w_hr);
        let w_hz = g.param(store, self.w_hz);
        let w_hn = g.param(store, self.w_hn);
        let b_r = g.param(store, self.b_r);
        let b_z = g.param(store, self.b_z);
        let b_in = g.param(store, self.b_in);
        let b_hn = g.param(store, self.b_hn);
        let xr = g.matmul(inputs, w_ir);
        let xr = g.add_row(xr, b_r);
        let xz = g.matmul(inputs, w_iz);
        let xz = g.add_row(xz, b_z);
        let xn = g.matmul(inputs, w_in);
        let xn = g.add_row(xn, b_in);
        let mut h = g.constant(Array2::zeros((1, self.hidden)));
        let mut states = Vec::with_capacity(t);
        for step in 0..t {
            let hr = g.matmul(h, w_hr);
            let xr_t = g.row(xr, step);
            let r = g.add(xr_t, hr);
            let r = g.sigmoid(r);
            let hz = g.matmul(h, w_hz);
            let xz_t = g.row(xz, step);
            let z = g.add(xz_t, hz);
            let z = g.sigmoid(z);
            let hn = g.matmul(h, w_hn);
            let hn = g.add(hn, b_hn);
            let gated = g.mul(r, hn);
            let xn_t = g.row(xn, step);
            let n = g.add(xn_t, gated);
            let n = g.tanh(n);
            // h' = n + z ⊙ (h - n)
            let diff = g.sub(h, n);
            let zd = g.mul(z, diff);
            h = g.add(n, zd);
            states.push(h);
        }
        g.concat_rows(&states)
    }
}

/// Sequential reader for one phenotype.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhenotypeEncoder {
    pub gru: Gru,
    /// Location attention `w2ᵀ tanh(W1 h + b1)`.
    pub att_w1: ParamId,
    pub att_b1: ParamId,
    pub att_w2: ParamId,
}

impl PhenotypeEncoder {
    pub fn init<R: Rng>(store: &mut ParamStore, input: usize, hidden: usize, rng: &mut R) -> Self {
        let gru = Gru::init(store, "encoder.gru", input, hidden, rng);
        let b = 1.0 / (hidden as f64).sqrt();
        Self {
            gru,
            att_w1: store.add_uniform("encoder.att.w1", (hidden, hidden), b, rng),
            att_b1: store.add_uniform("encoder.att.b1", (1, hidden), b, rng),
            att_w2: store.add_uniform("encoder.att.w2", (hidden, 1), b, rng),
        }
    }

    /// Location-attention weights over the rows of `h` (`1 x T`).
    pub fn location_attention(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Var {
        let w1 = g.param(store, self.att_w1);
        let b1 = g.param(store, self.att_b1);
        let w2 = g.param(store, self.att_w2);
        let a = g.matmul(h, w1);
        let a = g.add_row(a, b1);
        let a = g.tanh(a);
        let e = g.matmul(a, w2);
        let e = g.transpose(e);
        g.softmax_rows(e)
    }

    /// Embedding `u_k` (`1 x hidden`) of the phenotype whose cells carry
    /// the given weights. `weights = None` means unit weight per cell.
    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        codes: Var,
        cells: &[Cell],
        weights: Option<Var>,
        num_visits: usize,
    ) -> Var {
        let w = weights.unwrap_or_else(|| g.constant(Array2::ones((cells.len(), 1))));
        let visits = g.cell_weighted_sum(w, codes, PhenotypeSet::kernel_cells(cells), num_visits);
        let h = self.gru.run(g, store, visits);
        let alpha = self.location_attention(g, store, h);
        g.matmul(alpha, h)
    }
}

/// Multi-head self-attention over the K phenotype embeddings producing the
/// importance weights `α` (`1 x K`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhenotypeAttention {
    /// `(W_Q, W_K, W_V)` per head.
    pub heads: Vec<(ParamId, ParamId, ParamId)>,
    /// `(n_h d_V) x 1`.
    pub w_out: ParamId,
    pub key_dim: usize,
}

impl PhenotypeAttention {
    pub fn init<R: Rng>(store: &mut ParamStore, hidden: usize, n_heads: usize, key_dim: usize, value_dim: usize, rng: &mut R) -> Self {
        let b = 1.0 / (hidden as f64).sqrt();
        let heads = (0..n_heads)
            .map(|h| {
                (
                    store.add_uniform(format!("attention.{h}.w_q"), (hidden, key_dim), b, rng),
                    store.add_uniform(format!("attention.{h}.w_k"), (hidden, key_dim), b, rng),
                    store.add_uniform(format!("attention.{h}.w_v"), (hidden, value_dim), b, rng),
                )
            })
            .collect();
        let bo = 1.0 / ((n_heads * value_dim) as f64).sqrt();
        Self {
            heads,
            w_out: store.add_uniform("attention.w_out", (n_heads * value_dim, 1), bo, rng),
            key_dim,
        }
    }

    /// `u` is `K x hidden`.
    pub fn attend(&self, g: &mut Graph, store: &ParamStore, u: Var) -> Var {
        let scale = 1.0 / (self.key_dim as f64).sqrt();
        let outs: Vec<Var> = self
            .heads
            .iter()
            .map(|&(wq, wk, wv)| {
                let wq = g.param(store, wq);
                let wk = g.param(store, wk);
                let wv = g.param(store, wv);
                let q = g.matmul(u, wq);
                let k = g.matmul(u, wk);
                let v = g.matmul(u, wv);
                let kt = g.transpose(k);
                let s = g.matmul(q, kt);
                let s = g.scale(s, scale);
                let a = g.softmax_rows(s);
                g.matmul(a, v)
            })
            .collect();
        let cat = g.concat_cols(&outs);
        let w_out = g.param(store, self.w_out);
        let logits = g.matmul(cat, w_out);
        let logits = g.transpose(logits);
        g.softmax_rows(logits)
    }
}

/// `ŷ = α · softmax_rows(U W + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionHead {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl PredictionHead {
    pub fn init<R: Rng>(store: &mut ParamStore, hidden: usize, num_codes: usize, rng: &mut R) -> Self {
        let b = 1.0 / (hidden as f64).sqrt();
        Self {
            weight: store.add_uniform("predict.weight", (hidden, num_codes), b, rng),
            bias: store.add_uniform("predict.bias", (1, num_codes), b, rng),
        }
    }

    /// `u` is `K x hidden`, `alpha` is `1 x K`. Returns `1 x |C|`.
    pub fn predict(&self, g: &mut Graph, store: &ParamStore, u: Var, alpha: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let logits = g.matmul(u, w);
        let logits = g.add_row(logits, b);
        let dist = g.softmax_rows(logits);
        g.matmul(alpha, dist)
    }
}

/// GRU decoder from the concatenated phenotype embeddings to `P̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconstructionDecoder {
    pub gru: Gru,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ReconstructionDecoder {
    pub fn init<R: Rng>(store: &mut ParamStore, input: usize, hidden: usize, num_codes: usize, rng: &mut R) -> Self {
        let gru = Gru::init(store, "decoder.gru", input, hidden, rng);
        let b = 1.0 / (hidden as f64).sqrt();
        Self {
            gru,
            weight: store.add_uniform("decoder.weight", (hidden, num_codes), b, rng),
            bias: store.add_uniform("decoder.bias", (1, num_codes), b, rng),
        }
    }

    /// `u_cat` is `1 x (K hidden)`. Returns `T x |C|` probabilities.
    pub fn reconstruct(&self, g: &mut Graph, store: &ParamStore, u_cat: Var, num_visits: usize) -> Var {
        let rows = vec![u_cat; num_visits];
        let inputs = g.concat_rows(&rows);
        let h = self.gru.run(g, store, inputs);
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let out = g.matmul(h, w);
        let out = g.add_row(out, b);
        g.sigmoid(out)
    }
}
