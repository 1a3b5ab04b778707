//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation evaluates eagerly and records how to
//! push gradients back to its inputs. Values are always two-dimensional;
//! vectors are `1 x n` rows and scalars are `1 x 1`.
//!
//! The tape is rebuilt per patient. Parameters enter through [`Graph::param`]
//! and their gradients are read back with [`Graph::param_grads`].

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use crate::params::{ParamId, ParamStore};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Constant sparse matrix in coordinate form, used for incidence products.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMat {
    pub rows: usize,
    pub cols: usize,
    /// `(row, col, value)` triplets. Duplicates accumulate.
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMat {
    pub fn new(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>) -> Self {
        debug_assert!(entries.iter().all(|&(r, c, _)| r < rows && c < cols));
        Self { rows, cols, entries }
    }

    /// `self * x`.
    pub fn mul_dense(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.cols, x.nrows(), "sparse product shape mismatch");
        let mut out = Array2::zeros((self.rows, x.ncols()));
        for &(r, c, v) in &self.entries {
            let src = x.row(c);
            let mut dst = out.row_mut(r);
            dst.scaled_add(v, &src);
        }
        out
    }

    /// `self^T * g`.
    pub fn tmul_dense(&self, g: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.rows, g.nrows(), "sparse product shape mismatch");
        let mut out = Array2::zeros((self.cols, g.ncols()));
        for &(r, c, v) in &self.entries {
            let src = g.row(r);
            let mut dst = out.row_mut(c);
            dst.scaled_add(v, &src);
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows, self.cols));
        for &(r, c, v) in &self.entries {
            out[[r, c]] += v;
        }
        out
    }

    pub fn transpose(&self) -> SparseMat {
        SparseMat {
            rows: self.cols,
            cols: self.rows,
            entries: self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Ln(Var),
    Square(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    Transpose(Var),
    SumAll(Var),
    SumRows(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SparseMatMul(Arc<SparseMat>, Var),
    CellWeightedSum {
        weights: Var,
        table: Var,
        cells: Arc<Vec<(usize, usize)>>,
    },
    StraightThrough(Var),
    BceSum(Var, Arc<Array2<f64>>, f64, f64),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradient tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) {
    assert_eq!(a.dim(), b.dim(), "{what}: shape mismatch");
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant_row(&mut self, row: &[f64]) -> Var {
        let value = Array2::from_shape_vec((1, row.len()), row.to_vec()).expect("row shape");
        self.constant(value)
    }

    /// Binds a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "add");
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "sub");
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape(self.value(a), self.value(b), "mul");
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.nrows(), 1, "add_row: bias must be a single row");
        assert_eq!(av.ncols(), rv.ncols(), "add_row: width mismatch");
        let value = av + rv;
        self.push(value, Op::AddRow(a, row))
    }

    /// Adds a `1 x 1` node to every entry of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let value = self.value(a).mapv(|x| x + sv);
        self.push(value, Op::AddScalar(a, s))
    }

    /// Multiplies every entry of `a` by a `1 x 1` node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.scalar(s);
        let value = self.value(a).mapv(|x| x * sv);
        self.push(value, Op::MulScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x + c);
        self.push(value, Op::AddConst(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::ln);
        self.push(value, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        self.push(value, Op::Square(a))
    }

    /// Square root whose gradient is taken as zero where the value is zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0).sqrt());
        self.push(value, Op::Sqrt(a))
    }

    /// Clamps into `[lo, hi]`; gradient is blocked outside the open interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::SumAll(a))
    }

    /// Column sums as a `1 x c` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(value, Op::SumRows(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = self.value(a);
        let mut value = Array2::zeros((idx.len(), src.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            value.row_mut(r).assign(&src.row(i));
        }
        self.push(value, Op::GatherRows(a, idx))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        self.gather_rows(a, vec![r])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut value = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.nrows(), rows, "concat_cols: row mismatch");
            value.slice_mut(s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let cols = self.value(parts[0]).ncols();
        let rows: usize = parts.iter().map(|&p| self.value(p).nrows()).sum();
        let mut value = Array2::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.ncols(), cols, "concat_rows: column mismatch");
            value.slice_mut(s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Constant sparse matrix times a node.
    pub fn sparse_matmul(&mut self, sp: Arc<SparseMat>, x: Var) -> Var {
        let value = sp.mul_dense(self.value(x));
        self.push(value, Op::SparseMatMul(sp, x))
    }

    /// `out[dst] += weights[c] * table[src]` for every cell `c = (src, dst)`.
    ///
    /// `weights` is `n_cells x 1`. The output has `out_rows` rows.
    pub fn cell_weighted_sum(
        &mut self,
        weights: Var,
        table: Var,
        cells: Arc<Vec<(usize, usize)>>,
        out_rows: usize,
    ) -> Var {
        let (w, t) = (self.value(weights), self.value(table));
        assert_eq!(w.dim(), (cells.len(), 1), "cell_weighted_sum: weight shape");
        let mut value = Array2::zeros((out_rows, t.ncols()));
        for (c, &(src, dst)) in cells.iter().enumerate() {
            let wc = w[[c, 0]];
            value.row_mut(dst).scaled_add(wc, &t.row(src));
        }
        self.push(value, Op::CellWeightedSum { weights, table, cells })
    }

    /// Node whose forward value is `forward` but whose gradient passes
    /// unchanged to `soft`.
    pub fn straight_through(&mut self, soft: Var, forward: Array2<f64>) -> Var {
        same_shape(self.value(soft), &forward, "straight_through");
        self.push(forward, Op::StraightThrough(soft))
    }

    /// Summed binary cross-entropy `-sum(y ln p + (1 - y) ln(1 - p))` with
    /// `p` clamped into `[lo, hi]`.
    pub fn bce_sum(&mut self, pred: Var, target: Arc<Array2<f64>>, lo: f64, hi: f64) -> Var {
        let p = self.value(pred);
        same_shape(p, &target, "bce_sum");
        let mut total = 0.0;
        for (&pv, &y) in p.iter().zip(target.iter()) {
            let pc = pv.clamp(lo, hi);
            total -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        }
        self.push(Array2::from_elem((1, 1), total), Op::BceSum(pred, target, lo, hi))
    }

    /// Backpropagates from a scalar output with the given seed gradient.
    /// Returns the gradient of every node (`None` for unreachable nodes).
    pub fn backward(&self, output: Var, seed: f64) -> Vec<Option<Array2<f64>>> {
        assert_eq!(self.value(output).dim(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array2::from_elem((1, 1), seed));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, &g * self.value(*b));
                    accumulate(&mut grads, *b, &g * self.value(*a));
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::AddScalar(a, sc) => {
                    accumulate(&mut grads, *sc, Array2::from_elem((1, 1), g.sum()));
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::MulScalar(a, sc) => {
                    let sv = self.scalar(*sc);
                    let gs = (&g * self.value(*a)).sum();
                    accumulate(&mut grads, *sc, Array2::from_elem((1, 1), gs));
                    accumulate(&mut grads, *a, g.mapv(|x| x * sv));
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.mapv(|x| x * c)),
                Op::AddConst(a) => accumulate(&mut grads, *a, g.clone()),
                Op::LeakyRelu(a, slope) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        if x <= 0.0 {
                            *gv *= slope
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(&node.value, |gv, &y| *gv *= y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(&node.value, |gv, &y| *gv *= 1.0 - y * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Ln(a) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(self.value(*a), |gv, &x| *gv /= x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(self.value(*a), |gv, &x| *gv *= 2.0 * x);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sqrt(a) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(&node.value, |gv, &y| {
                        *gv = if y > 0.0 { *gv * 0.5 / y } else { 0.0 }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        if x < *lo || x > *hi {
                            *gv = 0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.dim());
                    for ((mut out, yr), gr) in ga.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                        let dot = yr.dot(&gr);
                        for ((o, &yv), &gv) in out.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::SumAll(a) => {
                    let gv = g[[0, 0]];
                    accumulate(&mut grads, *a, Array2::from_elem(self.value(*a).dim(), gv));
                }
                Op::SumRows(a) => {
                    let rows = self.value(*a).nrows();
                    let ga = g.broadcast((rows, g.ncols())).expect("broadcast").to_owned();
                    accumulate(&mut grads, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (r, &i) in idx.iter().enumerate() {
                        let mut dst = ga.row_mut(i);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(&mut grads, p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        accumulate(&mut grads, p, g.slice(s![at..at + h, ..]).to_owned());
                        at += h;
                    }
                }
                Op::SparseMatMul(sp, x) => accumulate(&mut grads, *x, sp.tmul_dense(&g)),
                Op::CellWeightedSum { weights, table, cells } => {
                    let w = self.value(*weights);
                    let t = self.value(*table);
                    let mut gw = Array2::zeros(w.dim());
                    let mut gt = Array2::zeros(t.dim());
                    for (c, &(src, dst)) in cells.iter().enumerate() {
                        gw[[c, 0]] = g.row(dst).dot(&t.row(src));
                        gt.row_mut(src).scaled_add(w[[c, 0]], &g.row(dst));
                    }
                    accumulate(&mut grads, *weights, gw);
                    accumulate(&mut grads, *table, gt);
                }
                Op::StraightThrough(soft) => accumulate(&mut grads, *soft, g.clone()),
                Op::BceSum(pred, target, lo, hi) => {
                    let gv = g[[0, 0]];
                    let p = self.value(*pred);
                    let mut gp = Array2::zeros(p.dim());
                    for ((o, &pv), &y) in gp.iter_mut().zip(p.iter()).zip(target.iter()) {
                        if pv > *lo && pv < *hi {
                            *o = -gv * (y / pv - (1.0 - y) / (1.0 - pv));
                        }
                    }
                    accumulate(&mut grads, *pred, gp);
                }
            }
            grads[idx] = Some(g);
        }
        grads
    }

    /// Gradients of every bound parameter after backpropagating from `output`.
    pub fn param_grads(&self, output: Var, seed: f64) -> Vec<(ParamId, Array2<f64>)> {
        let grads = self.backward(output, seed);
        let mut out: Vec<(ParamId, Array2<f64>)> = self
            .params
            .iter()
            .map(|(&id, &v)| {
                let g = grads[v.0]
                    .clone()
                    .unwrap_or_else(|| Array2::zeros(self.value(v).dim()));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check(build: impl Fn(&mut Graph, Var) -> Var, x0: Array2<f64>) {
        let mut g = Graph::new();
        let x = g.constant(x0.clone());
        let out = build(&mut g, x);
        let grads = g.backward(out, 1.0);
        let analytic = grads[x.0].clone().unwrap_or_else(|| Array2::zeros(x0.dim()));
        let h = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.as_slice_mut().unwrap()[i] += delta;
                let mut g = Graph::new();
                let x = g.constant(xp);
                let out = build(&mut g, x);
                g.scalar(out)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.as_slice().unwrap()[i];
            assert!(
                (a - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "entry {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let x0 = array![[0.3, -0.7, 1.2], [0.5, 0.9, -0.2]];
        fd_check(
            |g, x| {
                let a = g.sigmoid(x);
                let b = g.tanh(x);
                let c = g.mul(a, b);
                let d = g.leaky_relu(x, 0.01);
                let e = g.square(d);
                let f = g.add(c, e);
                let sm = g.softmax_rows(f);
                let l = g.ln(sm);
                g.sum_all(l)
            },
            x0,
        );
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let x0 = array![[0.3, -0.7], [0.5, 0.9], [1.1, -0.4]];
        fd_check(
            |g, x| {
                let w = g.constant(array![[0.2, -0.1, 0.4], [0.3, 0.5, -0.6]]);
                let y = g.matmul(x, w);
                let t = g.transpose(y);
                let rows = g.gather_rows(x, vec![2, 0, 2]);
                let cat = g.concat_cols(&[rows, t]);
                let s = g.sum_rows(cat);
                let sq = g.square(s);
                let tot = g.sum_all(sq);
                let root = g.sqrt(tot);
                let sc = g.row(x, 1);
                let sc = g.sum_all(sc);
                g.mul_scalar(root, sc)
            },
            x0,
        );
    }

    #[test]
    fn sparse_and_cell_ops_match_finite_differences() {
        let x0 = array![[0.3, -0.7], [0.5, 0.9], [1.1, -0.4]];
        let sp = Arc::new(SparseMat::new(2, 3, vec![(0, 0, 0.5), (0, 2, 0.5), (1, 1, 1.0)]));
        let cells = Arc::new(vec![(0, 1), (2, 1), (1, 0)]);
        fd_check(
            move |g, x| {
                let v = g.sparse_matmul(sp.clone(), x);
                let col = g.gather_rows(x, vec![0, 1, 2]);
                let col = g.transpose(col);
                let col = g.gather_rows(col, vec![0]);
                let weights = g.transpose(col);
                let agg = g.cell_weighted_sum(weights, x, cells.clone(), 2);
                let both = g.mul(v, agg);
                let bias = g.constant(array![[0.1, 0.2]]);
                let both = g.add_row(both, bias);
                let shift = g.constant(array![[0.05]]);
                let both = g.add_scalar(both, shift);
                let both = g.add_const(both, -0.1);
                let target = Arc::new(array![[1.0, 0.0], [0.0, 1.0]]);
                let p = g.sigmoid(both);
                g.bce_sum(p, target, 1e-7, 1.0 - 1e-7)
            },
            x0,
        );
    }

    #[test]
    fn clamp_blocks_gradient_outside_range() {
        let mut g = Graph::new();
        let x = g.constant(array![[-2.0, 0.5, 3.0]]);
        let c = g.clamp(x, 0.0, 1.0);
        let s = g.sum_all(c);
        let grads = g.backward(s, 1.0);
        assert_eq!(grads[x.0].as_ref().unwrap(), &array![[0.0, 1.0, 0.0]]);
    }

    #[test]
    fn straight_through_passes_gradient_to_soft_path() {
        let mut g = Graph::new();
        let x = g.constant(array![[0.2, 0.8]]);
        let soft = g.scale(x, 3.0);
        let hard = g.straight_through(soft, array![[0.0, 1.0]]);
        assert_eq!(g.value(hard), &array![[0.0, 1.0]]);
        let s = g.sum_all(hard);
        let grads = g.backward(s, 1.0);
        assert_eq!(grads[x.0].as_ref().unwrap(), &array![[3.0, 3.0]]);
    }

    #[test]
    fn sqrt_at_zero_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.constant(array![[0.0]]);
        let r = g.sqrt(x);
        let grads = g.backward(r, 1.0);
        assert_eq!(grads[x.0].as_ref().unwrap()[[0, 0]], 0.0);
    }
}
