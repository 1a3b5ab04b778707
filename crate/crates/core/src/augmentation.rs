//! Hypergraph augmentation: scores every absent code-visit pair by
//! multi-head weighted cosine similarity and adds the top-scoring pairs as
//! likely false negatives.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::hypergraph::{Cell, PatientHypergraph};
use crate::params::{ParamId, ParamStore};

/// `n_s x d` learnable head weights. Selection is a hard top-k, so these
/// receive no gradient through the augmented structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimilarityHeads {
    pub weights: ParamId,
}

impl SimilarityHeads {
    pub fn init<R: rand::Rng>(store: &mut ParamStore, heads: usize, dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            weights: store.add_uniform("similarity.heads", (heads, dim), bound, rng),
        }
    }
}

fn weighted_cosine(phi: ArrayView1<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for ((&w, &x), &y) in phi.iter().zip(a).zip(b) {
        let (wx, wy) = (w * x, w * y);
        ab += wx * wy;
        aa += wx * wx;
        bb += wy * wy;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// `|C| x T` scores. Pairs present in `P`, and pairs where either weighted
/// vector is zero, score 0.
pub fn similarity_scores(
    phi: &Array2<f64>,
    codes: &Array2<f64>,
    visits: &Array2<f64>,
    p: &PatientHypergraph,
) -> Result<Array2<f64>> {
    let d = phi.ncols();
    if codes.ncols() != d || visits.ncols() != d {
        return Err(Error::Shape(format!(
            "similarity heads have width {d}, embeddings {} and {}",
            codes.ncols(),
            visits.ncols()
        )));
    }
    if codes.nrows() != p.num_codes || visits.nrows() != p.num_visits {
        return Err(Error::Shape("embedding rows do not match the hypergraph".into()));
    }
    let heads = phi.nrows().max(1) as f64;
    let mut s = Array2::zeros((p.num_codes, p.num_visits));
    for j in 0..p.num_visits {
        let v = visits.row(j);
        for i in 0..p.num_codes {
            if p.contains(i, j) {
                continue;
            }
            let total: f64 = phi.rows().into_iter().map(|w| weighted_cosine(w, codes.row(i), v)).sum();
            s[[i, j]] = total / heads;
        }
    }
    Ok(s)
}

/// `P` plus the added pairs `ΔP`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedHypergraph {
    pub base: PatientHypergraph,
    /// Added cells in selection order (highest score first).
    pub added: Vec<Cell>,
    pub ratio: f64,
}

impl AugmentedHypergraph {
    /// Support of `P~ = P + ΔP`, sorted by visit then code.
    pub fn support(&self) -> Vec<Cell> {
        let mut cells: Vec<Cell> = self.base.cells().iter().copied().chain(self.added.iter().copied()).collect();
        cells.sort_unstable();
        cells
    }

    pub fn is_added(&self, cell: Cell) -> bool {
        self.added.contains(&cell)
    }
}

/// Number of pairs to add: `round_half_up(ratio * nnz(P))`, capped by the
/// number of absent pairs.
pub fn augmentation_budget(p: &PatientHypergraph, ratio: f64) -> usize {
    let wanted = (ratio * p.nnz() as f64 + 0.5).floor() as usize;
    let free = p.num_codes * p.num_visits - p.nnz();
    wanted.min(free)
}

/// Selects the top-scoring absent pairs. Ties break by code ascending, then
/// visit ascending.
pub fn supplement(scores: &Array2<f64>, p: &PatientHypergraph, ratio: f64) -> Result<AugmentedHypergraph> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::BadFraction(ratio));
    }
    if scores.dim() != (p.num_codes, p.num_visits) {
        return Err(Error::Shape(format!(
            "score matrix {:?} does not match hypergraph {}x{}",
            scores.dim(),
            p.num_codes,
            p.num_visits
        )));
    }
    let budget = augmentation_budget(p, ratio);
    let mut candidates: Vec<(f64, Cell)> = Vec::with_capacity(p.num_codes * p.num_visits - p.nnz());
    for i in 0..p.num_codes {
        for j in 0..p.num_visits {
            if !p.contains(i, j) {
                candidates.push((scores[[i, j]], Cell::new(i, j)));
            }
        }
    }
    let order = |a: &(f64, Cell), b: &(f64, Cell)| -> Ordering {
        b.0.total_cmp(&a.0)
            .then(a.1.code.cmp(&b.1.code))
            .then(a.1.visit.cmp(&b.1.visit))
    };
    if budget < candidates.len() && budget > 0 {
        candidates.select_nth_unstable_by(budget - 1, order);
    }
    candidates.truncate(budget);
    candidates.sort_by(order);
    Ok(AugmentedHypergraph {
        base: p.clone(),
        added: candidates.into_iter().map(|(_, c)| c).collect(),
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_p(rng: &mut ChaCha8Rng) -> PatientHypergraph {
        let nc = rng.gen_range(2..10);
        let t = rng.gen_range(1..5);
        let mut cells = Vec::new();
        for j in 0..t {
            for i in 0..nc {
                if rng.gen_bool(0.35) {
                    cells.push(Cell::new(i, j));
                }
            }
        }
        PatientHypergraph::from_cells(nc, t, cells).unwrap()
    }

    #[test]
    fn hand_computed_scores() {
        let p = PatientHypergraph::from_cells(2, 1, vec![Cell::new(0, 0)]).unwrap();
        let phi = array![[1.0, 1.0], [1.0, 0.0]];
        let m = array![[1.0, 0.0], [1.0, 1.0]];
        let v = array![[1.0, 0.0]];
        let s = similarity_scores(&phi, &m, &v, &p).unwrap();
        assert_eq!(s[[0, 0]], 0.0);
        let expect = (1.0 / 2f64.sqrt() + 1.0) / 2.0;
        assert!((s[[1, 0]] - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_vectors_score_zero() {
        let p = PatientHypergraph::from_cells(2, 2, vec![]).unwrap();
        let phi = array![[1.0, 0.0]];
        let m = array![[0.0, 3.0], [1.0, 1.0]];
        let v = array![[0.0, 0.0], [2.0, 2.0]];
        let s = similarity_scores(&phi, &m, &v, &p).unwrap();
        assert_eq!(s, array![[0.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = random_p(&mut rng);
            let d = 3;
            let phi = Array2::from_shape_fn((2, d), |_| rng.gen_range(-1.0..1.0));
            let m = Array2::from_shape_fn((p.num_codes, d), |_| rng.gen_range(-1.0..1.0));
            let v = Array2::from_shape_fn((p.num_visits, d), |_| rng.gen_range(-1.0..1.0));
            let a = similarity_scores(&phi, &m, &v, &p).unwrap();
            let b = similarity_scores(&phi, &(&m * 3.7), &(&v * 0.2), &p).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn budget_rounds_half_up_and_caps() {
        let p = PatientHypergraph::from_cells(4, 2, (0..5).map(|k| Cell::new(k % 4, k / 4)).collect()).unwrap();
        assert_eq!(augmentation_budget(&p, 0.1), 1); // 0.5 -> 1
        assert_eq!(augmentation_budget(&p, 0.3), 2); // 1.5 -> 2
        assert_eq!(augmentation_budget(&p, 0.0), 0);
        assert_eq!(augmentation_budget(&p, 1.0), 3); // 5 wanted, 3 free
    }

    #[test]
    fn matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = random_p(&mut rng);
            // coarse scores so ties are common
            let s = Array2::from_shape_fn((p.num_codes, p.num_visits), |_| rng.gen_range(0..4) as f64 / 4.0);
            let ratio = rng.gen_range(0.0..1.0);
            let aug = supplement(&s, &p, ratio).unwrap();
            let mut all = Vec::new();
            for i in 0..p.num_codes {
                for j in 0..p.num_visits {
                    if !p.contains(i, j) {
                        all.push((-s[[i, j]], i, j));
                    }
                }
            }
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = ((ratio * p.nnz() as f64) + 0.5).floor() as usize;
            let expect: Vec<Cell> = all.iter().take(k).map(|&(_, i, j)| Cell::new(i, j)).collect();
            assert_eq!(aug.added, expect);
            for c in &aug.added {
                assert!(!p.contains(c.code, c.visit));
            }
        }
    }

    #[test]
    fn zero_ratio_adds_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_p(&mut rng);
        let s = Array2::ones((p.num_codes, p.num_visits));
        let aug = supplement(&s, &p, 0.0).unwrap();
        assert!(aug.added.is_empty());
        assert_eq!(aug.support(), p.cells());
    }

    #[test]
    fn bad_ratio_rejected() {
        let p = PatientHypergraph::from_cells(1, 1, vec![]).unwrap();
        assert!(matches!(supplement(&Array2::zeros((1, 1)), &p, 1.5), Err(Error::BadFraction(_))));
    }
}
