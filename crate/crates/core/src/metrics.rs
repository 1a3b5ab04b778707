//! Ranking and explanation-quality metrics.
//!
//! Rankings sort by score descending and break ties by code index
//! ascending.

use serde::{Deserialize, Serialize};

use crate::phenotype::PhenotypeSet;

/// Code indices ordered best first.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// First `k` entries of [`rank`].
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut r = rank(scores);
    r.truncate(k);
    r
}

/// `|top_k ∩ y| / |y|`; `None` when `y` is empty.
pub fn recall_at_k(scores: &[f64], positives: &[usize], k: usize) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let hits = top_k(scores, k).iter().filter(|c| positives.contains(c)).count();
    Some(hits as f64 / positives.len() as f64)
}

/// Binary-relevance nDCG with gain 1 and discount `1/log2(rank + 1)`;
/// `None` when `y` is empty.
pub fn ndcg_at_k(scores: &[f64], positives: &[usize], k: usize) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let dcg: f64 = top_k(scores, k)
        .iter()
        .enumerate()
        .filter(|(_, c)| positives.contains(c))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..k.min(positives.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    Some(dcg / ideal)
}

/// Sample Pearson correlation; `None` if either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// How the change in prediction after removing a phenotype is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeMeasure {
    #[default]
    L1,
    L2,
}

impl ChangeMeasure {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let it = a.iter().zip(b).map(|(x, y)| x - y);
        match self {
            ChangeMeasure::L1 => it.map(f64::abs).sum(),
            ChangeMeasure::L2 => it.map(|d| d * d).sum::<f64>().sqrt(),
        }
    }
}

/// Mean over patients of the total number of active cells.
pub fn complexity(sets: &[PhenotypeSet]) -> f64 {
    if sets.is_empty() {
        return 0.0;
    }
    sets.iter().map(|s| s.total_cells() as f64).sum::<f64>() / sets.len() as f64
}

/// `nnz(Σ_k Ψ^k) / L1(Σ_k Ψ^k)` for one patient; `None` if all empty.
pub fn patient_distinctness(set: &PhenotypeSet) -> Option<f64> {
    let total = set.total_cells();
    if total == 0 {
        return None;
    }
    let mut cells: Vec<_> = set.phenotypes.iter().flatten().collect();
    cells.sort_unstable();
    cells.dedup();
    Some(cells.len() as f64 / total as f64)
}

/// Mean distinctness over patients with at least one active cell, and the
/// number of patients skipped.
pub fn distinctness(sets: &[PhenotypeSet]) -> (Option<f64>, usize) {
    let values: Vec<f64> = sets.iter().filter_map(patient_distinctness).collect();
    let skipped = sets.len() - values.len();
    if values.is_empty() {
        return (None, skipped);
    }
    (Some(values.iter().sum::<f64>() / values.len() as f64), skipped)
}

#[cfg(test)]
// oracles index explicitly to mirror the definitions
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::hypergraph::Cell;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tie_break_by_index() {
        assert_eq!(rank(&[0.5, 0.9, 0.5, 0.9]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn recall_extremes() {
        let s = [0.9, 0.8, 0.1, 0.0];
        assert_eq!(recall_at_k(&s, &[0, 1], 2), Some(1.0));
        assert_eq!(recall_at_k(&s, &[2, 3], 2), Some(0.0));
        assert_eq!(recall_at_k(&s, &[], 2), None);
    }

    #[test]
    fn ndcg_closed_forms() {
        let s = [0.9, 0.8, 0.1];
        assert!((ndcg_at_k(&s, &[0, 1], 2).unwrap() - 1.0).abs() < 1e-15);
        let v = ndcg_at_k(&s, &[1], 2).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn recall_and_ndcg_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..300 {
            let n = 20;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64).collect();
            let mut codes: Vec<usize> = (0..n).collect();
            codes.shuffle(&mut rng);
            let y: Vec<usize> = codes[..rng.gen_range(1..8)].to_vec();
            let k = rng.gen_range(1..=n);
            // oracle: position of each code = number of codes that beat it
            let pos = |c: usize| (0..n).filter(|&o| scores[o] > scores[c] || (scores[o] == scores[c] && o < c)).count();
            let hits = y.iter().filter(|&&c| pos(c) < k).count();
            assert_eq!(recall_at_k(&scores, &y, k).unwrap(), hits as f64 / y.len() as f64);
            let dcg: f64 = y.iter().filter(|&&c| pos(c) < k).map(|&c| 1.0 / ((pos(c) + 2) as f64).log2()).sum();
            let idcg: f64 = (0..k.min(y.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
            assert!((ndcg_at_k(&scores, &y, k).unwrap() - dcg / idcg).abs() < 1e-12);
        }
    }

    #[test]
    fn pearson_cases() {
        let a = [0.1, 0.2, 0.3, 0.15, 0.25];
        let up: Vec<f64> = a.iter().map(|x| 3.0 * x + 1.0).collect();
        let down: Vec<f64> = a.iter().map(|x| -2.0 * x).collect();
        assert!((pearson(&a, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &down).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &[1.0; 5]), None);
        // textbook value
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 4.0, 5.0, 4.0, 5.0];
        assert!((pearson(&x, &y).unwrap() - 0.7745966692414834).abs() < 1e-12);
    }

    #[test]
    fn pearson_affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen()).collect();
            let y: Vec<f64> = (0..5).map(|_| rng.gen()).collect();
            let (s, b) = (rng.gen_range(0.1..10.0), rng.gen_range(-5.0..5.0));
            let y2: Vec<f64> = y.iter().map(|v| s * v + b).collect();
            assert!((pearson(&x, &y).unwrap() - pearson(&x, &y2).unwrap()).abs() < 1e-9);
        }
    }

    fn set(ph: Vec<Vec<(usize, usize)>>) -> PhenotypeSet {
        let ph = ph.into_iter().map(|v| v.into_iter().map(|(i, j)| Cell::new(i, j)).collect()).collect();
        PhenotypeSet::new(5, 3, ph).unwrap()
    }

    #[test]
    fn complexity_and_distinctness_cases() {
        assert_eq!(complexity(&[set(vec![vec![], vec![]])]), 0.0);
        let disjoint = set(vec![vec![(0, 0)], vec![(1, 0), (2, 1)]]);
        let same = set(vec![vec![(0, 0), (1, 2)]; 3]);
        assert_eq!(complexity(&[disjoint.clone(), same.clone()]), (3.0 + 6.0) / 2.0);
        assert_eq!(patient_distinctness(&disjoint), Some(1.0));
        assert!((patient_distinctness(&same).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let (d, skipped) = distinctness(&[disjoint, set(vec![vec![], vec![]])]);
        assert_eq!((d, skipped), (Some(1.0), 1));
    }

    #[test]
    fn distinctness_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let mut dense = [[[0u8; 3]; 5]; 3];
            let ph: Vec<Vec<(usize, usize)>> = (0..3)
                .map(|k| {
                    let mut v = vec![];
                    for i in 0..5 {
                        for j in 0..3 {
                            if rng.gen_bool(0.3) {
                                dense[k][i][j] = 1;
                                v.push((i, j));
                            }
                        }
                    }
                    v
                })
                .collect();
            let mut nnz = 0;
            let mut l1 = 0;
            for i in 0..5 {
                for j in 0..3 {
                    let s: u32 = (0..3).map(|k| dense[k][i][j] as u32).sum();
                    l1 += s;
                    nnz += (s > 0) as u32;
                }
            }
            let got = patient_distinctness(&set(ph));
            if l1 == 0 {
                assert_eq!(got, None);
            } else {
                assert_eq!(got, Some(nnz as f64 / l1 as f64));
            }
        }
    }
}
