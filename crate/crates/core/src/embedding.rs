//! Ontology-aware code embeddings: one learnable table per hierarchy level,
//! a code's vector being the root-to-leaf concatenation of its ancestors' rows.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::ehr::OntologyTree;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct LevelTables {
    /// Table `l` has one row per level-`l` node and `dim` columns.
    pub tables: Vec<ParamId>,
    pub dim: usize,
    /// `ancestors[l][code]` is the code's node id at level `l`.
    ancestors: Vec<Vec<usize>>,
}

impl LevelTables {
    /// Rows drawn uniformly from `[-1/sqrt(dim), 1/sqrt(dim)]`.
    pub fn init<R: rand::Rng>(
        store: &mut ParamStore,
        tree: &OntologyTree,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let tables = tree
            .level_sizes()
            .iter()
            .enumerate()
            .map(|(l, &n)| store.add_uniform(format!("embedding.level{l}"), (n, dim), bound, rng))
            .collect();
        Self::bind(tables, tree, dim)
    }

    /// Reattaches existing tables (e.g. from a checkpoint) to a tree.
    pub fn bind(tables: Vec<ParamId>, tree: &OntologyTree, dim: usize) -> Result<Self> {
        let depth = tree.depth();
        let mut ancestors = vec![Vec::with_capacity(tree.leaf_of.len()); depth];
        for code in 0..tree.leaf_of.len() {
            for (l, node) in tree.path(code)?.into_iter().enumerate() {
                ancestors[l].push(node);
            }
        }
        Ok(Self {
            tables,
            dim,
            ancestors,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.dim * self.tables.len()
    }

    pub fn num_codes(&self) -> usize {
        self.ancestors.first().map_or(0, Vec::len)
    }

    /// Full `|C| x (L * dim)` table on the tape.
    pub fn code_table(&self, g: &mut Graph, store: &ParamStore) -> Var {
        let parts: Vec<Var> = self
            .tables
            .iter()
            .zip(&self.ancestors)
            .map(|(&table, idx)| {
                let t = g.param(store, table);
                g.gather_rows(t, idx.clone())
            })
            .collect();
        g.concat_cols(&parts)
    }

    /// Value of the full table.
    pub fn code_table_value(&self, store: &ParamStore) -> Array2<f64> {
        let mut g = Graph::new();
        let m = self.code_table(&mut g, store);
        g.value(m).clone()
    }
}

/// Standalone table initialisation with its own store.
pub fn init_level_tables(tree: &OntologyTree, dim: usize, seed: u64) -> Result<(ParamStore, LevelTables)> {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tables = LevelTables::init(&mut store, tree, dim, &mut rng)?;
    Ok((store, tables))
}

/// Concatenated ancestor rows for one code, root level first.
pub fn ontology_embedding(
    store: &ParamStore,
    tables: &LevelTables,
    tree: &OntologyTree,
    code_index: usize,
) -> Result<Vec<f64>> {
    let path = tree.path(code_index)?;
    let mut out = Vec::with_capacity(tables.output_dim());
    for (&table, node) in tables.tables.iter().zip(path) {
        out.extend(store.value(table).row(node).iter().copied());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::build_ontology;

    fn tree(codes: &[&str], depth: usize) -> OntologyTree {
        let v: Vec<String> = codes.iter().map(|s| s.to_string()).collect();
        build_ontology(&v, depth).unwrap()
    }

    const TWENTY: [&str; 20] = [
        "518.81", "518.83", "518.8", "486", "428.0", "427.31", "401.9", "250.00", "250.01",
        "584.9", "599.0", "V45.81", "V58.61", "E880.9", "E849", "038.9", "285.1", "571.5",
        "572.2", "255.4",
    ];

    #[test]
    fn shapes_follow_level_sizes() {
        let t = tree(&TWENTY, 4);
        let (store, tables) = init_level_tables(&t, 8, 1).unwrap();
        assert_eq!(tables.tables.len(), 4);
        for (l, &id) in tables.tables.iter().enumerate() {
            assert_eq!(store.value(id).dim(), (t.levels[l].len(), 8));
        }
        assert_eq!(tables.output_dim(), 32);
    }

    #[test]
    fn same_seed_same_tables() {
        let t = tree(&TWENTY, 4);
        assert_eq!(init_level_tables(&t, 8, 5).unwrap().0, init_level_tables(&t, 8, 5).unwrap().0);
        assert_ne!(init_level_tables(&t, 8, 5).unwrap().0, init_level_tables(&t, 8, 6).unwrap().0);
    }

    #[test]
    fn initializer_mean_within_three_sigma() {
        // U(-b, b) has mean 0 and variance b^2 / 3
        let codes: Vec<String> = (1..=999).map(|c| format!("{c:03}")).collect();
        let t = build_ontology(&codes, 1).unwrap();
        let dim = 4;
        let (store, tables) = init_level_tables(&t, dim, 9).unwrap();
        let values = store.value(tables.tables[0]);
        let b = 1.0 / (dim as f64).sqrt();
        let sigma_row_mean = (b * b / 3.0 / dim as f64).sqrt();
        let rows = values.nrows();
        assert!(rows >= 999);
        let means: Vec<f64> = values.rows().into_iter().map(|r| r.mean().unwrap()).collect();
        let grand = means.iter().sum::<f64>() / rows as f64;
        assert!(grand.abs() < 3.0 * sigma_row_mean / (rows as f64).sqrt());
        assert!(values.iter().all(|x| x.abs() <= b));
    }

    #[test]
    fn single_level_is_the_row_itself() {
        let t = tree(&["486", "401.9"], 1);
        let (store, tables) = init_level_tables(&t, 3, 0).unwrap();
        for code in 0..2 {
            let e = ontology_embedding(&store, &tables, &t, code).unwrap();
            let row = store.value(tables.tables[0]).row(t.leaf_of[code]).to_vec();
            assert_eq!(e, row);
        }
    }

    #[test]
    fn siblings_share_prefix() {
        let t = tree(&["518.81", "518.83"], 4);
        let (store, tables) = init_level_tables(&t, 5, 2).unwrap();
        let a = ontology_embedding(&store, &tables, &t, 0).unwrap();
        let b = ontology_embedding(&store, &tables, &t, 1).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a[..15], b[..15]);
        assert_ne!(a[15..], b[15..]);
    }

    #[test]
    fn hand_built_two_level_tree() {
        // codes 518.81, 518.83 at depth 2: level 0 = {518.8}, level 1 = two leaves
        let t = tree(&["518.81", "518.83"], 2);
        let mut store = ParamStore::new();
        let top = store.add("top", ndarray::array![[1.0, 2.0]]);
        let leaf = store.add("leaf", ndarray::array![[3.0, 4.0], [5.0, 6.0]]);
        let tables = LevelTables::bind(vec![top, leaf], &t, 2).unwrap();
        assert_eq!(ontology_embedding(&store, &tables, &t, 0).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ontology_embedding(&store, &tables, &t, 1).unwrap(), vec![1.0, 2.0, 5.0, 6.0]);
        let full = tables.code_table_value(&store);
        assert_eq!(full, ndarray::array![[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 5.0, 6.0]]);
    }

    #[test]
    fn gradient_touches_only_ancestor_rows() {
        let t = tree(&TWENTY, 4);
        let (store, tables) = init_level_tables(&t, 3, 4).unwrap();
        let code = 7;
        let mut g = Graph::new();
        let m = tables.code_table(&mut g, &store);
        let row = g.row(m, code);
        let sq = g.square(row);
        let loss = g.sum_all(sq);
        let grads = g.param_grads(loss, 1.0);
        let path = t.path(code).unwrap();
        for (l, (id, grad)) in grads.iter().enumerate() {
            assert_eq!(*id, tables.tables[l]);
            for (node, r) in grad.rows().into_iter().enumerate() {
                let nonzero = r.iter().any(|&x| x != 0.0);
                assert_eq!(nonzero, node == path[l], "level {l} node {node}");
            }
        }
    }

    #[test]
    fn unmapped_code_is_an_error() {
        let t = tree(&["486"], 4);
        let (store, tables) = init_level_tables(&t, 2, 0).unwrap();
        assert!(matches!(
            ontology_embedding(&store, &tables, &t, 3),
            Err(Error::UnmappedCode { index: 3 })
        ));
    }
}
