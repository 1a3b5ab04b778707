//! Single-parent ICD-9 hierarchy with virtual padding down to the leaf level.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::icd9::Icd9;
use crate::error::{Error, Result};

/// Default number of hierarchy levels.
pub const DEFAULT_LEVELS: usize = 4;

/// Levels are ordered root first. Node ids are positions within a level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyTree {
    /// Node labels per level.
    pub levels: Vec<Vec<String>>,
    /// `parent[l][node]` is the node's index at level `l - 1`; `parent[0]` is empty.
    pub parent: Vec<Vec<usize>>,
    /// Code index to leaf node id at the deepest level.
    pub leaf_of: Vec<usize>,
}

impl OntologyTree {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    /// Node ids on the path from the root level to the code's leaf.
    pub fn path(&self, code_index: usize) -> Result<Vec<usize>> {
        let leaf = *self
            .leaf_of
            .get(code_index)
            .ok_or(Error::UnmappedCode { index: code_index })?;
        let depth = self.depth();
        let mut path = vec![0; depth];
        path[depth - 1] = leaf;
        for l in (1..depth).rev() {
            path[l - 1] = self.parent[l][path[l]];
        }
        Ok(path)
    }
}

/// Builds the hierarchy for `vocabulary` with `levels` levels (1 to 4).
///
/// The four-level grammar is chapter, 3-character category, 4-character
/// subcategory, full code. With fewer levels the deepest ones are kept.
pub fn build_ontology(vocabulary: &[String], levels: usize) -> Result<OntologyTree> {
    if !(1..=DEFAULT_LEVELS).contains(&levels) {
        return Err(Error::InvalidConfig(format!(
            "ontology depth must be between 1 and {DEFAULT_LEVELS}, got {levels}"
        )));
    }
    let mut bad = Vec::new();
    let mut paths = Vec::with_capacity(vocabulary.len());
    for code in vocabulary {
        match Icd9::parse(code) {
            Some(parsed) => paths.push(parsed.full_path()),
            None => bad.push(code.clone()),
        }
    }
    if !bad.is_empty() {
        return Err(Error::InvalidCodes(bad));
    }

    let skip = DEFAULT_LEVELS - levels;
    // label -> (node id, parent label)
    let mut index: Vec<BTreeMap<String, Option<String>>> = vec![BTreeMap::new(); levels];
    for path in &paths {
        for l in 0..levels {
            let label = path[skip + l].clone();
            let parent = (l > 0).then(|| path[skip + l - 1].clone());
            index[l].entry(label).or_insert(parent);
        }
    }
    let level_labels: Vec<Vec<String>> =
        index.iter().map(|m| m.keys().cloned().collect()).collect();
    let position = |l: usize, label: &str| -> usize {
        level_labels[l]
            .binary_search_by(|x| x.as_str().cmp(label))
            .expect("label registered")
    };
    let mut parent = vec![Vec::new(); levels];
    for l in 1..levels {
        parent[l] = index[l]
            .values()
            .map(|p| position(l - 1, p.as_deref().expect("non-root has parent")))
            .collect();
    }
    let leaf_of = paths
        .iter()
        .map(|p| position(levels - 1, &p[DEFAULT_LEVELS - 1]))
        .collect();
    Ok(OntologyTree {
        levels: level_labels,
        parent,
        leaf_of,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn codes(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn siblings_share_subcategory() {
        let tree = build_ontology(&codes(&["518.81", "518.83"]), 4).unwrap();
        let a = tree.path(0).unwrap();
        let b = tree.path(1).unwrap();
        assert_eq!(a[..3], b[..3]);
        assert_ne!(a[3], b[3]);
        assert_eq!(tree.levels[2][a[2]], "518.8");
    }

    #[test]
    fn non_leaf_code_gets_virtual_child() {
        let tree = build_ontology(&codes(&["518.8"]), 4).unwrap();
        assert_eq!(tree.level_sizes(), vec![1, 1, 1, 1]);
        assert_eq!(tree.levels[3][0], "518.8*");
    }

    #[test]
    fn invalid_codes_are_listed() {
        let err = build_ontology(&codes(&["518.81", "bogus", "12"]), 4).unwrap_err();
        match err {
            Error::InvalidCodes(list) => assert_eq!(list, codes(&["bogus", "12"])),
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Brute force: derive each level's parent by truncating the ICD-9 string.
    fn prefix_parent(label: &str, level: usize) -> String {
        let label = label.trim_end_matches('*');
        match level {
            3 => match label.split_once('.') {
                Some((cat, d)) if d.len() >= 2 || cat.starts_with('E') => {
                    format!("{}.{}", cat, &d[..1])
                }
                Some(_) => label.to_string(),
                None => format!("{label}*"),
            },
            2 => label.split('.').next().unwrap().to_string(),
            1 => {
                if label.starts_with('V') {
                    "V01-V91".into()
                } else if label.starts_with('E') {
                    "E000-E999".into()
                } else {
                    let n: u32 = label.parse().unwrap();
                    let bounds = [
                        139, 239, 279, 289, 319, 389, 459, 519, 579, 629, 679, 709, 739, 759, 779,
                        799, 999,
                    ];
                    let hi = *bounds.iter().find(|&&b| n <= b).unwrap();
                    let lo = [0u32]
                        .iter()
                        .chain(bounds.iter())
                        .take_while(|&&b| b < hi)
                        .last()
                        .map(|b| b + 1)
                        .unwrap();
                    format!("{:03}-{:03}", lo.max(1), hi)
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn parent_map_matches_prefix_truncation() {
        let vocab = codes(&[
            "518.81", "518.83", "518.8", "486", "428.0", "427.31", "401.9", "250.00", "250.01",
            "584.9", "599.0", "V45.81", "V58.61", "E880.9", "E849", "038.9", "285.1", "571.5",
            "572.2", "255.4",
        ]);
        let tree = build_ontology(&vocab, 4).unwrap();
        let mut expected: HashMap<(usize, String), String> = HashMap::new();
        for code in &vocab {
            let leaf = Icd9::parse(code).unwrap().full_path()[3].clone();
            let sub = prefix_parent(&leaf, 3);
            // leaf "518.8*" truncates to "518.8"; "486**" to "486*"
            let sub = if leaf.ends_with("**") {
                leaf.trim_end_matches('*').to_string() + "*"
            } else if leaf.ends_with('*') {
                leaf.trim_end_matches('*').to_string()
            } else {
                sub
            };
            let cat = prefix_parent(&sub, 2);
            let chap = prefix_parent(&cat, 1);
            expected.insert((3, leaf), sub.clone());
            expected.insert((2, sub), cat.clone());
            expected.insert((1, cat), chap);
        }
        let mut actual = HashMap::new();
        for l in 1..4 {
            for (node, label) in tree.levels[l].iter().enumerate() {
                let p = &tree.levels[l - 1][tree.parent[l][node]];
                actual.insert((l, label.clone()), p.clone());
            }
        }
        assert_eq!(actual, expected);
    }

    #[test]
    fn every_leaf_path_has_exactly_depth_nodes() {
        let vocab = codes(&["518.81", "486", "V45.81", "E880.9"]);
        for depth in 1..=4 {
            let tree = build_ontology(&vocab, depth).unwrap();
            for i in 0..vocab.len() {
                assert_eq!(tree.path(i).unwrap().len(), depth);
            }
            assert_eq!(tree.parent[0].len(), 0);
            for l in 1..depth {
                assert_eq!(tree.parent[l].len(), tree.levels[l].len());
            }
        }
    }

    #[test]
    fn rejects_unsupported_depth() {
        assert!(build_ontology(&codes(&["486"]), 0).is_err());
        assert!(build_ontology(&codes(&["486"]), 5).is_err());
    }
}
