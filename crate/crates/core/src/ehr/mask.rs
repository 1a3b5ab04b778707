//! Random removal of input diagnoses for robustness experiments.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::types::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskEntry {
    pub patient_id: String,
    pub visit_index: usize,
    pub code: String,
}

/// Every removed `(patient, visit, code)` occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskLedger {
    pub entries: Vec<MaskEntry>,
}

impl MaskLedger {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One JSON object per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (n, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
                path: path.to_path_buf(),
                line: n as u64 + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self { entries })
    }
}

/// Removes `round(fraction * pool)` occurrences drawn uniformly from the pool
/// of input-visit diagnoses. Label visits are never touched; visits that lose
/// every code stay in place, empty and flagged.
pub fn mask_diagnoses(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, MaskLedger)> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::BadFraction(fraction));
    }
    let pool: Vec<(usize, usize, usize)> = ds
        .records
        .iter()
        .enumerate()
        .flat_map(|(p, r)| {
            r.inputs()
                .iter()
                .enumerate()
                .flat_map(move |(j, v)| v.codes.iter().map(move |&c| (p, j, c)))
        })
        .collect();
    let k = (fraction * pool.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
    chosen.sort_unstable();

    let mut records = ds.records.clone();
    let mut entries = Vec::with_capacity(k);
    for &i in &chosen {
        let (p, j, c) = pool[i];
        let visit = &mut records[p].visits[j];
        visit.codes.retain(|&x| x != c);
        if visit.codes.is_empty() {
            visit.emptied = true;
        }
        entries.push(MaskEntry {
            patient_id: records[p].patient_id.clone(),
            visit_index: j,
            code: ds.code_str(c).to_string(),
        });
    }
    Ok((ds.with_records(records), MaskLedger { entries }))
}
