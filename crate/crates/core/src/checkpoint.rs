//! Checkpoints: a named-tensor archive (`model.safetensors`, f64
//! little-endian) plus a JSON manifest describing dimensions, vocabulary
//! and provenance seeds.

use std::path::Path;

use ndarray::Array2;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ShyModel};

pub const FORMAT_VERSION: u32 = 1;
pub const TENSORS_FILE: &str = "model.safetensors";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub num_codes: usize,
    pub levels: usize,
    pub code_dim: usize,
    pub personalized_dim: usize,
    pub hidden: usize,
    pub similarity_heads: usize,
    pub attention_heads: usize,
    pub attention_key_dim: usize,
    pub attention_value_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dims: Dims,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "Z")]
    pub z: usize,
    /// Seeds the parameters were trained with.
    pub seeds: Vec<u64>,
    pub config: ModelConfig,
    pub vocabulary: Vec<String>,
    /// SHA-256 over parameter names, shapes and values.
    pub param_checksum: String,
}

impl Manifest {
    pub fn describe(model: &ShyModel, seeds: Vec<u64>) -> Self {
        let c = &model.config;
        let levels = model.tree.depth();
        Self {
            format_version: FORMAT_VERSION,
            dims: Dims {
                num_codes: model.num_codes(),
                levels,
                code_dim: c.code_dim,
                personalized_dim: c.personalized_dim(levels),
                hidden: c.hidden,
                similarity_heads: c.similarity_heads,
                attention_heads: c.attention_heads,
                attention_key_dim: c.attention_key_dim,
                attention_value_dim: c.attention_value_dim,
            },
            k: c.num_phenotypes,
            z: c.unigin_widths.len(),
            seeds,
            config: c.clone(),
            vocabulary: model.vocabulary.clone(),
            param_checksum: model.store.checksum(),
        }
    }
}

fn to_bytes(a: &Array2<f64>) -> Vec<u8> {
    a.iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// Writes both files into `dir`, creating it if needed.
pub fn save_checkpoint(model: &ShyModel, seeds: Vec<u64>, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let store = &model.store;
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = store
        .ids()
        .map(|id| {
            let v = store.value(id);
            (store.name(id).to_string(), vec![v.nrows(), v.ncols()], to_bytes(v))
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize_to_file(views, None, &dir.join(TENSORS_FILE))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let manifest = Manifest::describe(model, seeds);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

/// Rebuilds the model from `dir` and verifies the parameter checksum.
pub fn load_checkpoint(dir: &Path) -> Result<(ShyModel, Manifest)> {
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let mut model = ShyModel::new(manifest.config.clone(), manifest.vocabulary.clone(), manifest.dims.levels, 0)?;
    let bytes = std::fs::read(dir.join(TENSORS_FILE))?;
    let archive = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if archive.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "archive has {} tensors, model expects {}",
            archive.len(),
            model.store.len()
        )));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.name(id).to_string();
        let t = archive
            .tensor(&name)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        let expect = model.store.value(id).dim();
        if t.dtype() != Dtype::F64 || t.shape() != [expect.0, expect.1] {
            return Err(Error::Checkpoint(format!(
                "{name}: expected f64 {:?}, found {:?} {:?}",
                expect,
                t.dtype(),
                t.shape()
            )));
        }
        let values: Vec<f64> = t
            .data()
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        *model.store.value_mut(id) =
            Array2::from_shape_vec(expect, values).map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    let checksum = model.store.checksum();
    if checksum != manifest.param_checksum {
        return Err(Error::Checkpoint(format!(
            "parameter checksum {checksum} does not match manifest {}",
            manifest.param_checksum
        )));
    }
    Ok((model, manifest))
}
