//! Named-tensor checkpoints as JSON. `f64` values are written with
//! shortest round-trip formatting, so save/load is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
    tensors: Vec<NamedTensor>,
}

const FORMAT: &str = "treehole-tensors-v1";

pub fn to_json(store: &ParamStore) -> Result<String> {
    to_json_with_meta(store, None)
}

/// Like [`to_json`], with an arbitrary JSON value stored next to the tensors.
pub fn to_json_with_meta(store: &ParamStore, meta: Option<serde_json::Value>) -> Result<String> {
    let ckpt = Checkpoint {
        format: FORMAT.to_string(),
        meta,
        tensors: store
            .iter()
            .map(|(_, name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string(&ckpt)?)
}

pub fn from_json(text: &str) -> Result<ParamStore> {
    from_json_with_meta(text).map(|(store, _)| store)
}

pub fn from_json_with_meta(text: &str) -> Result<(ParamStore, Option<serde_json::Value>)> {
    let ckpt: Checkpoint = serde_json::from_str(text)?;
    if ckpt.format != FORMAT {
        return Err(Error::Invalid(format!("unknown checkpoint format {:?}", ckpt.format)));
    }
    let mut store = ParamStore::new();
    for t in ckpt.tensors {
        if store.find(&t.name).is_some() {
            return Err(Error::Invalid(format!("duplicate tensor {:?}", t.name)));
        }
        let tensor = Tensor::from_vec(t.shape[0], t.shape[1], t.data)?;
        store.register(t.name, tensor);
    }
    Ok((store, ckpt.meta))
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(store)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
