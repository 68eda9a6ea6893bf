//! Checkpoint file: `"VSCK"`, u32 little-endian manifest length, manifest
//! JSON (config, parameter names, shapes, frozen flags), then one "VSTN"
//! tensor per parameter in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::VocSegModel;
use super::ModelError;
use crate::numcore::{read_tensor, write_tensor};

const MAGIC: &[u8; 4] = b"VSCK";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &VocSegModel<f32>) -> Result<(), ModelError> {
    let manifest = CheckpointManifest {
        config: model.config().clone(),
        params: model
            .params
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                frozen: p.frozen,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, p) in model.params.iter() {
        write_tensor(w, &p.value)?;
    }
    Ok(())
}

/// Rebuilds the architecture from the stored config and loads every
/// parameter by name.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<VocSegModel<f32>, ModelError> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let len = u32::from_le_bytes([head[4], head[5], head[6], head[7]]) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let manifest: CheckpointManifest = serde_json::from_slice(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut model = VocSegModel::<f32>::new(manifest.config.clone(), 0)?;
    if manifest.params.len() != model.params.len() {
        return Err(ModelError::Checkpoint(format!(
            "{} stored parameters, architecture has {}",
            manifest.params.len(),
            model.params.len()
        )));
    }
    for entry in &manifest.params {
        let t = read_tensor::<f32, _>(r)?;
        let id = model
            .params
            .id(&entry.name)
            .ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter {}", entry.name)))?;
        let p = model.params.get_mut(id);
        if t.shape() != entry.shape.as_slice() || t.shape() != p.value.shape() {
            return Err(ModelError::Checkpoint(format!("shape mismatch for {}", entry.name)));
        }
        if p.frozen != entry.frozen {
            return Err(ModelError::Checkpoint(format!("frozen flag mismatch for {}", entry.name)));
        }
        p.value = t;
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &VocSegModel<f32>) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<VocSegModel<f32>, ModelError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
