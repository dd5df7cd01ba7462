//! Checkpoints: all parameters and running statistics as safetensors, with
//! the model description stored as JSON in the file metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::dataio::augment::Standardization;
use crate::error::{Error, Result};
use crate::model::resnet::EncoderSpec;
use crate::model::variant::{build_variant, StainCoModel, VariantKind};

const META_KEY: &str = "stainco";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub variant: VariantKind,
    pub encoder: EncoderSpec,
    pub standardization: Standardization,
    /// Side of the square network input (the crop size).
    pub input_size: usize,
    pub config_hash: String,
    pub seed: u64,
    pub epoch: usize,
}

pub fn save_checkpoint(path: &Path, model: &StainCoModel, meta: &CheckpointMeta) -> Result<()> {
    if meta.variant != *model.kind() {
        return Err(Error::Checkpoint("metadata variant differs from the model".into()));
    }
    let tensors = model.params().snapshot()?;
    let mut raw: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::with_capacity(tensors.len());
    for (name, t) in &tensors {
        let values: Vec<f32> = t.flatten_all()?.to_vec1()?;
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        raw.push((name.clone(), t.dims().to_vec(), bytes));
    }
    let views = raw
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let info = HashMap::from([(META_KEY.to_string(), serde_json::to_string(meta)?)]);
    let bytes = safetensors::serialize(views, Some(info)).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    meta_from_bytes(&bytes)
}

fn meta_from_bytes(bytes: &[u8]) -> Result<CheckpointMeta> {
    let (_, metadata) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let json = metadata
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint("checkpoint has no model metadata".into()))?;
    Ok(serde_json::from_str(json)?)
}

/// Rebuilds the model described by the checkpoint and loads its tensors.
pub fn load_checkpoint(path: &Path) -> Result<(StainCoModel, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let meta = meta_from_bytes(&bytes)?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut values = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(Error::Checkpoint(format!("{name}: unsupported dtype {:?}", view.dtype())));
        }
        let data: Vec<f32> = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        values.insert(name, Tensor::from_vec(data, view.shape(), &Device::Cpu)?);
    }
    let mut spec = meta.encoder.clone();
    spec.pretrained = None;
    let model = build_variant(&meta.variant, &spec, meta.seed)?;
    model.params().restore(&values)?;
    Ok((model, meta))
}
