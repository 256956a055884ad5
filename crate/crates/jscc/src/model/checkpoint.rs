//! Checkpointing: one safetensors archive holding every parameter keyed by
//! layer path, with the full model configuration (and optional training
//! state) embedded as JSON in the header metadata. Loading rebuilds the
//! model from the embedded config and validates shape agreement tensor by
//! tensor. Optimizer moments ride along under the `optim.` prefix so
//! training can resume exactly.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "jscc-checkpoint-v1";
const OPTIM_M: &str = "optim.m/";
const OPTIM_V: &str = "optim.v/";

/// Adam moments keyed by parameter name, plus the shared step counter.
pub struct OptimizerState {
    pub step: usize,
    pub first_moment: HashMap<String, Tensor>,
    pub second_moment: HashMap<String, Tensor>,
}

/// A loaded checkpoint.
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
    pub metadata: HashMap<String, String>,
}

fn dtype_to_st(dtype: DType) -> Result<Dtype> {
    match dtype {
        DType::F32 => Ok(Dtype::F32),
        DType::F64 => Ok(Dtype::F64),
        other => Err(Error::Checkpoint(format!("unsupported checkpoint dtype {other:?}"))),
    }
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        other => return Err(Error::Checkpoint(format!("unsupported checkpoint dtype {other:?}"))),
    })
}

fn tensor_from_view(view: &TensorView<'_>, device: &Device) -> Result<Tensor> {
    let shape: Vec<usize> = view.shape().to_vec();
    let data = view.data();
    let t = match view.dtype() {
        Dtype::F32 => {
            let vals: Vec<f32> = data
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Tensor::from_vec(vals, shape, device)?
        }
        Dtype::F64 => {
            let vals: Vec<f64> = data
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
                .collect();
            Tensor::from_vec(vals, shape, device)?
        }
        other => return Err(Error::Checkpoint(format!("unsupported tensor dtype {other:?} in checkpoint"))),
    };
    Ok(t)
}

/// Serialize a model (and optionally its optimizer state) to `path`.
/// `extra_metadata` entries are stored verbatim in the header.
pub fn save(
    model: &Model,
    optimizer: Option<&OptimizerState>,
    extra_metadata: &[(String, String)],
    path: &Path,
) -> Result<()> {
    let st_dtype = dtype_to_st(model.store().dtype())?;
    let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for entry in model.store().entries() {
        let t = entry.var.as_tensor();
        buffers.push((entry.name.clone(), t.dims().to_vec(), tensor_bytes(t)?));
    }
    if let Some(state) = optimizer {
        for (prefix, moments) in [(OPTIM_M, &state.first_moment), (OPTIM_V, &state.second_moment)] {
            let mut names: Vec<&String> = moments.keys().collect();
            names.sort();
            for name in names {
                let t = &moments[name];
                buffers.push((format!("{prefix}{name}"), t.dims().to_vec(), tensor_bytes(t)?));
            }
        }
    }

    let mut metadata = HashMap::new();
    metadata.insert("format".to_string(), FORMAT_TAG.to_string());
    metadata.insert("model_config".to_string(), serde_json::to_string(model.config())?);
    metadata.insert(
        "dtype".to_string(),
        match model.store().dtype() {
            DType::F64 => "f64",
            _ => "f32",
        }
        .to_string(),
    );
    if let Some(state) = optimizer {
        metadata.insert("adam_step".to_string(), state.step.to_string());
    }
    for (k, v) in extra_metadata {
        metadata.insert(k.clone(), v.clone());
    }

    let views: Vec<(&str, TensorView<'_>)> = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(st_dtype, shape.clone(), bytes)
                .map(|v| (name.as_str(), v))
                .map_err(|e| Error::Checkpoint(format!("failed to build tensor view: {e}")))
        })
        .collect::<Result<_>>()?;
    let bytes = safetensors::serialize(views, Some(metadata))
        .map_err(|e| Error::Checkpoint(format!("serialize failed: {e}")))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Load a checkpoint, rebuilding the model from the embedded config and
/// validating parameter/config shape agreement.
pub fn load(path: &Path, device: &Device) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let (_header_len, meta) = SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint header: {e}")))?;
    let metadata: HashMap<String, String> = meta.metadata().clone().unwrap_or_default();
    if metadata.get("format").map(String::as_str) != Some(FORMAT_TAG) {
        return Err(Error::Checkpoint(format!(
            "{} is not a {FORMAT_TAG} file",
            path.display()
        )));
    }
    let cfg_json = metadata
        .get("model_config")
        .ok_or_else(|| Error::Checkpoint("checkpoint has no embedded model config".into()))?;
    let cfg: ModelConfig = serde_json::from_str(cfg_json)?;
    cfg.validate()?;
    let dtype = match metadata.get("dtype").map(String::as_str) {
        Some("f64") => DType::F64,
        _ => DType::F32,
    };

    let st = SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::Checkpoint(format!("unreadable checkpoint tensors: {e}")))?;
    let mut params: HashMap<String, Tensor> = HashMap::new();
    let mut first_moment = HashMap::new();
    let mut second_moment = HashMap::new();
    for (name, view) in st.tensors() {
        let t = tensor_from_view(&view, device)?;
        if let Some(stripped) = name.strip_prefix(OPTIM_M) {
            first_moment.insert(stripped.to_string(), t);
        } else if let Some(stripped) = name.strip_prefix(OPTIM_V) {
            second_moment.insert(stripped.to_string(), t);
        } else {
            params.insert(name.to_string(), t);
        }
    }

    let mut model = Model::new(&cfg, dtype, device, 0)?;
    model.store_mut().load_values(params)?;

    let optimizer = match metadata.get("adam_step") {
        Some(step) => {
            let step = step
                .parse::<usize>()
                .map_err(|_| Error::Checkpoint("invalid adam_step in checkpoint".into()))?;
            Some(OptimizerState {
                step,
                first_moment,
                second_moment,
            })
        }
        None => None,
    };
    Ok(Checkpoint {
        model,
        optimizer,
        metadata,
    })
}

/// Hex sha256 of a file, used to stamp evaluation reports with checkpoint
/// provenance.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Hex sha256 of a model config's canonical JSON form.
pub fn config_sha256(cfg: &ModelConfig) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_roundtrip_preserves_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let cfg = ModelConfig::adaptive(2, true).unwrap();
        let model = Model::new(&cfg, DType::F32, &Device::Cpu, 42).unwrap();
        save(&model, None, &[("note".into(), "fixture".into())], &path).unwrap();

        let loaded = load(&path, &Device::Cpu).unwrap();
        assert_eq!(loaded.model.config(), &cfg);
        assert_eq!(loaded.metadata.get("note").unwrap(), "fixture");
        for (a, b) in model.store().entries().iter().zip(loaded.model.store().entries()) {
            assert_eq!(a.name, b.name);
            let x = a.var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let y = b.var.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert_eq!(x, y, "parameter {} changed across roundtrip", a.name);
        }
    }

    #[test]
    fn load_rejects_config_shape_disagreement() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = Model::new(&ModelConfig::adaptive(2, true).unwrap(), DType::F32, &Device::Cpu, 1).unwrap();
        save(&model, None, &[], &path).unwrap();

        // Corrupt the embedded config: claim c = 4 while tensors were built
        // with c = 2. Same-length patch keeps the header offsets valid.
        let mut bytes = std::fs::read(&path).unwrap();
        let needle = b"\"c\":2";
        let pos = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        bytes[pos + needle.len() - 1] = b'4';
        std::fs::write(&path, &bytes).unwrap();
        let err = load(&path, &Device::Cpu).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_) | Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn load_rejects_non_checkpoint_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load(&path, &Device::Cpu), Err(Error::Checkpoint(_))));
    }
}
