use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeaturizerState, LossConfig, ProtoError, ProtoModel};
use crate::encoder::EncoderConfig;
use crate::tensor::{ParamStore, TensorEntry};

pub const CHECKPOINT_FORMAT: &str = "protofeed-ckpt-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub steps: u64,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub featurizer: FeaturizerState,
    pub tensors: Vec<TensorEntry>,
}

/// `(manifest, blob)` paths for a checkpoint stem.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".json"), with(".bin"))
}

/// Writes `{stem}.json` and `{stem}.bin`. The tensor list in `manifest` is
/// replaced by the one describing `params`.
pub fn save_checkpoint(
    stem: &Path,
    params: &ParamStore<f32>,
    mut manifest: Manifest,
) -> Result<(), ProtoError> {
    let (json, bin) = checkpoint_paths(stem);
    let (entries, bytes) = params.to_blob();
    manifest.tensors = entries;
    manifest.format = CHECKPOINT_FORMAT.to_string();
    if let Some(dir) = json.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| ProtoError::Io(format!("{}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&json, text).map_err(|e| ProtoError::Io(format!("{}: {e}", json.display())))?;
    std::fs::write(&bin, bytes).map_err(|e| ProtoError::Io(format!("{}: {e}", bin.display())))?;
    Ok(())
}

/// Reads a checkpoint and checks that its tensors match the architecture its
/// manifest describes.
pub fn load_checkpoint(stem: &Path) -> Result<(ParamStore<f32>, Manifest), ProtoError> {
    let (json, bin) = checkpoint_paths(stem);
    let text = std::fs::read_to_string(&json)
        .map_err(|e| ProtoError::Io(format!("{}: {e}", json.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| ProtoError::ManifestMismatch(format!("{}: {e}", json.display())))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(ProtoError::ManifestMismatch(format!(
            "unknown format {:?}",
            manifest.format
        )));
    }
    let bytes =
        std::fs::read(&bin).map_err(|e| ProtoError::Io(format!("{}: {e}", bin.display())))?;
    let params = ParamStore::<f32>::from_blob(&manifest.tensors, &bytes)?;
    let model = ProtoModel::new(manifest.encoder.clone(), manifest.loss.clone())?;
    let expected = model.init_params(0);
    let shapes = |p: &ParamStore<f32>| -> Vec<(String, Vec<usize>)> {
        p.iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect()
    };
    if shapes(&expected) != shapes(&params) {
        return Err(ProtoError::ManifestMismatch(
            "tensor names or shapes do not match the encoder config".into(),
        ));
    }
    Ok((params, manifest))
}
