//! Checkpoint directory layout:
//!   weights.safetensors  — every model parameter by name
//!   optim.safetensors    — Adam step count and moment maps (training only)
//!   meta.json            — format version, epoch, config, metric history

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::optim::Adam;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub mae: f64,
    pub max_f: f64,
    pub s_measure: f64,
    pub e_measure: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Last completed epoch, 1-based; 0 means untrained.
    pub epoch: usize,
    /// Run configuration in its flat text form.
    pub config: String,
    pub history: Vec<ValidationRecord>,
}

impl CheckpointMeta {
    pub fn new(epoch: usize, config: String, history: Vec<ValidationRecord>) -> Self {
        Self { format_version: CHECKPOINT_FORMAT_VERSION, epoch, config, history }
    }
}

pub fn save_checkpoint(
    dir: &Path,
    store: &ParamStore,
    optim: Option<&Adam>,
    meta: &CheckpointMeta,
) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Checkpoint(format!("cannot create {}: {e}", dir.display())))?;
    store.save(&dir.join("weights.safetensors"))?;
    if let Some(optim) = optim {
        optim.save_state(&dir.join("optim.safetensors"))?;
    }
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::Checkpoint(format!("cannot encode metadata: {e}")))?;
    std::fs::write(dir.join("meta.json"), json)
        .map_err(|e| Error::Checkpoint(format!("cannot write meta.json: {e}")))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("malformed meta.json: {e}")))?;
    if meta.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format version {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
            meta.format_version
        )));
    }
    Ok(meta)
}

/// Loads weights (and optionally optimizer state) into an existing model.
pub fn load_checkpoint(
    dir: &Path,
    store: &ParamStore,
    optim: Option<&mut Adam>,
) -> Result<CheckpointMeta> {
    let meta = read_meta(dir)?;
    store.load(&dir.join("weights.safetensors"))?;
    if let Some(optim) = optim {
        optim.load_state(&dir.join("optim.safetensors"))?;
    }
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use candle_core::Device;

    #[test]
    fn weights_round_trip_bit_identically() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("ckpt");

        let store = ParamStore::new(11, Device::Cpu);
        let _model = Model::new(&store, &ModelConfig::tiny()).unwrap();
        let meta = CheckpointMeta::new(3, "seed = 11\n".into(), vec![]);
        save_checkpoint(&ckpt, &store, None, &meta).unwrap();
        let before = store.snapshot().unwrap();

        let store2 = ParamStore::new(999, Device::Cpu);
        let _model2 = Model::new(&store2, &ModelConfig::tiny()).unwrap();
        let loaded = load_checkpoint(&ckpt, &store2, None).unwrap();
        assert_eq!(loaded.epoch, 3);
        assert_eq!(loaded.config, "seed = 11\n");

        let after = store2.snapshot().unwrap();
        assert_eq!(before.len(), after.len());
        for (name, values) in &before {
            let restored = &after[name];
            assert!(
                values.iter().zip(restored).all(|(a, b)| a.to_bits() == b.to_bits()),
                "{name} changed across the round trip"
            );
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("ckpt");
        std::fs::create_dir_all(&ckpt).unwrap();
        std::fs::write(
            ckpt.join("meta.json"),
            r#"{"format_version": 2, "epoch": 0, "config": "", "history": []}"#,
        )
        .unwrap();
        let err = read_meta(&ckpt).unwrap_err();
        assert!(err.to_string().contains("version 2"));
    }

    #[test]
    fn missing_checkpoint_is_a_checkpoint_error() {
        let err = read_meta(Path::new("/nonexistent/ckpt")).unwrap_err();
        assert_eq!(err.reason_code(), "checkpoint");
    }
}
