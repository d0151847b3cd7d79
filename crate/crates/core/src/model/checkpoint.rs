//! Checkpoints: a WTEN file with every parameter in registration order, and
//! a JSON sidecar holding the model config, the seed, and per-name flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::wten;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
}

/// `run/model.wten -> run/model.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn sidecar<T: Scalar>(model: &Model, store: &ParamStore<T>) -> Sidecar {
    Sidecar {
        config: model.cfg.clone(),
        seed: model.seed,
        params: store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                frozen: p.frozen,
            })
            .collect(),
    }
}

/// WTEN bytes of the parameters with the given frozen flag (all if `None`).
pub fn subset_bytes<T: Scalar>(store: &ParamStore<T>, frozen: Option<bool>) -> Vec<u8> {
    wten::to_bytes(&store.named_tensors(frozen))
}

pub fn save<T: Scalar>(path: &Path, model: &Model, store: &ParamStore<T>) -> Result<()> {
    wten::save(path, &store.named_tensors(None))?;
    let json = serde_json::to_string_pretty(&sidecar(model, store)).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", sp.display())))
}

/// Rebuilds the model from the sidecar and fills it from the WTEN file.
pub fn load<T: Scalar>(path: &Path) -> Result<(Model, ParamStore<T>)> {
    let side = read_sidecar(path)?;
    let (model, mut store) = Model::new::<T>(&side.config, side.seed)?;
    let tensors = wten::load(path)?;
    if tensors.len() != store.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors, the model has {}",
            tensors.len(),
            store.len()
        )));
    }
    for ((name, t), entry) in tensors.into_iter().zip(&side.params) {
        if name != entry.name {
            return Err(Error::Config(format!("checkpoint tensor `{name}` where sidecar lists `{}`", entry.name)));
        }
        store.set(&name, t.cast())?;
        let id = store.id(&name).expect("set succeeded");
        store.get_mut(id).frozen = entry.frozen;
    }
    Ok((model, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Regime;
    use crate::params::count_params;

    fn small() -> ModelConfig {
        ModelConfig {
            image_size: 32,
            channels: 8,
            frozen_dim: 16,
            frozen_heads: 2,
            frozen_hidden: 32,
            points: 2,
            decoder_width: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact_and_counts_match_entries() {
        let dir = std::env::temp_dir().join(format!("weft-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.wten");
        let (m, mut s) = Model::new::<f32>(&small(), 11).unwrap();
        let t = s.by_name("decoder.head.weight").unwrap().tensor.map(|v| v + 0.125);
        s.set("decoder.head.weight", t).unwrap();
        save(&path, &m, &s).unwrap();

        let (m2, s2) = load::<f32>(&path).unwrap();
        assert_eq!(m2.cfg, m.cfg);
        assert_eq!(subset_bytes(&s, None), subset_bytes(&s2, None));
        assert_eq!(std::fs::read(&path).unwrap(), subset_bytes(&s, None));

        let c = count_params(&s);
        let entries: u64 = wten::load(&path).unwrap().iter().map(|(_, t)| t.len() as u64).sum();
        assert_eq!(c.frozen + c.trainable, entries);
        let side = read_sidecar(&path).unwrap();
        let frozen: u64 = side.params.iter().filter(|p| p.frozen).map(|p| p.shape.iter().product::<usize>() as u64).sum();
        assert_eq!(frozen, c.frozen);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn sidecar_regime_changes_layout() {
        let (m, s) = Model::new::<f32>(&ModelConfig { regime: Regime::Frozen, ..small() }, 0).unwrap();
        let side = sidecar(&m, &s);
        assert!(side.params.iter().all(|p| !p.name.starts_with("twe.")));
        let back: Sidecar = serde_json::from_str(&serde_json::to_string(&side).unwrap()).unwrap();
        assert_eq!(back, side);
    }
}
