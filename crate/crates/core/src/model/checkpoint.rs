use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{build_model, Model};
use crate::error::{Error, Result};
use crate::numeric::SeededRng;
use crate::pipeline::{read_container, write_container, ByteReader, ByteWriter};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training settings that downstream commands need to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub wmse_alpha: f64,
    pub hit_fraction: f64,
    pub seed: u64,
    pub split_mode: String,
    pub split_seed: u64,
    /// Train, validation and test fractions.
    pub split_fractions: [f64; 3],
    pub selected_epoch: usize,
}

impl Default for TrainMeta {
    fn default() -> Self {
        Self {
            wmse_alpha: 1.0,
            hit_fraction: 0.01,
            seed: 0,
            split_mode: "random".into(),
            split_seed: 0,
            split_fractions: [0.8, 0.1, 0.1],
            selected_epoch: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: TrainMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let toml_err = |e: toml::ser::Error| Error::Format(e.to_string());
        let mut w = ByteWriter::new();
        w.str(&toml::to_string(&self.model.config).map_err(toml_err)?);
        w.str(&toml::to_string(&self.meta).map_err(toml_err)?);
        w.f64(self.model.target_mean);
        w.f64(self.model.target_std);
        w.u64(self.model.params.len() as u64);
        for p in self.model.params.iter() {
            w.str(&p.name);
            w.tensor(&p.value);
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(payload: &[u8]) -> Result<Self> {
        let toml_err = |e: toml::de::Error| Error::Format(e.to_string());
        let mut r = ByteReader::new(payload);
        let config: ModelConfig = toml::from_str(&r.str()?).map_err(toml_err)?;
        let meta: TrainMeta = toml::from_str(&r.str()?).map_err(toml_err)?;
        let target_mean = r.f64()?;
        let target_std = r.f64()?;
        let n = r.u64()? as usize;
        let mut model =
            build_model(&config, &SeededRng::new(0)).map_err(|e| Error::Format(format!("stored config: {e}")))?;
        if n != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {n} tensors but the config defines {}",
                model.params.len()
            )));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push((r.str()?, r.tensor()?));
        }
        if !r.is_done() {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        model
            .params
            .load_values(values)
            .map_err(|e| Error::Format(e.to_string()))?;
        model.target_mean = target_mean;
        model.target_std = target_std;
        Ok(Self { model, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_container(path.as_ref(), CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let payload = read_container(path.as_ref(), CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        Self::from_bytes(&payload).map_err(|e| Error::Format(format!("{}: {e}", path.as_ref().display())))
    }
}
