use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::split::SplitSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Which epoch's parameters `train` returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest validation F1, earliest on ties, with early stopping.
    #[default]
    ValF1,
    /// Lowest validation wMSE, earliest on ties, with early stopping.
    ValWmse,
}

/// Fully resolved training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: String,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub wmse_alpha: f64,
    pub hit_fraction: f64,
    pub seed: u64,
    pub patience: usize,
    #[serde(default)]
    pub selection: Selection,
    pub split: SplitSpec,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Defaults for a named preset: its model, batch size and learning rate.
    pub fn preset(name: &str) -> Result<Self> {
        let model = ModelConfig::preset(name)?;
        let (batch_size, learning_rate) = match name {
            "l-scoreformer" => (64, 1.4126e-5),
            _ => (512, 1e-3),
        };
        Ok(Self {
            preset: name.to_string(),
            batch_size,
            learning_rate,
            max_epochs: 100,
            wmse_alpha: 1.0,
            hit_fraction: 0.01,
            seed: 0,
            patience: 20,
            selection: Selection::default(),
            split: SplitSpec::default(),
            model,
        })
    }

    /// Parses a TOML document, applies `key=value` overrides (dotted keys,
    /// TOML-typed values) and fills unspecified fields from the preset.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let preset = match doc.get("preset") {
            None => "scoreformer".to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(v) => return Err(Error::Config(format!("preset must be a string, got {v}"))),
        };
        let base = Self::preset(&preset)?;
        let mut merged = Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, Value::Table(doc));
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(self.wmse_alpha >= 0.0 && self.wmse_alpha.is_finite()) {
            return bad(format!("wmse_alpha {} must be non-negative", self.wmse_alpha));
        }
        if !(self.hit_fraction > 0.0 && self.hit_fraction <= 0.5) {
            return bad(format!("hit_fraction {} must lie in (0, 0.5]", self.hit_fraction));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        self.split.validate()
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `a.b.c = value` in `doc`. The value is parsed as TOML and falls
/// back to a plain string.
pub fn apply_override(doc: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{assignment}` has an empty key")));
    }
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
