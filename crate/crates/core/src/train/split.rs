use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TrainMeta;
use crate::numeric::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Random,
    /// Heaviest molecules form the test set.
    Weight,
}

impl SplitMode {
    pub fn name(self) -> &'static str {
        match self {
            SplitMode::Random => "random",
            SplitMode::Weight => "weight",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "random" => Ok(SplitMode::Random),
            "weight" => Ok(SplitMode::Weight),
            other => Err(Error::Config(format!(
                "unknown split mode `{other}` (expected random or weight)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::Random,
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

/// Record indices of each partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    /// The split a checkpoint was trained under.
    pub fn from_meta(meta: &TrainMeta) -> Result<Self> {
        let spec = Self {
            mode: SplitMode::from_name(&meta.split_mode)?,
            fractions: meta.split_fractions,
            seed: meta.split_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {:?} must be positive and sum to 1",
                self.fractions
            )));
        }
        Ok(())
    }

    fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if n < 10 {
            return Err(Error::Data(format!(
                "dataset of {n} records is too small to split (need 10)"
            )));
        }
        let val = (self.fractions[1] * n as f64).round() as usize;
        let test = (self.fractions[2] * n as f64).round() as usize;
        let train = n.saturating_sub(val + test);
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::Data(format!(
                "split {:?} of {n} records leaves an empty partition",
                self.fractions
            )));
        }
        Ok((train, val, test))
    }
}

/// Partitions `0..n`. Weight mode needs one molecular weight per record.
pub fn split_indices(n: usize, molecular_weights: Option<&[f64]>, spec: &SplitSpec) -> Result<SplitIndices> {
    let (n_train, n_val, _) = spec.sizes(n)?;
    let mut rng = SeededRng::new(spec.seed).generator();
    match spec.mode {
        SplitMode::Random => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            Ok(SplitIndices {
                train: order[..n_train].to_vec(),
                val: order[n_train..n_train + n_val].to_vec(),
                test: order[n_train + n_val..].to_vec(),
            })
        }
        SplitMode::Weight => {
            let mw = molecular_weights
                .filter(|w| w.len() == n)
                .ok_or_else(|| Error::Data("weight split needs one molecular weight per record".into()))?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| mw[a].total_cmp(&mw[b]).then(a.cmp(&b)));
            let test = order.split_off(n_train + n_val);
            order.shuffle(&mut rng);
            let train = order.split_off(n_val);
            Ok(SplitIndices {
                train,
                val: order,
                test,
            })
        }
    }
}
