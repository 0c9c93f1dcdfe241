use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Activation;
use crate::smiles::FeaturizedGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Min,
    Max,
    Std,
    Sum,
    Mul,
    Moment4,
    Moment5,
}

impl Aggregator {
    pub fn name(self) -> &'static str {
        match self {
            Aggregator::Mean => "mean",
            Aggregator::Min => "min",
            Aggregator::Max => "max",
            Aggregator::Std => "std",
            Aggregator::Sum => "sum",
            Aggregator::Mul => "mul",
            Aggregator::Moment4 => "moment4",
            Aggregator::Moment5 => "moment5",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaler {
    Identity,
    Amplification,
    Attenuation,
    Linear,
    InverseLinear,
}

impl Scaler {
    /// Multiplier applied to the aggregate of a node with degree `d`.
    pub fn factor(self, d: usize, stats: &DegreeStats) -> f64 {
        let d = d as f64;
        let log_d = (d + 1.0).ln();
        match self {
            Scaler::Identity => 1.0,
            Scaler::Amplification => log_d / stats.log_mean,
            Scaler::Attenuation => stats.log_mean / log_d.max(1e-5),
            Scaler::Linear => d / stats.lin_mean,
            Scaler::InverseLinear => stats.lin_mean / d.max(1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    Pna,
    Gcn,
}

/// Degree statistics of the training nodes used by the PNA scalers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    /// Mean of `ln(d + 1)`.
    pub log_mean: f64,
    /// Mean of `d`.
    pub lin_mean: f64,
}

impl DegreeStats {
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a FeaturizedGraph>) -> Result<Self> {
        let (mut n, mut log_sum, mut lin_sum) = (0usize, 0.0, 0.0);
        for g in graphs {
            for &d in &g.degrees {
                n += 1;
                log_sum += (d as f64 + 1.0).ln();
                lin_sum += d as f64;
            }
        }
        if n == 0 {
            return Err(Error::Data("degree statistics need at least one node".into()));
        }
        let stats = Self {
            log_mean: log_sum / n as f64,
            lin_mean: lin_sum / n as f64,
        };
        if stats.log_mean <= 0.0 || stats.lin_mean <= 0.0 {
            return Err(Error::Data(
                "training graphs have no edges; degree scalers are undefined".into(),
            ));
        }
        Ok(stats)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub rw_length: usize,
    pub aggregators: Vec<Aggregator>,
    pub scalers: Vec<Scaler>,
    pub towers: usize,
    pub pre_fc_layers: usize,
    pub post_fc_layers: usize,
    pub activation: Activation,
    pub activation_pe: Activation,
    pub dropout: f64,
    pub dropout_attn: f64,
    pub dropout_pe: f64,
    pub residual_weight: f64,
    pub attention_heads: usize,
    pub readout_mlp_dims: Vec<usize>,
    pub conv_kind: ConvKind,
    pub use_rwpe: bool,
    pub degree_stats: Option<DegreeStats>,
}

pub const PRESETS: [&str; 2] = ["scoreformer", "l-scoreformer"];

impl ModelConfig {
    pub fn scoreformer() -> Self {
        Self {
            hidden_dim: 128,
            num_layers: 4,
            rw_length: 9,
            aggregators: vec![Aggregator::Mean, Aggregator::Min, Aggregator::Max, Aggregator::Std],
            scalers: vec![Scaler::Identity, Scaler::Amplification, Scaler::Attenuation],
            towers: 4,
            pre_fc_layers: 1,
            post_fc_layers: 1,
            activation: Activation::Relu,
            activation_pe: Activation::Tanh,
            dropout: 0.1,
            dropout_attn: 0.5,
            dropout_pe: 0.1,
            residual_weight: 1.0,
            attention_heads: 4,
            readout_mlp_dims: vec![128, 64],
            conv_kind: ConvKind::Pna,
            use_rwpe: true,
            degree_stats: None,
        }
    }

    pub fn l_scoreformer() -> Self {
        Self {
            hidden_dim: 24,
            num_layers: 4,
            rw_length: 2,
            aggregators: vec![
                Aggregator::Mul,
                Aggregator::Sum,
                Aggregator::Mean,
                Aggregator::Moment4,
                Aggregator::Moment5,
            ],
            scalers: vec![Scaler::Linear, Scaler::InverseLinear],
            towers: 1,
            pre_fc_layers: 3,
            post_fc_layers: 2,
            activation: Activation::Elu,
            activation_pe: Activation::Relu,
            dropout: 0.245,
            dropout_attn: 0.432,
            dropout_pe: 0.188,
            residual_weight: 0.035,
            attention_heads: 1,
            readout_mlp_dims: vec![24, 12],
            conv_kind: ConvKind::Pna,
            use_rwpe: true,
            degree_stats: None,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "scoreformer" => Ok(Self::scoreformer()),
            "l-scoreformer" => Ok(Self::l_scoreformer()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn with_degree_stats(mut self, stats: DegreeStats) -> Self {
        self.degree_stats = Some(stats);
        self
    }

    pub fn tower_dim(&self) -> usize {
        self.hidden_dim / self.towers.max(1)
    }

    /// Width of the positional stream, zero when RWPE is disabled.
    pub fn pe_dim(&self) -> usize {
        if self.use_rwpe {
            self.rw_length
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden_dim == 0 || self.num_layers == 0 {
            return bad("hidden_dim and num_layers must be positive".into());
        }
        if self.towers == 0 || !self.hidden_dim.is_multiple_of(self.towers) {
            return bad(format!(
                "hidden_dim {} is not divisible by towers {}",
                self.hidden_dim, self.towers
            ));
        }
        if self.attention_heads == 0 || !self.hidden_dim.is_multiple_of(self.attention_heads) {
            return bad(format!(
                "hidden_dim {} is not divisible by attention_heads {}",
                self.hidden_dim, self.attention_heads
            ));
        }
        if self.use_rwpe && self.rw_length == 0 {
            return bad("rw_length must be at least 1 when use_rwpe is set".into());
        }
        if self.aggregators.is_empty() {
            return bad("aggregator set is empty".into());
        }
        if self.scalers.is_empty() {
            return bad("scaler set is empty".into());
        }
        if self.pre_fc_layers == 0 || self.post_fc_layers == 0 {
            return bad("pre_fc_layers and post_fc_layers must be at least 1".into());
        }
        for (name, p) in [
            ("dropout", self.dropout),
            ("dropout_attn", self.dropout_attn),
            ("dropout_pe", self.dropout_pe),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1)"));
            }
        }
        if !(self.residual_weight >= 0.0 && self.residual_weight.is_finite()) {
            return bad(format!(
                "residual_weight {} must be finite and non-negative",
                self.residual_weight
            ));
        }
        if self.readout_mlp_dims.contains(&0) {
            return bad("readout_mlp_dims entries must be positive".into());
        }
        match self.degree_stats {
            None => bad("degree_stats must be populated from the training split".into()),
            Some(s) if !(s.log_mean > 0.0 && s.lin_mean > 0.0 && s.log_mean.is_finite() && s.lin_mean.is_finite()) => {
                bad(format!("degree_stats {s:?} must be finite and positive"))
            }
            Some(_) => Ok(()),
        }
    }
}
