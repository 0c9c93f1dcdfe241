//! Graph-transformer score model: PNA message passing over a feature and a
//! positional stream, per-graph attention, GPS blocks and a pooled readout.

mod batch;
mod checkpoint;
mod config;
mod network;
mod pna;

pub use batch::GraphBatch;
pub use checkpoint::{Checkpoint, TrainMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Aggregator, ConvKind, DegreeStats, ModelConfig, Scaler, PRESETS};
pub use network::{
    build_model, Attention, ConvContext, FeatureConv, GcnConv, GpsLayer, LayerNorm, Linear, Mlp, Model, PnaTower,
    LAYER_NORM_EPS,
};
pub use pna::{pna_aggregate, DegreeTerms, MOMENT_EPS, STD_EPS};
