//! Data splits, the weighted-MSE objective and the training loop.

mod config;
mod split;
mod trainer;

pub use crate::metrics::{f1_at_fraction, wmse};
pub use config::{apply_override, Selection, TrainConfig};
pub use split::{split_indices, SplitIndices, SplitMode, SplitSpec};
pub use trainer::{predict_records, train, wmse_loss, EpochRecord, Splits, TrainLog};
