pub mod cli;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod rwpe;
pub mod smiles;
pub mod train;

pub use error::{Error, Result};
