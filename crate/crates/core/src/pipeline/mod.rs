//! File formats and data preparation: atomic writes, checksummed
//! containers, preprocessed datasets and the synthetic data generator.

mod container;
mod io;
mod prepared;
mod synthetic;

pub use container::{read_container, write_container, ByteReader, ByteWriter};
pub use io::write_atomic;
pub use prepared::{prepare, PreparedDataset, PreparedRecord, PREPARED_MAGIC, PREPARED_VERSION};
pub use synthetic::{make_data, random_smiles, write_dataset, Descriptors, SyntheticOracle};
