use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::parse_smiles;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub smiles: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    /// File path or synthetic seed the records came from.
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub rejections: Vec<Rejection>,
}

/// Reads an `id,smiles,score` CSV. Rows whose SMILES fail to parse go to
/// the rejection report; malformed rows are hard errors.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut loaded = read_dataset(file, &path.display().to_string())?;
    loaded.dataset.provenance = path.display().to_string();
    Ok(loaded)
}

pub(crate) fn read_dataset<R: std::io::Read>(reader: R, source: &str) -> Result<LoadedDataset> {
    let data_err = |msg: String| Error::Data(format!("{source}: {msg}"));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| data_err(e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(data_err("empty file".into()));
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(ci), Some(cs), Some(cy)) = (col("id"), col("smiles"), col("score")) else {
        return Err(data_err(format!(
            "missing columns: header must contain id,smiles,score (found {})",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    };
    let mut loaded = LoadedDataset::default();
    let mut seen = HashSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| data_err(format!("row {row_no}: {e}")))?;
        let field = |c: usize| row.get(c).unwrap_or("");
        let id = field(ci).to_string();
        let smiles = field(cs).to_string();
        let raw = field(cy);
        let score: f64 = raw
            .parse()
            .map_err(|_| data_err(format!("row {row_no}: score `{raw}` is not a number")))?;
        if !score.is_finite() {
            return Err(data_err(format!("row {row_no}: score `{raw}` is not finite")));
        }
        if !seen.insert(id.clone()) {
            return Err(data_err(format!("row {row_no}: duplicate id `{id}`")));
        }
        match parse_smiles(&smiles) {
            Ok(_) => loaded.dataset.records.push(Record { id, smiles, score }),
            Err(e) => loaded.rejections.push(Rejection {
                id,
                reason: e.to_string(),
            }),
        }
    }
    if loaded.dataset.records.is_empty() && loaded.rejections.is_empty() {
        return Err(data_err("empty file (no data rows)".into()));
    }
    Ok(loaded)
}

/// Writes the `id,reason` rejection report.
pub fn write_rejections(path: impl AsRef<Path>, rejections: &[Rejection]) -> Result<()> {
    crate::pipeline::write_atomic(path.as_ref(), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["id", "reason"])?;
        for r in rejections {
            wtr.write_record([&r.id, &r.reason])?;
        }
        wtr.flush()?;
        Ok(())
    })
}
