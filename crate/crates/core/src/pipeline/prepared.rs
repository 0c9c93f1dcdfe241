use std::path::Path;

use rayon::prelude::*;

use super::{read_container, write_container, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::rwpe::{attach_cache, compute_rwpe, RwpeMatrix};
use crate::smiles::{featurize_with_id, parse_smiles, Dataset, FeaturizedGraph, Rejection};

pub const PREPARED_MAGIC: [u8; 4] = *b"SFPD";
pub const PREPARED_VERSION: u32 = 1;

/// A dataset record with everything training needs precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedRecord {
    pub id: String,
    pub smiles: String,
    pub score: f64,
    pub molecular_weight: f64,
    pub graph: FeaturizedGraph,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDataset {
    pub rw_length: usize,
    pub provenance: String,
    pub records: Vec<PreparedRecord>,
}

impl PreparedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn graphs(&self) -> impl Iterator<Item = &FeaturizedGraph> {
        self.records.iter().map(|r| &r.graph)
    }

    /// Fails unless the cached walk length equals `expected`.
    pub fn check_rw_length(&self, expected: usize) -> Result<()> {
        if self.rw_length != expected {
            return Err(Error::Config(format!(
                "preprocessed RWPE walk length k={} does not match model rw_length k={expected}",
                self.rw_length
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut body = ByteWriter::new();
        let mut index = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let start = body.len();
            write_record(&mut body, r);
            index.push((r.id.as_str(), start, body.len() - start));
        }
        let mut w = ByteWriter::new();
        w.u64(self.rw_length as u64);
        w.str(&self.provenance);
        w.u64(index.len() as u64);
        for (id, offset, len) in &index {
            w.str(id);
            w.u64(*offset as u64);
            w.u64(*len as u64);
        }
        w.bytes(&body.into_inner());
        write_container(path.as_ref(), PREPARED_MAGIC, PREPARED_VERSION, &w.into_inner())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let payload = read_container(path, PREPARED_MAGIC, PREPARED_VERSION)?;
        Self::decode(&payload).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    fn decode(payload: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(payload);
        let rw_length = r.u64()? as usize;
        let provenance = r.str()?;
        let n = r.length()?;
        let mut index = Vec::with_capacity(n);
        for _ in 0..n {
            index.push((r.str()?, r.u64()? as usize, r.u64()? as usize));
        }
        let body = r.bytes()?;
        let mut records = Vec::with_capacity(n);
        for (id, offset, len) in index {
            let slice = offset
                .checked_add(len)
                .and_then(|end| body.get(offset..end))
                .ok_or_else(|| Error::Format(format!("index entry for `{id}` points outside the body")))?;
            let mut rr = ByteReader::new(slice);
            let rec = read_record(&mut rr)?;
            if rec.id != id || !rr.is_done() {
                return Err(Error::Format(format!(
                    "index entry for `{id}` does not match its record"
                )));
            }
            if rec.graph.rwpe.as_ref().map(RwpeMatrix::walk_length) != Some(rw_length) {
                return Err(Error::Format(format!(
                    "record `{id}` has an RWPE cache of the wrong length"
                )));
            }
            records.push(rec);
        }
        Ok(Self {
            rw_length,
            provenance,
            records,
        })
    }
}

fn write_record(w: &mut ByteWriter, r: &PreparedRecord) {
    w.str(&r.id);
    w.str(&r.smiles);
    w.f64(r.score);
    w.f64(r.molecular_weight);
    let g = &r.graph;
    w.u64(g.id);
    w.tensor(&g.node_features);
    w.u64(g.edges.len() as u64);
    for &(s, d) in &g.edges {
        w.u64(s as u64);
        w.u64(d as u64);
    }
    w.tensor(&g.edge_features);
    w.u64(g.degrees.len() as u64);
    for &d in &g.degrees {
        w.u64(d as u64);
    }
    w.tensor(g.rwpe.as_ref().expect("prepared graphs carry RWPE").values());
}

fn read_record(r: &mut ByteReader) -> Result<PreparedRecord> {
    let id = r.str()?;
    let smiles = r.str()?;
    let score = r.f64()?;
    let molecular_weight = r.f64()?;
    let graph_id = r.u64()?;
    let node_features = r.tensor()?;
    let e = r.length()?;
    let edges = (0..e)
        .map(|_| Ok((r.u64()? as usize, r.u64()? as usize)))
        .collect::<Result<Vec<_>>>()?;
    let edge_features = r.tensor()?;
    let n = r.length()?;
    let degrees = (0..n).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
    let rwpe = RwpeMatrix::new(r.tensor()?)?;
    let consistent = node_features.rank() == 2
        && node_features.rows() == n
        && edge_features.rank() == 2
        && edge_features.rows() == e
        && rwpe.num_nodes() == n
        && edges.iter().all(|&(s, d)| s < n && d < n);
    if !consistent {
        return Err(Error::Format(format!("record `{id}` has inconsistent shapes")));
    }
    let graph = FeaturizedGraph {
        id: graph_id,
        node_features,
        edges,
        edge_features,
        degrees,
        rwpe: Some(rwpe),
    };
    Ok(PreparedRecord {
        id,
        smiles,
        score,
        molecular_weight,
        graph,
    })
}

/// Parses, featurizes and attaches RWPE of walk length `k` to every record.
/// Records that fail here join the rejection list; it is an error only when
/// nothing survives.
pub fn prepare(dataset: &Dataset, k: usize) -> Result<(PreparedDataset, Vec<Rejection>)> {
    if k == 0 {
        return Err(Error::Config("RWPE walk length must be at least 1".into()));
    }
    let results: Vec<Result<PreparedRecord>> = dataset
        .records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let mol = parse_smiles(&rec.smiles)?;
            let molecular_weight = mol.molecular_weight()?;
            let g = featurize_with_id(&mol, i as u64);
            let m = compute_rwpe(&g, k)?;
            Ok(PreparedRecord {
                id: rec.id.clone(),
                smiles: rec.smiles.clone(),
                score: rec.score,
                molecular_weight,
                graph: attach_cache(g, m)?,
            })
        })
        .collect();
    let mut records = Vec::with_capacity(dataset.len());
    let mut rejections = Vec::new();
    for (rec, prepared) in dataset.records.iter().zip(results) {
        match prepared {
            Ok(p) => records.push(p),
            Err(e) => rejections.push(Rejection {
                id: rec.id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if records.is_empty() {
        return Err(Error::Data(format!(
            "no usable records in {} ({} rejected)",
            dataset.provenance,
            rejections.len()
        )));
    }
    Ok((
        PreparedDataset {
            rw_length: k,
            provenance: dataset.provenance.clone(),
            records,
        },
        rejections,
    ))
}
