use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::smiles::{FeaturizedGraph, EDGE_DIM, NODE_DIM};

/// Disjoint union of featurized graphs. Nodes of graph `g` occupy the
/// contiguous row range `ranges[g]`.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub node_features: Tensor,
    /// `[n, k]` positional encodings; `None` when the model ignores RWPE.
    pub pe: Option<Tensor>,
    pub edge_src: Arc<[usize]>,
    pub edge_dst: Arc<[usize]>,
    pub edge_features: Tensor,
    pub node_graph: Arc<[usize]>,
    pub ranges: Arc<[(usize, usize)]>,
    pub degrees: Vec<usize>,
    pub graph_ids: Vec<u64>,
}

impl GraphBatch {
    /// Collates graphs in the given order. `pe_dim` is the walk length the
    /// model expects, or `None` to skip positional encodings entirely.
    pub fn collate(graphs: &[&FeaturizedGraph], pe_dim: Option<usize>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Data("cannot collate an empty batch".into()));
        }
        let n: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let e: usize = graphs.iter().map(|g| g.num_edges()).sum();
        let mut x = Vec::with_capacity(n * NODE_DIM);
        let mut pe = pe_dim.map(|k| Vec::with_capacity(n * k));
        let mut src = Vec::with_capacity(e);
        let mut dst = Vec::with_capacity(e);
        let mut ef = Vec::with_capacity(e * EDGE_DIM);
        let mut node_graph = Vec::with_capacity(n);
        let mut ranges = Vec::with_capacity(graphs.len());
        let mut degrees = Vec::with_capacity(n);
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            let nodes = g.num_nodes();
            if nodes == 0 {
                return Err(Error::Data(format!("graph {} has no atoms", g.id)));
            }
            x.extend_from_slice(g.node_features.data());
            if let (Some(k), Some(buf)) = (pe_dim, pe.as_mut()) {
                let cache = g
                    .rwpe
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("graph {} has no RWPE cache", g.id)))?;
                if cache.walk_length() != k {
                    return Err(Error::Config(format!(
                        "RWPE cache walk length {} does not match model rw_length {k}",
                        cache.walk_length()
                    )));
                }
                buf.extend_from_slice(cache.values().data());
            }
            for &(s, d) in &g.edges {
                src.push(s + offset);
                dst.push(d + offset);
            }
            ef.extend_from_slice(g.edge_features.data());
            node_graph.extend(std::iter::repeat_n(gi, nodes));
            degrees.extend_from_slice(&g.degrees);
            ranges.push((offset, offset + nodes));
            offset += nodes;
        }
        Ok(Self {
            node_features: Tensor::matrix(n, NODE_DIM, x),
            pe: pe_dim.zip(pe).map(|(k, buf)| Tensor::matrix(n, k, buf)),
            edge_src: src.into(),
            edge_dst: dst.into(),
            edge_features: Tensor::matrix(e, EDGE_DIM, ef),
            node_graph: node_graph.into(),
            ranges: ranges.into(),
            degrees,
            graph_ids: graphs.iter().map(|g| g.id).collect(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.degrees.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    pub fn num_graphs(&self) -> usize {
        self.ranges.len()
    }
}
