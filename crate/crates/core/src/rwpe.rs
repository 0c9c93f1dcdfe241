//! Random-walk positional encodings: per-node return probabilities of
//! walks on the row-stochastic transition matrix `D⁻¹A`.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::numeric::Tensor;
use crate::smiles::FeaturizedGraph;

thread_local! {
    static COMPUTE_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of `compute_rwpe` calls made on the current thread.
pub fn compute_call_count() -> usize {
    COMPUTE_CALLS.with(Cell::get)
}

/// `[n_nodes, k]` matrix; entry `(i, t)` is the probability that a walk of
/// `t + 1` steps from node `i` ends at `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct RwpeMatrix {
    values: Tensor,
}

impl RwpeMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::Data(format!(
                "RWPE must be a matrix, got shape {:?}",
                values.shape()
            )));
        }
        Ok(Self { values })
    }

    pub fn walk_length(&self) -> usize {
        self.values.cols()
    }

    pub fn num_nodes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn row(&self, node: usize) -> &[f64] {
        self.values.row(node)
    }
}

/// Computes return probabilities for walks of length 1..=k by propagating a
/// point mass from each node over the edge list; memory is O(n) per start.
pub fn compute_rwpe(g: &FeaturizedGraph, k: usize) -> Result<RwpeMatrix> {
    COMPUTE_CALLS.with(|c| c.set(c.get() + 1));
    if k == 0 {
        return Err(Error::Config("RWPE walk length must be at least 1".into()));
    }
    let n = g.num_nodes();
    let inv_deg: Vec<f64> = g
        .degrees
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 })
        .collect();
    let mut out = vec![0.0; n * k];
    let mut cur = vec![0.0; n];
    let mut next = vec![0.0; n];
    for start in 0..n {
        if g.degrees[start] == 0 {
            continue;
        }
        cur.iter_mut().for_each(|x| *x = 0.0);
        cur[start] = 1.0;
        for t in 0..k {
            next.iter_mut().for_each(|x| *x = 0.0);
            for &(src, dst) in &g.edges {
                next[dst] += cur[src] * inv_deg[src];
            }
            out[start * k + t] = next[start];
            std::mem::swap(&mut cur, &mut next);
        }
    }
    RwpeMatrix::new(Tensor::matrix(n, k, out))
}

/// Stores `m` as the graph's positional-encoding cache, replacing any
/// previous one.
pub fn attach_cache(mut g: FeaturizedGraph, m: RwpeMatrix) -> Result<FeaturizedGraph> {
    if m.num_nodes() != g.num_nodes() {
        return Err(Error::Data(format!(
            "RWPE has {} rows but graph {} has {} nodes",
            m.num_nodes(),
            g.id,
            g.num_nodes()
        )));
    }
    g.rwpe = Some(m);
    Ok(g)
}
