use crate::numeric::Tensor;
use crate::rwpe::RwpeMatrix;

use super::{BondOrder, MolecularGraph};

/// Node feature width: element (12) ⧺ degree (6) ⧺ formal charge (5) ⧺ aromatic bit.
pub const NODE_DIM: usize = 24;
/// Edge feature width: one-hot bond order.
pub const EDGE_DIM: usize = 4;

const ELEMENT_SLOTS: &[&str] = &["B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I"];
// elements that get the shared "other-listed" slot
const LISTED_OTHERS: &[&str] = &["Si", "Se", "As", "Te", "Ge", "Sn", "Na", "K", "Li", "Mg", "Ca", "Zn"];

pub(crate) const DEGREE_OFFSET: usize = 12;
pub(crate) const CHARGE_OFFSET: usize = 18;
pub(crate) const AROMATIC_SLOT: usize = 23;

/// Fixed-width graph tensors ready for batching.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturizedGraph {
    pub id: u64,
    /// `[n_atoms, NODE_DIM]`
    pub node_features: Tensor,
    /// Directed edges `(source j, target i)`; both directions of every bond.
    pub edges: Vec<(usize, usize)>,
    /// `[edges.len(), EDGE_DIM]`, row-aligned with `edges`.
    pub edge_features: Tensor,
    pub degrees: Vec<usize>,
    pub rwpe: Option<RwpeMatrix>,
}

impl FeaturizedGraph {
    pub fn num_nodes(&self) -> usize {
        self.degrees.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// In-neighbors of `node` (sources of edges targeting it).
    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == node).map(|e| e.0)
    }
}

fn element_slot(symbol: &str) -> usize {
    ELEMENT_SLOTS
        .iter()
        .position(|s| *s == symbol)
        .unwrap_or(if LISTED_OTHERS.contains(&symbol) { 10 } else { 11 })
}

pub fn featurize(g: &MolecularGraph) -> FeaturizedGraph {
    featurize_with_id(g, 0)
}

pub fn featurize_with_id(g: &MolecularGraph, id: u64) -> FeaturizedGraph {
    let n = g.num_atoms();
    let mut degrees = vec![0usize; n];
    let mut edges = Vec::with_capacity(2 * g.bonds.len());
    let mut edge_data = Vec::with_capacity(2 * g.bonds.len() * EDGE_DIM);
    for b in &g.bonds {
        degrees[b.a] += 1;
        degrees[b.b] += 1;
        let slot = match b.order {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        };
        for (j, i) in [(b.a, b.b), (b.b, b.a)] {
            edges.push((j, i));
            let mut row = [0.0; EDGE_DIM];
            row[slot] = 1.0;
            edge_data.extend_from_slice(&row);
        }
    }
    let mut nodes = vec![0.0; n * NODE_DIM];
    for (i, atom) in g.atoms.iter().enumerate() {
        let row = &mut nodes[i * NODE_DIM..(i + 1) * NODE_DIM];
        row[element_slot(&atom.symbol)] = 1.0;
        row[DEGREE_OFFSET + degrees[i].clamp(1, 6) - 1] = 1.0;
        row[CHARGE_OFFSET + (atom.charge.clamp(-2, 2) + 2) as usize] = 1.0;
        row[AROMATIC_SLOT] = atom.aromatic as u8 as f64;
    }
    let n_edges = edges.len();
    FeaturizedGraph {
        id,
        node_features: Tensor::matrix(n, NODE_DIM, nodes),
        edges,
        edge_features: Tensor::matrix(n_edges, EDGE_DIM, edge_data),
        degrees,
        rwpe: None,
    }
}
