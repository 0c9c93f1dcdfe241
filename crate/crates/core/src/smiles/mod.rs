//! SMILES subset parsing, molecular graphs, featurization and datasets.

mod dataset;
mod elements;
mod featurize;
mod parser;
mod writer;

pub use dataset::{load_dataset, write_rejections, Dataset, LoadedDataset, Record, Rejection};
pub use elements::{atomic_mass, is_element};
pub use featurize::{featurize, featurize_with_id, FeaturizedGraph, EDGE_DIM, NODE_DIM};
pub use parser::{parse_call_count, parse_smiles};
pub use writer::to_smiles;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Valence contribution used for implicit-hydrogen counting.
    pub fn valence(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub symbol: String,
    pub charge: i8,
    pub aromatic: bool,
    /// Hydrogen count written inside a bracket atom; `None` means implicit.
    pub explicit_h: Option<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

/// Heavy-atom graph of a single connected molecule. Undirected and simple.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MolecularGraph {
    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds.iter().filter(|b| b.a == atom || b.b == atom).count()
    }

    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = (usize, BondOrder)> + '_ {
        self.bonds.iter().filter_map(move |b| {
            if b.a == atom {
                Some((b.b, b.order))
            } else if b.b == atom {
                Some((b.a, b.order))
            } else {
                None
            }
        })
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.bonds
            .iter()
            .find(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a))
    }

    /// Implicit hydrogens from the standard valence rule (floored at zero);
    /// an explicit bracket count takes precedence.
    pub fn hydrogen_count(&self, atom: usize) -> u32 {
        let a = &self.atoms[atom];
        if let Some(h) = a.explicit_h {
            return h as u32;
        }
        let Some(valence) = elements::standard_valence(&a.symbol) else {
            return 0;
        };
        let adjusted = match a.symbol.as_str() {
            "B" | "C" => valence - a.charge.unsigned_abs() as i32,
            _ => valence + a.charge as i32,
        };
        let used: f64 = self.neighbors(atom).map(|(_, o)| o.valence()).sum();
        (adjusted as f64 - used).floor().max(0.0) as u32
    }

    /// Sum of heavy-atom masses plus implicit hydrogens, in daltons.
    pub fn molecular_weight(&self) -> Result<f64, SmilesError> {
        let h = elements::atomic_mass("H").expect("hydrogen mass");
        let mut total = 0.0;
        for (i, a) in self.atoms.iter().enumerate() {
            let m = atomic_mass(&a.symbol).ok_or_else(|| SmilesError::NoMass(a.symbol.clone()))?;
            total += m + h * self.hydrogen_count(i) as f64;
        }
        Ok(total)
    }

    /// Ring count from the cycle rank `bonds - atoms + 1` of a connected graph.
    pub fn ring_count(&self) -> usize {
        (self.bonds.len() + 1).saturating_sub(self.atoms.len())
    }
}

pub fn molecular_weight(g: &MolecularGraph) -> Result<f64, SmilesError> {
    g.molecular_weight()
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SmilesError {
    #[error("empty SMILES")]
    Empty,
    #[error("non-ASCII character at position {0}")]
    NonAscii(usize),
    #[error("unbalanced parenthesis at position {0}")]
    UnbalancedParenthesis(usize),
    #[error("unpaired ring closure {0}")]
    UnpairedRingClosure(u32),
    #[error("unknown element `{symbol}` at position {pos}")]
    UnknownElement { symbol: String, pos: usize },
    #[error("unsupported feature: {feature} at position {pos}")]
    Unsupported { feature: &'static str, pos: usize },
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("no atomic mass for element `{0}`")]
    NoMass(String),
}
