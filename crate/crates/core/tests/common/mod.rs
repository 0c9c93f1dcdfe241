#![allow(dead_code)]

use petgraph::algo::is_isomorphic_matching;
use petgraph::graph::UnGraph;
use rand::seq::SliceRandom;
use rand::Rng;
use scoreformer::numeric::SeededRng;
use scoreformer::smiles::{Atom, Bond, BondOrder, MolecularGraph};

/// Random connected heavy-atom graph: a random tree plus a few extra
/// (ring-closing) bonds. Atoms are non-aromatic; bond orders are kept
/// chemically loose since only graph structure matters to the callers.
pub fn random_graph(seed: u64, max_atoms: usize) -> MolecularGraph {
    let mut g = SeededRng::new(seed).generator();
    let n = g.random_range(1..=max_atoms);
    let symbols = ["C", "C", "C", "N", "O", "S", "F", "Cl", "Br", "P"];
    let mut atoms = Vec::new();
    for _ in 0..n {
        let charge = if g.random_bool(0.1) { g.random_range(-1..=1) } else { 0 };
        let explicit_h = if charge != 0 && g.random_bool(0.5) {
            Some(g.random_range(0..=2))
        } else {
            None
        };
        atoms.push(Atom {
            symbol: symbols[g.random_range(0..symbols.len())].to_string(),
            charge,
            aromatic: false,
            explicit_h,
        });
    }
    let orders = [
        BondOrder::Single,
        BondOrder::Single,
        BondOrder::Single,
        BondOrder::Double,
        BondOrder::Triple,
    ];
    let mut bonds = Vec::new();
    for i in 1..n {
        let j = g.random_range(0..i);
        bonds.push(Bond {
            a: j,
            b: i,
            order: orders[g.random_range(0..orders.len())],
        });
    }
    let extra = if n >= 3 { g.random_range(0..=2) } else { 0 };
    for _ in 0..extra {
        let a = g.random_range(0..n);
        let b = g.random_range(0..n);
        if a != b
            && !bonds
                .iter()
                .any(|x: &Bond| (x.a == a && x.b == b) || (x.a == b && x.b == a))
        {
            bonds.push(Bond {
                a,
                b,
                order: BondOrder::Single,
            });
        }
    }
    MolecularGraph { atoms, bonds }
}

/// Relabels atoms so that old atom `i` becomes `perm[i]`.
pub fn permute(g: &MolecularGraph, perm: &[usize]) -> MolecularGraph {
    let mut atoms = g.atoms.clone();
    for (i, a) in g.atoms.iter().enumerate() {
        atoms[perm[i]] = a.clone();
    }
    let bonds = g
        .bonds
        .iter()
        .map(|b| Bond {
            a: perm[b.a],
            b: perm[b.b],
            order: b.order,
        })
        .collect();
    MolecularGraph { atoms, bonds }
}

pub fn random_perm(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut SeededRng::new(seed).generator());
    p
}

fn to_petgraph(g: &MolecularGraph) -> UnGraph<Atom, BondOrder> {
    let mut pg = UnGraph::new_undirected();
    let idx: Vec<_> = g.atoms.iter().map(|a| pg.add_node(a.clone())).collect();
    for b in &g.bonds {
        pg.add_edge(idx[b.a], idx[b.b], b.order);
    }
    pg
}

pub fn isomorphic(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    is_isomorphic_matching(&to_petgraph(a), &to_petgraph(b), |x, y| x == y, |x, y| x == y)
}

/// Rows of a matrix sorted lexicographically, for multiset comparison.
pub fn sorted_rows(data: &[f64], cols: usize) -> Vec<Vec<u64>> {
    let mut rows: Vec<Vec<u64>> = data
        .chunks(cols)
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows
}
