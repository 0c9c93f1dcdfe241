use std::fmt::Write;

use super::{Atom, BondOrder, MolecularGraph};

const ORGANIC: &[&str] = &["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"];
const AROMATIC: &[&str] = &["B", "C", "N", "O", "P", "S"];

/// Writes a SMILES string for `g` by depth-first traversal from atom 0,
/// visiting neighbors in ascending index order. Parsing the result yields a
/// graph isomorphic to `g`.
pub fn to_smiles(g: &MolecularGraph) -> String {
    let n = g.num_atoms();
    if n == 0 {
        return String::new();
    }
    let mut adj: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    for b in &g.bonds {
        adj[b.a].push((b.b, b.order));
        adj[b.b].push((b.a, b.order));
    }
    adj.iter_mut().for_each(|v| v.sort_unstable());

    // pass 1: spanning tree and ring bonds, in emission order
    let mut order = Vec::with_capacity(n);
    let mut parent = vec![usize::MAX; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut rings: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    let mut visited = vec![false; n];
    for root in 0..n {
        if visited[root] {
            continue;
        }
        dfs(
            root,
            &adj,
            &mut visited,
            &mut parent,
            &mut children,
            &mut rings,
            &mut order,
        );
    }

    // pass 2: emission with ring labels
    let mut out = String::new();
    let mut emitted = vec![false; n];
    let mut open: Vec<Option<(usize, usize)>> = Vec::new(); // label -> (from, to)
    let mut first = true;
    for root in 0..n {
        if emitted[root] || parent[root] != usize::MAX {
            continue;
        }
        if !first {
            out.push('.');
        }
        first = false;
        emit(root, g, &adj, &children, &rings, &mut emitted, &mut open, &mut out);
    }
    out
}

fn dfs(
    u: usize,
    adj: &[Vec<(usize, BondOrder)>],
    visited: &mut [bool],
    parent: &mut [usize],
    children: &mut [Vec<usize>],
    rings: &mut [Vec<(usize, BondOrder)>],
    order: &mut Vec<usize>,
) {
    visited[u] = true;
    order.push(u);
    for &(v, o) in &adj[u] {
        if !visited[v] {
            parent[v] = u;
            children[u].push(v);
            dfs(v, adj, visited, parent, children, rings, order);
        } else if v != parent[u] && !rings[v].iter().any(|&(w, _)| w == u) && !children[v].contains(&u) {
            // back edge to an ancestor: record on both ends
            rings[u].push((v, o));
            rings[v].push((u, o));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn emit(
    u: usize,
    g: &MolecularGraph,
    adj: &[Vec<(usize, BondOrder)>],
    children: &[Vec<usize>],
    rings: &[Vec<(usize, BondOrder)>],
    emitted: &mut [bool],
    open: &mut Vec<Option<(usize, usize)>>,
    out: &mut String,
) {
    emitted[u] = true;
    write_atom(&g.atoms[u], out);
    for &(v, o) in &rings[u] {
        if emitted[v] {
            let label = open
                .iter()
                .position(|s| *s == Some((v, u)))
                .expect("ring bond opened at ancestor");
            open[label] = None;
            write_bond(g, u, v, o, out);
            write_label(label, out);
        } else {
            let label = match open.iter().position(Option::is_none) {
                Some(l) => l,
                None => {
                    open.push(None);
                    open.len() - 1
                }
            };
            open[label] = Some((u, v));
            write_label(label, out);
        }
    }
    let kids = &children[u];
    for (i, &c) in kids.iter().enumerate() {
        let o = adj[u]
            .iter()
            .find(|&&(w, _)| w == c)
            .map(|&(_, o)| o)
            .expect("tree edge");
        let last = i + 1 == kids.len();
        if !last {
            out.push('(');
        }
        write_bond(g, u, c, o, out);
        emit(c, g, adj, children, rings, emitted, open, out);
        if !last {
            out.push(')');
        }
    }
}

fn write_label(label: usize, out: &mut String) {
    // labels are zero-based internally; SMILES digits start at 1
    let l = label + 1;
    if l < 10 {
        let _ = write!(out, "{l}");
    } else {
        let _ = write!(out, "%{l:02}");
    }
}

fn write_bond(g: &MolecularGraph, a: usize, b: usize, order: BondOrder, out: &mut String) {
    let both_aromatic = g.atoms[a].aromatic && g.atoms[b].aromatic;
    let sym = match (order, both_aromatic) {
        (BondOrder::Single, false) | (BondOrder::Aromatic, true) => return,
        (BondOrder::Single, true) => '-',
        (BondOrder::Double, _) => '=',
        (BondOrder::Triple, _) => '#',
        (BondOrder::Aromatic, false) => ':',
    };
    out.push(sym);
}

fn write_atom(a: &Atom, out: &mut String) {
    let plain = a.charge == 0
        && a.explicit_h.is_none()
        && if a.aromatic {
            AROMATIC.contains(&a.symbol.as_str())
        } else {
            ORGANIC.contains(&a.symbol.as_str())
        };
    let sym = if a.aromatic {
        a.symbol.to_ascii_lowercase()
    } else {
        a.symbol.clone()
    };
    if plain {
        out.push_str(&sym);
        return;
    }
    out.push('[');
    out.push_str(&sym);
    match a.explicit_h {
        None => {}
        Some(1) => out.push('H'),
        Some(h) => {
            let _ = write!(out, "H{h}");
        }
    }
    match a.charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => {
            let _ = write!(out, "+{c}");
        }
        c => {
            let _ = write!(out, "-{}", -c);
        }
    }
    out.push(']');
}
