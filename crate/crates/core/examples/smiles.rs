//! Parse SMILES strings into molecular graphs, featurize them and write them back.

use scoreformer::smiles::{featurize, parse_smiles, to_smiles, EDGE_DIM, NODE_DIM};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for text in ["CCO", "c1ccccc1O", "C[C@H](N)C(=O)O", "[NH4+]", "C1CC1(", "c1cccc1"] {
        match parse_smiles(text) {
            Ok(mol) => {
                let g = featurize(&mol);
                println!(
                    "{text:<18} atoms {:>2}  bonds {:>2}  rings {}  MW {:>7.2}  -> {}",
                    mol.num_atoms(),
                    mol.bonds.len(),
                    mol.ring_count(),
                    mol.molecular_weight()?,
                    to_smiles(&mol)
                );
                println!(
                    "{:18} node features {:?} (width {NODE_DIM}), {} directed edges (width {EDGE_DIM})",
                    "",
                    g.node_features.shape(),
                    g.edges.len()
                );
            }
            Err(e) => println!("{text:<18} rejected: {e}"),
        }
    }
    Ok(())
}
