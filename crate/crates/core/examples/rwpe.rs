//! Random-walk return probabilities for a few small graphs.

use scoreformer::rwpe::compute_rwpe;
use scoreformer::smiles::{featurize, parse_smiles};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = 6;
    for (name, smiles) in [
        ("triangle", "C1CC1"),
        ("propane", "CCC"),
        ("neopentane", "CC(C)(C)C"),
        ("benzene", "c1ccccc1"),
    ] {
        let g = featurize(&parse_smiles(smiles)?);
        let m = compute_rwpe(&g, k)?;
        println!("{name} ({smiles}), walk lengths 1..={k}");
        for i in 0..m.num_nodes() {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.4}")).collect();
            println!("  atom {i}: {}", row.join(" "));
        }
    }
    Ok(())
}
