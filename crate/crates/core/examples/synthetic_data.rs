//! Generate a synthetic docking-score dataset and summarize it.

use scoreformer::pipeline::{make_data, write_dataset, Descriptors, SyntheticOracle};
use scoreformer::smiles::parse_smiles;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = make_data(500, 7, 0.25)?;
    let y: Vec<f64> = data.records.iter().map(|r| r.score).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    let best = y.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "{}: {} molecules, score mean {mean:.2}, sd {sd:.2}, best {best:.2}",
        data.provenance,
        data.len()
    );

    let oracle = SyntheticOracle::new(7, 0.25);
    for r in data.records.iter().take(5) {
        let g = parse_smiles(&r.smiles)?;
        let d = Descriptors::of(&g);
        println!(
            "{:>7}  {:<40} score {:>6.2}  signal {:>6.2}  descriptors {:?}",
            r.id,
            r.smiles,
            r.score,
            oracle.signal(&g),
            d.as_array()
        );
    }

    let out = std::env::temp_dir().join("scoreformer_synthetic.csv");
    write_dataset(&out, &data)?;
    println!("wrote {}", out.display());
    Ok(())
}
