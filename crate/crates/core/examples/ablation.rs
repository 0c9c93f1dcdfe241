//! Compare the base model with its no-RWPE and GCN variants.

use scoreformer::cli::{ablate, Variant};
use scoreformer::pipeline::{make_data, prepare};
use scoreformer::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut tc = TrainConfig::preset("l-scoreformer")?;
    tc.max_epochs = 5;
    tc.learning_rate = 1e-3;
    tc.hit_fraction = 0.1;
    let data = prepare(&make_data(400, 2, 0.25)?, tc.model.rw_length)?.0;
    let variants = [Variant::NoRwpe, Variant::Gcn, Variant::NoRwpeGcn];
    println!(
        "{:<12} {:>8} {:>8} {:>12} {:>12}",
        "variant", "pearson", "r2", "train_wmse", "test_wmse"
    );
    for r in ablate(&tc, &data, &variants, &[0, 1])? {
        println!(
            "{:<12} {:>8.3} {:>8.3} {:>12.2} {:>12.2}",
            r.variant, r.pearson, r.r_squared, r.train_wmse, r.test_wmse
        );
    }
    Ok(())
}
