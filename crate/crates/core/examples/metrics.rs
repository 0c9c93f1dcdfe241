//! Regression and enrichment metrics on a noisy ranking.

use rand::Rng;
use scoreformer::metrics::{
    attainable_recall, aurtc, evaluate_all, log_grid, recall_zeta_sigma, res_score, PredictionSet,
};
use scoreformer::numeric::SeededRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = SeededRng::new(3).generator();
    let n = 2000;
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-12.0..-2.0)).collect();
    for noise in [0.0, 1.0, 3.0, 100.0] {
        let z = y.iter().map(|v| v + noise * rng.random_range(-1.0..1.0)).collect();
        let p = PredictionSet::unnamed(y.clone(), z)?;
        let grid = log_grid(n, 64)?;
        println!(
            "noise {noise:>5}: R(0.1, 0.01) {:.3}  attainable R(0.01, 0.1) {:.3}  AURTC(0.01) {:.3}  RES {:.3}",
            recall_zeta_sigma(&p, 0.1, 0.01)?,
            attainable_recall(&p, 0.01, 0.1)?,
            aurtc(&p, 0.01, &grid)?,
            res_score(&p, &grid, &grid)?
        );
        if noise == 1.0 {
            print!("{}", evaluate_all(&p, 0.01, 1.0)?.to_text());
        }
    }
    Ok(())
}
