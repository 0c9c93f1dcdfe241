//! Train the light preset on synthetic data and report test metrics.

use scoreformer::metrics::{evaluate_all, PredictionSet};
use scoreformer::pipeline::{make_data, prepare};
use scoreformer::train::{predict_records, train, Splits, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut tc = TrainConfig::preset("l-scoreformer")?;
    tc.max_epochs = 15;
    tc.learning_rate = 1e-3;
    tc.hit_fraction = 0.1;
    let data = prepare(&make_data(1000, 7, 0.25)?, tc.model.rw_length)?.0;
    let splits = Splits::new(&data, &tc.split)?;
    let (ck, log) = train(&tc, &splits)?;
    println!("kept epoch {} of {}", log.selected_epoch, log.epochs.len());

    let z = predict_records(&ck.model, &splits.test, 256)?;
    let ids = splits.test.iter().map(|r| r.id.clone()).collect();
    let y = splits.test.iter().map(|r| r.score).collect();
    let report = evaluate_all(&PredictionSet::new(ids, y, z)?, tc.hit_fraction, tc.wmse_alpha)?;
    print!("{}", report.to_text());
    Ok(())
}
