//! File-based workflow: dataset CSV, preprocessing, training, prediction and evaluation.

use scoreformer::cli::{self, evaluate_command, predict_command, preprocess, train_command, EvalOptions, SplitName};
use scoreformer::pipeline::{make_data, write_dataset};
use scoreformer::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let dir = tempfile::tempdir()?;
    let csv = dir.path().join("molecules.csv");
    let prepared = dir.path().join("molecules.sfpd");
    write_dataset(&csv, &make_data(600, 11, 0.25)?)?;

    let overrides = [
        "preset=l-scoreformer",
        "max_epochs=10",
        "learning_rate=1e-3",
        "hit_fraction=0.1",
    ];
    let tc = TrainConfig::from_toml("", &overrides.map(String::from))?;
    let summary = preprocess(&csv, tc.model.rw_length, &prepared)?;
    println!(
        "preprocessed {} molecules ({} rejected)",
        summary.kept, summary.rejected
    );

    let run = dir.path().join("run");
    let (_, log) = train_command(&tc, &prepared, &run)?;
    println!("trained {} epochs, kept epoch {}", log.epochs.len(), log.selected_epoch);

    let ckpt = run.join(cli::CHECKPOINT_FILE);
    let predictions = dir.path().join("test_predictions.csv");
    let rows = predict_command(&ckpt, &prepared, SplitName::Test, None, &predictions)?;
    println!("predicted {} test molecules", rows.len());

    let opts = EvalOptions {
        checkpoint: Some(ckpt),
        curves: true,
        ..EvalOptions::default()
    };
    let report = evaluate_command(&predictions, &prepared, &opts, &dir.path().join("report.toml"))?;
    print!("{}", report.to_text());
    Ok(())
}
