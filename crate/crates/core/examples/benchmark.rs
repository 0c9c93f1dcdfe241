//! Inference throughput of both presets on the same molecules.

use scoreformer::cli::{benchmark, preset_model, BenchmarkSettings};
use scoreformer::model::{ModelConfig, PRESETS};
use scoreformer::pipeline::{make_data, prepare};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let molecules = make_data(256, 5, 0.25)?;
    let settings = BenchmarkSettings {
        batch_size: 64,
        repetitions: 3,
        warmup: 1,
    };
    for name in PRESETS {
        let data = prepare(&molecules, ModelConfig::preset(name)?.rw_length)?.0;
        let model = preset_model(name, &data, 0)?;
        let r = benchmark(&model, &data, &settings)?;
        println!(
            "{name}: {} parameters, {:.0} samples/s, {:.1} h per 128M molecules",
            r.parameter_count, r.samples_per_second, r.hours_per_128m
        );
    }
    Ok(())
}
