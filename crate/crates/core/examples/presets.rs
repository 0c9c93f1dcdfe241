//! Build both model presets and run an untrained forward pass.

use scoreformer::model::{build_model, DegreeStats, ModelConfig, PRESETS};
use scoreformer::numeric::SeededRng;
use scoreformer::pipeline::{make_data, prepare};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = make_data(32, 1, 0.25)?;
    for name in PRESETS {
        let base = ModelConfig::preset(name)?;
        let prepared = prepare(&data, base.rw_length)?.0;
        let cfg = base.with_degree_stats(DegreeStats::from_graphs(prepared.graphs())?);
        let model = build_model(&cfg, &SeededRng::new(0))?;
        let graphs: Vec<_> = prepared.graphs().take(4).collect();
        let z = model.predict(&model.collate(&graphs)?)?;
        println!(
            "{name}: hidden {} x {} layers, k = {}, {} parameters; untrained predictions {:.3?}",
            cfg.hidden_dim,
            cfg.num_layers,
            cfg.rw_length,
            model.parameter_count(),
            z
        );
    }
    Ok(())
}
