mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use scoreformer::model::{
    build_model, pna_aggregate, Aggregator, Checkpoint, ConvContext, ConvKind, DegreeStats, DegreeTerms, FeatureConv,
    GraphBatch, Model, ModelConfig, Scaler, TrainMeta, LAYER_NORM_EPS, MOMENT_EPS, STD_EPS,
};
use scoreformer::numeric::{finite_diff_check_many, Activation, BoundParams, SeededRng, Tape, Tensor};
use scoreformer::rwpe::{attach_cache, compute_rwpe, RwpeMatrix};
use scoreformer::smiles::{featurize_with_id, parse_smiles, FeaturizedGraph, MolecularGraph};
use scoreformer::Error;

const STATS: DegreeStats = DegreeStats {
    log_mean: 0.9,
    lin_mean: 2.1,
};

fn graph_of(g: &MolecularGraph, id: u64, k: usize) -> FeaturizedGraph {
    let f = featurize_with_id(g, id);
    let m = compute_rwpe(&f, k).unwrap();
    attach_cache(f, m).unwrap()
}

fn mol(smiles: &str, id: u64, k: usize) -> FeaturizedGraph {
    graph_of(&parse_smiles(smiles).unwrap(), id, k)
}

fn preset(name: &str) -> ModelConfig {
    ModelConfig::preset(name).unwrap().with_degree_stats(STATS)
}

/// Two-layer, narrow variant of a preset for fast gradient checks.
fn small(name: &str) -> ModelConfig {
    let mut c = preset(name);
    c.hidden_dim = 8;
    c.num_layers = 2;
    c.rw_length = 3;
    c.readout_mlp_dims = vec![6, 4];
    if c.towers > 1 {
        c.towers = 2;
        c.attention_heads = 2;
    }
    c
}

fn no_dropout(mut c: ModelConfig) -> ModelConfig {
    c.dropout = 0.0;
    c.dropout_attn = 0.0;
    c.dropout_pe = 0.0;
    c
}

fn model(cfg: &ModelConfig, seed: u64) -> Model {
    build_model(cfg, &SeededRng::new(seed)).unwrap()
}

fn predict(m: &Model, graphs: &[&FeaturizedGraph]) -> Vec<f64> {
    m.predict(&m.collate(graphs).unwrap()).unwrap()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut g = SeededRng::new(seed).generator();
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| g.random_range(-1.0..1.0)).collect(),
    )
}

#[test]
fn scoreformer_preset_fields() {
    let c = ModelConfig::scoreformer();
    assert_eq!((c.hidden_dim, c.num_layers, c.towers, c.rw_length), (128, 4, 4, 9));
    assert_eq!(
        c.aggregators,
        [Aggregator::Mean, Aggregator::Min, Aggregator::Max, Aggregator::Std]
    );
    assert_eq!(
        c.scalers,
        [Scaler::Identity, Scaler::Amplification, Scaler::Attenuation]
    );
    assert_eq!((c.dropout, c.dropout_attn, c.dropout_pe), (0.1, 0.5, 0.1));
    assert_eq!((c.activation, c.activation_pe), (Activation::Relu, Activation::Tanh));
    assert_eq!((c.residual_weight, c.pre_fc_layers, c.post_fc_layers), (1.0, 1, 1));
}

#[test]
fn l_scoreformer_preset_fields() {
    let c = ModelConfig::l_scoreformer();
    assert_eq!((c.hidden_dim, c.num_layers, c.towers, c.rw_length), (24, 4, 1, 2));
    assert_eq!(
        c.aggregators,
        [
            Aggregator::Mul,
            Aggregator::Sum,
            Aggregator::Mean,
            Aggregator::Moment4,
            Aggregator::Moment5
        ]
    );
    assert_eq!(c.scalers, [Scaler::Linear, Scaler::InverseLinear]);
    assert_eq!((c.dropout, c.dropout_attn, c.dropout_pe), (0.245, 0.432, 0.188));
    assert_eq!((c.activation, c.activation_pe), (Activation::Elu, Activation::Relu));
    assert_eq!((c.residual_weight, c.pre_fc_layers, c.post_fc_layers), (0.035, 3, 2));
}

#[test]
fn parameter_counts() {
    let big = model(&preset("scoreformer"), 0);
    let little = model(&preset("l-scoreformer"), 0);
    assert_eq!(big.parameter_count(), 1_040_287);
    assert_eq!(little.parameter_count(), 62_055);
    assert!(little.parameter_count() < big.parameter_count());
    let summed: usize = big.params.iter().map(|p| p.value.numel()).sum();
    assert_eq!(summed, big.parameter_count());
    let input: usize = big
        .params
        .iter()
        .filter(|p| p.name.starts_with("input.x."))
        .map(|p| p.value.numel())
        .sum();
    assert_eq!(input, 24 * 128 + 128);
    for seed in [1, 2, 99] {
        assert_eq!(model(&preset("scoreformer"), seed).parameter_count(), 1_040_287);
    }
}

#[test]
fn init_is_glorot_uniform_with_zero_bias() {
    let m = model(&preset("l-scoreformer"), 3);
    for p in m.params.iter() {
        if p.name.ends_with(".weight") {
            let (i, o) = (p.value.rows(), p.value.cols());
            let limit = (6.0 / (i + o) as f64).sqrt();
            assert!(p.value.data().iter().all(|v| v.abs() <= limit), "{}", p.name);
        } else if p.name.ends_with(".gain") {
            assert!(p.value.data().iter().all(|&v| v == 1.0));
        } else {
            assert!(p.value.data().iter().all(|&v| v == 0.0), "{}", p.name);
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = preset("scoreformer");
    c.towers = 3;
    assert!(matches!(build_model(&c, &SeededRng::new(0)), Err(Error::Config(_))));
    let mut c = preset("scoreformer");
    c.aggregators.clear();
    assert!(matches!(build_model(&c, &SeededRng::new(0)), Err(Error::Config(_))));
    let mut c = preset("scoreformer");
    c.attention_heads = 5;
    assert!(build_model(&c, &SeededRng::new(0)).is_err());
    let mut c = preset("scoreformer");
    c.degree_stats = None;
    assert!(build_model(&c, &SeededRng::new(0)).is_err());
    let mut c = preset("scoreformer");
    c.rw_length = 0;
    assert!(build_model(&c, &SeededRng::new(0)).is_err());
    assert!(ModelConfig::preset("gigaformer").is_err());
}

#[test]
fn amplification_is_one_at_the_mean_log_degree() {
    let d = 3;
    let stats = DegreeStats {
        log_mean: ((d + 1) as f64).ln(),
        lin_mean: d as f64,
    };
    assert_eq!(Scaler::Amplification.factor(d, &stats), 1.0);
    assert_eq!(Scaler::Attenuation.factor(d, &stats), 1.0);
    assert_eq!(Scaler::Linear.factor(d, &stats), 1.0);
    assert_eq!(Scaler::InverseLinear.factor(d, &stats), 1.0);
    assert_eq!(Scaler::InverseLinear.factor(0, &stats), 3.0);
    assert!(Scaler::Attenuation.factor(0, &stats).is_finite());
}

fn aggregate(messages: &Tensor, targets: &[usize], n: usize, aggs: &[Aggregator], scalers: &[Scaler]) -> Tensor {
    let mut degrees = vec![0; n];
    for &t in targets {
        degrees[t] += 1;
    }
    let targets: Arc<[usize]> = targets.into();
    let mut tape = Tape::new();
    let terms = DegreeTerms::new(&mut tape, &targets, &degrees, scalers, &STATS);
    let m = tape.constant(messages.clone());
    let out = pna_aggregate(&mut tape, m, &terms, aggs).unwrap();
    tape.value(out).clone()
}

#[test]
fn identical_neighbors_aggregate_to_the_same_vector() {
    let v = [0.3, -1.2, 2.5];
    let messages = Tensor::from_rows(&[v.to_vec(), v.to_vec(), v.to_vec(), v.to_vec()]);
    let aggs = [Aggregator::Mean, Aggregator::Min, Aggregator::Max, Aggregator::Std];
    let out = aggregate(&messages, &[0, 0, 0, 0], 2, &aggs, &[Scaler::Identity]);
    assert_eq!(out.shape(), &[2, 12]);
    let row = out.row(0);
    for b in 0..3 {
        for c in 0..3 {
            assert!((row[b * 3 + c] - v[c]).abs() < 1e-12);
        }
    }
    for c in 0..3 {
        assert!(row[9 + c] >= 0.0 && row[9 + c] <= 1e-4);
    }
    assert!(out.row(1).iter().all(|&x| x == 0.0));
}

fn signed_root(c: f64, n: u32) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    let inv = 1.0 / n as f64;
    c.signum() * ((c.abs() + MOMENT_EPS).powf(inv) - MOMENT_EPS.powf(inv))
}

fn oracle_aggregate(vals: &[f64], agg: Aggregator) -> f64 {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    match agg {
        Aggregator::Mean => mean,
        Aggregator::Min => vals.iter().cloned().fold(f64::INFINITY, f64::min),
        Aggregator::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        Aggregator::Sum => vals.iter().sum(),
        Aggregator::Mul => vals.iter().product(),
        Aggregator::Std => {
            let sq = vals.iter().map(|v| v * v).sum::<f64>() / n;
            ((sq - mean * mean).max(0.0) + STD_EPS).sqrt()
        }
        Aggregator::Moment4 | Aggregator::Moment5 => {
            let order = if agg == Aggregator::Moment4 { 4 } else { 5 };
            let c = vals.iter().map(|v| (v - mean).powi(order)).sum::<f64>() / n;
            signed_root(c, order as u32)
        }
    }
}

#[test]
fn aggregation_matches_brute_force_oracle() {
    let aggs = [
        Aggregator::Mean,
        Aggregator::Min,
        Aggregator::Max,
        Aggregator::Std,
        Aggregator::Sum,
        Aggregator::Mul,
        Aggregator::Moment4,
        Aggregator::Moment5,
    ];
    let scalers = [
        Scaler::Identity,
        Scaler::Amplification,
        Scaler::Attenuation,
        Scaler::Linear,
        Scaler::InverseLinear,
    ];
    let targets = [0, 1, 0, 3, 0, 1, 0];
    let width = 5;
    let messages = random_matrix(targets.len(), width, 11);
    let n = 4;
    let out = aggregate(&messages, &targets, n, &aggs, &scalers);
    assert_eq!(out.shape(), &[n, aggs.len() * scalers.len() * width]);
    for node in 0..n {
        let rows: Vec<usize> = (0..targets.len()).filter(|&e| targets[e] == node).collect();
        for (a, &agg) in aggs.iter().enumerate() {
            for (s, &scaler) in scalers.iter().enumerate() {
                for c in 0..width {
                    let got = out.at(node, (a * scalers.len() + s) * width + c);
                    let want = if rows.is_empty() {
                        0.0
                    } else {
                        let vals: Vec<f64> = rows.iter().map(|&e| messages.at(e, c)).collect();
                        scaler.factor(rows.len(), &STATS) * oracle_aggregate(&vals, agg)
                    };
                    assert!(
                        (got - want).abs() < 1e-12,
                        "node {node} {agg:?} {scaler:?} col {c}: {got} vs {want}"
                    );
                }
            }
        }
    }
}

#[test]
fn feature_conv_on_edgeless_graph_sees_a_zero_aggregate() {
    let cfg = small("scoreformer");
    let m = model(&cfg, 5);
    let g = mol("C", 0, cfg.rw_length);
    let batch = m.collate(&[&g]).unwrap();
    let mut tape = Tape::new();
    let p = m.params.bind(&mut tape);
    let ctx = ConvContext::new(&mut tape, &cfg, &batch).unwrap();
    let h = tape.constant(random_matrix(1, cfg.hidden_dim + cfg.rw_length, 2));
    let out = m.layers[0].conv.forward(&mut tape, &p, h, &ctx, &cfg).unwrap();
    let got = tape.value(out).clone();

    let FeatureConv::Pna { towers, mix } = &m.layers[0].conv else {
        panic!("expected a PNA conv")
    };
    let blocks = cfg.aggregators.len() * cfg.scalers.len() * cfg.tower_dim();
    let zeros = tape.constant(Tensor::zeros(&[1, blocks]));
    let u = tape.concat(&[h, zeros], 1).unwrap();
    let outs: Vec<_> = towers
        .iter()
        .map(|t| t.post.forward(&mut tape, &p, u).unwrap())
        .collect();
    let cat = tape.concat(&outs, 1).unwrap();
    let want = mix.forward(&mut tape, &p, cat).unwrap();
    assert!(got.max_abs_diff(tape.value(want)) < 1e-12);
}

#[test]
fn pe_update_on_edgeless_graph_uses_post_stack_only() {
    let cfg = small("l-scoreformer");
    let m = model(&cfg, 6);
    let g = mol("C", 0, cfg.rw_length);
    let batch = m.collate(&[&g]).unwrap();
    let mut tape = Tape::new();
    let p = m.params.bind(&mut tape);
    let ctx = ConvContext::new(&mut tape, &cfg, &batch).unwrap();
    let pe = tape.constant(random_matrix(1, cfg.rw_length, 4));
    let layer = &m.layers[0];
    let out = layer
        .pe_update(&mut tape, &p, pe, &ctx, &cfg, false, &SeededRng::new(0))
        .unwrap();
    let got = tape.value(out).clone();

    let tower = layer.pe_conv.as_ref().unwrap();
    let blocks = cfg.aggregators.len() * cfg.scalers.len() * cfg.rw_length;
    let zeros = tape.constant(Tensor::zeros(&[1, blocks]));
    let u = tape.concat(&[pe, zeros], 1).unwrap();
    let y = tower.post.forward(&mut tape, &p, u).unwrap();
    let y = tape.activation(y, cfg.activation_pe).unwrap();
    let skip = tape.scale(pe, cfg.residual_weight).unwrap();
    let want = tape.add(skip, y).unwrap();
    assert!(got.max_abs_diff(tape.value(want)) < 1e-12);
}

#[test]
fn triangle_with_constant_pe_gives_constant_rows() {
    for name in ["scoreformer", "l-scoreformer"] {
        let cfg = small(name);
        let m = model(&cfg, 7);
        let g = mol("C1CC1", 0, cfg.rw_length);
        let batch = m.collate(&[&g]).unwrap();
        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape);
        let ctx = ConvContext::new(&mut tape, &cfg, &batch).unwrap();
        let row = random_matrix(1, cfg.rw_length, 8).into_data();
        let pe = tape.constant(Tensor::from_rows(&[row.clone(), row.clone(), row]));
        let out = m.layers[0]
            .pe_update(&mut tape, &p, pe, &ctx, &cfg, false, &SeededRng::new(0))
            .unwrap();
        let v = tape.value(out);
        for r in 1..3 {
            for c in 0..cfg.rw_length {
                assert!((v.at(r, c) - v.at(0, c)).abs() < 1e-12);
            }
        }
    }
}

fn attention_output(m: &Model, cfg: &ModelConfig, batch: &GraphBatch, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let p = m.params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = m.layers[0]
        .attention
        .forward(&mut tape, &p, xv, batch, cfg, false, &SeededRng::new(0))
        .unwrap();
    tape.value(out).clone()
}

fn linear_rows(m: &Model, lin: &scoreformer::model::Linear, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let p = m.params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = lin.forward(&mut tape, &p, xv).unwrap();
    tape.value(y).clone()
}

#[test]
fn single_node_attention_is_value_then_output_projection() {
    let cfg = preset("scoreformer");
    let m = model(&cfg, 9);
    let g = mol("O", 0, cfg.rw_length);
    let batch = m.collate(&[&g]).unwrap();
    let x = random_matrix(1, cfg.hidden_dim, 10);
    let got = attention_output(&m, &cfg, &batch, &x);
    let att = &m.layers[0].attention;
    let want = linear_rows(&m, &att.out, &linear_rows(&m, &att.v, &x));
    assert!(got.max_abs_diff(&want) < 1e-12);
}

#[test]
fn attention_is_masked_to_each_graph() {
    let cfg = preset("scoreformer");
    let m = model(&cfg, 12);
    let a = mol("CCO", 0, cfg.rw_length);
    let b = mol("c1ccccc1", 1, cfg.rw_length);
    let batch = m.collate(&[&a, &b]).unwrap();
    let x = random_matrix(9, cfg.hidden_dim, 13);
    let mut zeroed = x.clone();
    zeroed.data_mut()[3 * cfg.hidden_dim..]
        .iter_mut()
        .for_each(|v| *v = 0.0);
    let full = attention_output(&m, &cfg, &batch, &x);
    let masked = attention_output(&m, &cfg, &batch, &zeroed);
    assert_eq!(&full.data()[..3 * cfg.hidden_dim], &masked.data()[..3 * cfg.hidden_dim]);
}

#[test]
fn identical_keys_give_uniform_attention() {
    let cfg = preset("l-scoreformer");
    let mut m = model(&cfg, 14);
    let kw = m.layers[0].attention.k.weight;
    m.params.get_mut(kw).value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    let g = mol("CCCC", 0, cfg.rw_length);
    let batch = m.collate(&[&g]).unwrap();
    let x = random_matrix(4, cfg.hidden_dim, 15);
    let got = attention_output(&m, &cfg, &batch, &x);
    let att = &m.layers[0].attention;
    let v = linear_rows(&m, &att.v, &x);
    let mean: Vec<f64> = (0..cfg.hidden_dim)
        .map(|c| (0..4).map(|r| v.at(r, c)).sum::<f64>() / 4.0)
        .collect();
    let want = linear_rows(&m, &att.out, &Tensor::from_rows(&vec![mean; 4]));
    assert!(got.max_abs_diff(&want) < 1e-12);
}

#[test]
fn gps_block_wiring_with_zeroed_weights() {
    let mut cfg = small("scoreformer");
    cfg.residual_weight = 0.0;
    let mut m = model(&cfg, 16);
    let b1 = random_matrix(1, cfg.hidden_dim, 17).into_data();
    let b2 = random_matrix(1, cfg.hidden_dim, 18).into_data();
    let (n1, n2) = (m.layers[0].norm1.bias, m.layers[0].norm2.bias);
    for p in m.params.iter_mut() {
        if p.name.starts_with("layer0.") && !p.name.ends_with(".gain") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    m.params.get_mut(n1).value.data_mut().copy_from_slice(&b1);
    m.params.get_mut(n2).value.data_mut().copy_from_slice(&b2);

    let g = mol("CC(=O)N", 0, cfg.rw_length);
    let batch = m.collate(&[&g]).unwrap();
    let mut tape = Tape::new();
    let p = m.params.bind(&mut tape);
    let ctx = ConvContext::new(&mut tape, &cfg, &batch).unwrap();
    let (x, pe) = m.embed(&mut tape, &p, &batch).unwrap();
    let (x2, _) = m.layers[0]
        .forward(&mut tape, &p, x, pe, &ctx, &cfg, false, &SeededRng::new(0))
        .unwrap();
    let mean = b1.iter().sum::<f64>() / b1.len() as f64;
    let var = b1.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / b1.len() as f64;
    let want: Vec<f64> = b1
        .iter()
        .zip(&b2)
        .map(|(v, b)| (v - mean) / (var + LAYER_NORM_EPS).sqrt() + b)
        .collect();
    let out = tape.value(x2);
    for r in 0..4 {
        for (c, w) in want.iter().enumerate() {
            assert!((out.at(r, c) - w).abs() < 1e-12);
        }
    }
}

fn block_outputs(m: &Model, g: &FeaturizedGraph) -> (Tensor, Tensor) {
    let cfg = &m.config;
    let batch = m.collate(&[g]).unwrap();
    let mut tape = Tape::new();
    let p = m.params.bind(&mut tape);
    let ctx = ConvContext::new(&mut tape, cfg, &batch).unwrap();
    let (x, pe) = m.embed(&mut tape, &p, &batch).unwrap();
    let (x, pe) = m.layers[0]
        .forward(&mut tape, &p, x, pe, &ctx, cfg, false, &SeededRng::new(0))
        .unwrap();
    (tape.value(x).clone(), tape.value(pe.unwrap()).clone())
}

#[test]
fn gps_block_is_permutation_equivariant() {
    for name in ["scoreformer", "l-scoreformer"] {
        let cfg = small(name);
        let m = model(&cfg, 19);
        let g = parse_smiles("CC(C)Oc1ccc(N)cc1").unwrap();
        let perm = common::random_perm(g.num_atoms(), 20);
        let (x, pe) = block_outputs(&m, &graph_of(&g, 0, cfg.rw_length));
        let (xp, pep) = block_outputs(&m, &graph_of(&common::permute(&g, &perm), 0, cfg.rw_length));
        for (i, &j) in perm.iter().enumerate() {
            for c in 0..x.cols() {
                assert!((x.at(i, c) - xp.at(j, c)).abs() < 1e-9);
            }
            for c in 0..pe.cols() {
                assert!((pe.at(i, c) - pep.at(j, c)).abs() < 1e-9);
            }
        }
    }
}

/// Random biases keep pre-activations off the ReLU kink, where structural
/// zeros (such as an isolated atom's RWPE row) would otherwise sit.
fn generic_point(m: &mut Model, seed: u64) {
    let mut g = SeededRng::new(seed).generator();
    for p in m.params.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = g.random_range(-0.5..0.5));
    }
}

fn gradient_error(m: &Model, graphs: &[&FeaturizedGraph]) -> f64 {
    let batch = m.collate(graphs).unwrap();
    let values: Vec<Tensor> = m.params.iter().map(|p| p.value.clone()).collect();
    let r = finite_diff_check_many(
        |tape: &mut Tape, vars| -> Result<_, Error> {
            let p = BoundParams::from_vars(vars.to_vec());
            let z = m.forward(tape, &p, &batch, false, &SeededRng::new(0))?;
            let sq = tape.powi(z, 2)?;
            Ok(tape.sum_all(sq)?)
        },
        &values,
        1e-5,
        Some((3, 21)),
    )
    .unwrap();
    assert!(r.checked > values.len());
    r.max_rel_error
}

fn gradient_batch(k: usize) -> Vec<FeaturizedGraph> {
    ["CCO", "C1CC1N", "CC(C)(C)c1ccccc1", "C"]
        .iter()
        .enumerate()
        .map(|(i, s)| mol(s, i as u64, k))
        .collect()
}

#[test]
fn gradients_match_finite_differences() {
    for (name, kind) in [
        ("scoreformer", ConvKind::Pna),
        ("l-scoreformer", ConvKind::Pna),
        ("scoreformer", ConvKind::Gcn),
    ] {
        let mut cfg = small(name);
        cfg.conv_kind = kind;
        let mut m = model(&cfg, 22);
        generic_point(&mut m, 40);
        let graphs = gradient_batch(cfg.rw_length);
        let refs: Vec<_> = graphs.iter().collect();
        let err = gradient_error(&m, &refs);
        assert!(err < 1e-4, "{name} {kind:?}: {err}");
    }
}

#[test]
fn gradients_without_rwpe_match_finite_differences() {
    let mut cfg = small("l-scoreformer");
    cfg.use_rwpe = false;
    let mut m = model(&cfg, 23);
    generic_point(&mut m, 41);
    let graphs = gradient_batch(3);
    let refs: Vec<_> = graphs.iter().collect();
    assert!(gradient_error(&m, &refs) < 1e-4);
}

#[test]
fn single_atom_prediction_is_finite() {
    for name in ["scoreformer", "l-scoreformer"] {
        let cfg = preset(name);
        let m = model(&cfg, 24);
        let z = predict(&m, &[&mol("C", 0, cfg.rw_length)]);
        assert_eq!(z.len(), 1);
        assert!(z[0].is_finite());
    }
}

#[test]
fn duplicate_graphs_get_identical_predictions() {
    let cfg = preset("scoreformer");
    let m = model(&cfg, 25);
    let g = mol("Cc1ccc(O)cc1", 0, cfg.rw_length);
    let z = predict(&m, &[&g, &g]);
    assert_eq!(z[0], z[1]);
}

#[test]
fn predictions_are_isolated_from_batch_mates() {
    let cfg = preset("l-scoreformer");
    let m = model(&cfg, 26);
    let a = mol("CC(=O)Nc1ccccc1", 0, cfg.rw_length);
    let b = mol("C1CCNCC1", 1, cfg.rw_length);
    let c = mol("O", 2, cfg.rw_length);
    let alone = predict(&m, &[&a])[0];
    let with = predict(&m, &[&b, &a, &c]);
    assert!((alone - with[1]).abs() <= 1e-9);
}

#[test]
fn without_rwpe_the_cache_contents_are_ignored() {
    let mut cfg = preset("l-scoreformer");
    cfg.use_rwpe = false;
    let m = model(&cfg, 27);
    let g = parse_smiles("CCN(C)C").unwrap();
    let bare = featurize_with_id(&g, 0);
    let junk = attach_cache(bare.clone(), RwpeMatrix::new(random_matrix(5, 4, 28)).unwrap()).unwrap();
    assert_eq!(predict(&m, &[&bare]), predict(&m, &[&junk]));
}

#[test]
fn zero_dropout_training_equals_inference() {
    let cfg = no_dropout(preset("scoreformer"));
    let m = model(&cfg, 29);
    let graphs = gradient_batch(cfg.rw_length);
    let refs: Vec<_> = graphs.iter().collect();
    let batch = m.collate(&refs).unwrap();
    let mut tape = Tape::new();
    let p = m.params.bind(&mut tape);
    let z = m.forward(&mut tape, &p, &batch, true, &SeededRng::new(30)).unwrap();
    assert_eq!(tape.value(z).data(), predict(&m, &refs).as_slice());
}

#[test]
fn dropout_changes_training_outputs() {
    let cfg = preset("scoreformer");
    let m = model(&cfg, 31);
    let g = mol("CCOC(=O)C", 0, cfg.rw_length);
    let batch = m.collate(&[&g]).unwrap();
    let run = |seed| {
        let mut tape = Tape::new();
        let p = m.params.bind(&mut tape);
        let z = m.forward(&mut tape, &p, &batch, true, &SeededRng::new(seed)).unwrap();
        tape.value(z).item()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

#[test]
fn gcn_conv_matches_star_oracle() {
    let mut cfg = small("scoreformer");
    cfg.conv_kind = ConvKind::Gcn;
    let m = model(&cfg, 32);
    let g = mol("CC(C)C", 0, cfg.rw_length);
    let batch = m.collate(&[&g]).unwrap();
    let width = cfg.hidden_dim + cfg.rw_length;
    let h = random_matrix(4, width, 33);
    let mut tape = Tape::new();
    let p = m.params.bind(&mut tape);
    let ctx = ConvContext::new(&mut tape, &cfg, &batch).unwrap();
    let hv = tape.constant(h.clone());
    let out = m.layers[0].conv.forward(&mut tape, &p, hv, &ctx, &cfg).unwrap();
    let got = tape.value(out).clone();

    let FeatureConv::Gcn(conv) = &m.layers[0].conv else {
        panic!("expected a GCN conv")
    };
    let ws = &m.params.get(conv.self_lin.weight).value;
    let bs = &m.params.get(conv.self_lin.bias.unwrap()).value;
    let wn = &m.params.get(conv.neighbor_lin.weight).value;
    assert!(conv.neighbor_lin.bias.is_none());
    let neighbors = |i: usize| -> Vec<usize> {
        if i == 1 {
            vec![0, 2, 3]
        } else {
            vec![1]
        }
    };
    let degree = |i: usize| neighbors(i).len() as f64;
    for i in 0..4 {
        for o in 0..cfg.hidden_dim {
            let mut want = bs.data()[o];
            for c in 0..width {
                want += h.at(i, c) * ws.at(c, o);
            }
            for j in neighbors(i) {
                let coef = 1.0 / ((degree(i) + 1.0) * (degree(j) + 1.0)).sqrt();
                for c in 0..width {
                    want += coef * h.at(j, c) * wn.at(c, o);
                }
            }
            assert!((got.at(i, o) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn missing_or_mismatched_rwpe_is_an_error() {
    let cfg = preset("scoreformer");
    let m = model(&cfg, 34);
    let bare = featurize_with_id(&parse_smiles("CCO").unwrap(), 0);
    assert!(matches!(m.collate(&[&bare]), Err(Error::Data(_))));
    let wrong = mol("CCO", 0, 4);
    match m.collate(&[&wrong]) {
        Err(Error::Config(msg)) => assert!(msg.contains('4') && msg.contains('9'), "{msg}"),
        other => panic!("expected a config error, got {other:?}"),
    }
    assert!(m.collate(&[]).is_err());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut m = model(&preset("l-scoreformer"), 35);
    m.target_mean = -6.5;
    m.target_std = 2.25;
    let ck = Checkpoint {
        model: m,
        meta: TrainMeta {
            selected_epoch: 7,
            ..TrainMeta::default()
        },
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
    assert_eq!(back.meta, ck.meta);
    let graphs = gradient_batch(2);
    let refs: Vec<_> = graphs.iter().collect();
    assert_eq!(predict(&back.model, &refs), predict(&ck.model, &refs));

    let bytes = std::fs::read(&path).unwrap();
    let mut corrupt = bytes.clone();
    let last = corrupt.len() - 1;
    corrupt[last] ^= 0x40;
    std::fs::write(&path, &corrupt).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
    std::fs::write(&path, b"SFPD").unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn predictions_are_invariant_to_relabeling(seed in 0u64..10_000, name in prop::sample::select(vec!["scoreformer", "l-scoreformer"])) {
        let cfg = small(name);
        let m = model(&cfg, seed);
        let g = common::random_graph(seed, 8);
        let perm = common::random_perm(g.num_atoms(), seed + 1);
        let a = predict(&m, &[&graph_of(&g, 0, cfg.rw_length)])[0];
        let b = predict(&m, &[&graph_of(&common::permute(&g, &perm), 0, cfg.rw_length)])[0];
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn forward_is_finite_on_random_batches(seed in 0u64..10_000) {
        let cfg = small("l-scoreformer");
        let m = model(&cfg, seed);
        let graphs: Vec<_> = (0..4).map(|i| graph_of(&common::random_graph(seed * 4 + i, 8), i, cfg.rw_length)).collect();
        let refs: Vec<_> = graphs.iter().collect();
        prop_assert!(predict(&m, &refs).iter().all(|z| z.is_finite()));
    }
}
