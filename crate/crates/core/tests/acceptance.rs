//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity,
    clippy::needless_range_loop
)]

mod common;

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use scoreformer::cli::{
    self, ablate, benchmark, evaluate_command, predict_command, preprocess, train_command, BenchmarkSettings,
    EvalOptions, SplitName, Variant,
};
use scoreformer::metrics::{
    attainable_recall, aurtc, f1_at_fraction, log_grid, pearson, r_squared, recall_zeta_sigma, res_score,
    threshold_count, wmse, PredictionSet,
};
use scoreformer::model::{build_model, ConvKind, DegreeStats, Model, ModelConfig};
use scoreformer::numeric::{
    finite_diff_check_many, Activation, BoundParams, NumericError, ReduceKind, SeededRng, SegmentKind, Tape, Tensor,
    Var,
};
use scoreformer::pipeline::{make_data, prepare, random_smiles, write_dataset, PreparedDataset};
use scoreformer::rwpe::{attach_cache, compute_rwpe};
use scoreformer::smiles::{featurize_with_id, parse_smiles, FeaturizedGraph, MolecularGraph};
use scoreformer::train::{predict_records, split_indices, train, Selection, SplitMode, SplitSpec, Splits, TrainConfig};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut g = SeededRng::new(seed).generator();
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| g.random_range(-1.0..1.0)).collect(),
    )
}

fn graph_of(g: &MolecularGraph, id: u64, k: usize) -> FeaturizedGraph {
    let f = featurize_with_id(g, id);
    let m = compute_rwpe(&f, k).unwrap();
    attach_cache(f, m).unwrap()
}

/// Random synthetic molecules with at most `max_atoms` heavy atoms.
fn small_molecules(count: usize, max_atoms: usize, seed: u64) -> Vec<MolecularGraph> {
    let mut rng = SeededRng::new(seed).generator();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let g = parse_smiles(&random_smiles(&mut rng)).unwrap();
        if g.num_atoms() <= max_atoms {
            out.push(g);
        }
    }
    out
}

fn median(v: &[f64]) -> f64 {
    cli::median(v)
}

// 1. Gradient suite

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, NumericError>>;

fn op_cases() -> Vec<(&'static str, OpFn, Vec<Tensor>)> {
    let x = random_matrix(3, 4, 10);
    let y = random_matrix(3, 4, 11);
    let a = random_matrix(3, 2, 12);
    let b = random_matrix(2, 4, 13);
    let idx: Arc<[usize]> = vec![2, 0, 2, 1].into();
    let seg: Arc<[usize]> = vec![1, 0, 1].into();
    let ranges: Arc<[(usize, usize)]> = vec![(0, 1), (1, 3)].into();
    let mask: Vec<bool> = (0..12).map(|i| i % 4 != 1).collect();
    let rng = SeededRng::new(9);
    let rv = Tensor::vector(vec![0.3, -0.7, 1.1, 0.2]);
    let cv = Tensor::vector(vec![1.5, -0.5, 0.25]);
    let xy = vec![x.clone(), y.clone()];
    let mut cases: Vec<(&'static str, OpFn, Vec<Tensor>)> = vec![
        (
            "matmul",
            Box::new(|t, v| {
                let z = t.matmul(v[0], v[1])?;
                let z = t.powi(z, 2)?;
                t.sum_all(z)
            }),
            vec![a.clone(), b.clone()],
        ),
        (
            "add",
            Box::new(|t, v| {
                let z = t.add(v[0], v[1])?;
                let z = t.powi(z, 2)?;
                t.sum_all(z)
            }),
            xy.clone(),
        ),
        (
            "sub",
            Box::new(|t, v| {
                let z = t.sub(v[0], v[1])?;
                let z = t.powi(z, 3)?;
                t.sum_all(z)
            }),
            xy.clone(),
        ),
        (
            "mul",
            Box::new(|t, v| {
                let z = t.mul(v[0], v[1])?;
                let z = t.mul(z, v[0])?;
                t.sum_all(z)
            }),
            xy.clone(),
        ),
        (
            "scale",
            Box::new(|t, v| {
                let z = t.scale(v[0], -2.5)?;
                let z = t.powi(z, 2)?;
                t.sum_all(z)
            }),
            vec![x.clone()],
        ),
        (
            "add_row_vec",
            Box::new(|t, v| {
                let z = t.add_row_vec(v[0], v[1])?;
                let z = t.powi(z, 2)?;
                t.sum_all(z)
            }),
            vec![x.clone(), rv.clone()],
        ),
        (
            "mul_row_vec",
            Box::new(|t, v| {
                let z = t.mul_row_vec(v[0], v[1])?;
                let z = t.powi(z, 2)?;
                t.sum_all(z)
            }),
            vec![x.clone(), rv.clone()],
        ),
        (
            "mul_col",
            Box::new(|t, v| {
                let z = t.mul_col(v[0], v[1])?;
                let z = t.powi(z, 2)?;
                t.sum_all(z)
            }),
            vec![x.clone(), cv.clone()],
        ),
        (
            "concat",
            Box::new(|t, v| {
                let z = t.concat(&[v[0], v[1]], 1)?;
                let z = t.powi(z, 3)?;
                t.sum_all(z)
            }),
            vec![x.clone(), a.clone()],
        ),
        (
            "slice",
            Box::new(|t, v| {
                let z = t.slice(v[0], 1, 1, 3)?;
                let z = t.powi(z, 3)?;
                t.sum_all(z)
            }),
            vec![x.clone()],
        ),
        (
            "gather_rows",
            Box::new(move |t, v| {
                let z = t.gather_rows(v[0], &idx)?;
                let z = t.powi(z, 3)?;
                t.sum_all(z)
            }),
            vec![x.clone()],
        ),
        (
            "exp",
            Box::new(|t, v| {
                let z = t.exp(v[0])?;
                t.sum_all(z)
            }),
            vec![x.clone()],
        ),
        (
            "log",
            Box::new(|t, v| {
                let z = t.powi(v[0], 2)?;
                let z = t.exp(z)?;
                let z = t.log(z)?;
                t.sum_all(z)
            }),
            vec![x.clone()],
        ),
        (
            "sqrt",
            Box::new(|t, v| {
                let z = t.exp(v[0])?;
                let z = t.sqrt(z)?;
                t.sum_all(z)
            }),
            vec![x.clone()],
        ),
        (
            "signed_root",
            Box::new(|t, v| {
                let z = t.signed_root(v[0], 4, 1e-8)?;
                let w = t.signed_root(v[1], 5, 1e-8)?;
                let s = t.add(z, w)?;
                t.sum_all(s)
            }),
            xy.clone(),
        ),
        (
            "softmax",
            Box::new(|t, v| {
                let z = t.softmax(v[0], None)?;
                let z = t.mul(z, v[1])?;
                t.sum_all(z)
            }),
            xy.clone(),
        ),
        (
            "masked_softmax",
            Box::new(move |t, v| {
                let z = t.softmax(v[0], Some(&mask))?;
                let z = t.mul(z, v[1])?;
                t.sum_all(z)
            }),
            xy.clone(),
        ),
        (
            "layer_norm",
            Box::new(|t, v| {
                let z = t.layer_norm(v[0], 1e-5)?;
                let z = t.mul(z, v[1])?;
                t.sum_all(z)
            }),
            xy.clone(),
        ),
        (
            "mean_all",
            Box::new(|t, v| {
                let z = t.powi(v[0], 2)?;
                t.mean_all(z)
            }),
            vec![x.clone()],
        ),
        (
            "dropout",
            Box::new(move |t, v| {
                let z = t.dropout(v[0], 0.3, true, &rng)?;
                let z = t.powi(z, 2)?;
                t.sum_all(z)
            }),
            vec![x.clone()],
        ),
    ];
    for act in [Activation::Relu, Activation::Elu, Activation::Tanh, Activation::Sigmoid] {
        cases.push((
            "activation",
            Box::new(move |t, v| {
                let z = t.activation(v[0], act)?;
                let z = t.mul(z, v[1])?;
                t.sum_all(z)
            }),
            xy.clone(),
        ));
    }
    for kind in [ReduceKind::Sum, ReduceKind::Mean, ReduceKind::Max, ReduceKind::Min] {
        for axis in [None, Some(0), Some(1)] {
            cases.push((
                "reduce",
                Box::new(move |t, v| {
                    let z = t.reduce(v[0], kind, axis)?;
                    let z = t.powi(z, 2)?;
                    t.sum_all(z)
                }),
                vec![a.clone()],
            ));
        }
    }
    for kind in [
        SegmentKind::Sum,
        SegmentKind::Mean,
        SegmentKind::Max,
        SegmentKind::Min,
        SegmentKind::Prod,
    ] {
        let seg = seg.clone();
        cases.push((
            "segment_reduce",
            Box::new(move |t, v| {
                let z = t.segment_reduce(v[0], kind, &seg, 3)?;
                let z = t.powi(z, 2)?;
                t.sum_all(z)
            }),
            vec![x.clone()],
        ));
    }
    for (p, training) in [(0.0, false), (0.4, true)] {
        let ranges = ranges.clone();
        let rng = SeededRng::new(4);
        cases.push((
            "block_attention",
            Box::new(move |t, v| {
                let z = t.block_attention(v[0], v[1], v[2], &ranges, 2, p, training, &rng)?;
                let z = t.mul(z, v[3])?;
                t.sum_all(z)
            }),
            vec![x.clone(), y.clone(), random_matrix(3, 4, 14), random_matrix(3, 4, 15)],
        ));
    }
    cases
}

fn model_gradient_error(cfg: &ModelConfig, seed: u64) -> Result<f64, String> {
    let mut m = build_model(cfg, &SeededRng::new(seed)).map_err(fail)?;
    let mut g = SeededRng::new(seed + 1).generator();
    for p in m.params.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        p.value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = g.random_range(-0.5..0.5));
    }
    let graphs: Vec<FeaturizedGraph> = small_molecules(4, 8, seed + 2)
        .iter()
        .enumerate()
        .map(|(i, mol)| graph_of(mol, i as u64, cfg.rw_length))
        .collect();
    let refs: Vec<&FeaturizedGraph> = graphs.iter().collect();
    let batch = m.collate(&refs).map_err(fail)?;
    let values: Vec<Tensor> = m.params.iter().map(|p| p.value.clone()).collect();
    let r = finite_diff_check_many(
        |tape: &mut Tape, vars| -> Result<Var, scoreformer::Error> {
            let p = BoundParams::from_vars(vars.to_vec());
            let z = m.forward(tape, &p, &batch, false, &SeededRng::new(0))?;
            let sq = tape.powi(z, 2)?;
            Ok(tape.sum_all(sq)?)
        },
        &values,
        1e-5,
        Some((3, seed)),
    )
    .map_err(fail)?;
    Ok(r.max_rel_error)
}

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let cases = op_cases();
    for (name, f, xs) in &cases {
        let r = finite_diff_check_many(f, xs, 1e-5, None).map_err(fail)?;
        ensure!(r.max_rel_error < 1e-4, "{name}: relative error {:.2e}", r.max_rel_error);
        worst = worst.max(r.max_rel_error);
    }
    let stats = DegreeStats {
        log_mean: 0.9,
        lin_mean: 2.1,
    };
    for (name, kind) in [
        ("scoreformer", ConvKind::Pna),
        ("l-scoreformer", ConvKind::Pna),
        ("scoreformer", ConvKind::Gcn),
    ] {
        let mut cfg = ModelConfig::preset(name).map_err(fail)?.with_degree_stats(stats);
        cfg.num_layers = 2;
        cfg.conv_kind = kind;
        let err = model_gradient_error(&cfg, 17)?;
        ensure!(err < 1e-4, "{name} ({kind:?}): relative error {err:.2e}");
        worst = worst.max(err);
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "{} op checks + 3 model checks, max rel error {worst:.1e}, {elapsed:.1?}",
        cases.len()
    ))
}

// 2. RWPE oracle

fn dense_return_probabilities(g: &MolecularGraph, k: usize) -> Vec<Vec<f64>> {
    let n = g.num_atoms();
    let mut t = vec![vec![0.0; n]; n];
    for b in &g.bonds {
        t[b.a][b.b] = 1.0;
        t[b.b][b.a] = 1.0;
    }
    for row in t.iter_mut() {
        let d: f64 = row.iter().sum();
        if d > 0.0 {
            row.iter_mut().for_each(|x| *x /= d);
        }
    }
    let mut power = t.clone();
    let mut out = vec![vec![0.0; k]; n];
    for step in 0..k {
        for i in 0..n {
            out[i][step] = power[i][i];
        }
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for l in 0..n {
                for j in 0..n {
                    next[i][j] += power[i][l] * t[l][j];
                }
            }
        }
        power = next;
    }
    out
}

fn rwpe_rows(smiles: &str, k: usize) -> Vec<Vec<f64>> {
    let g = featurize_with_id(&parse_smiles(smiles).unwrap(), 0);
    let m = compute_rwpe(&g, k).unwrap();
    (0..m.num_nodes()).map(|i| m.row(i).to_vec()).collect()
}

fn rwpe_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, mol) in small_molecules(50, 12, 202).iter().enumerate() {
        let k = 1 + i % 10;
        let m = compute_rwpe(&featurize_with_id(mol, 0), k).map_err(fail)?;
        let oracle = dense_return_probabilities(mol, k);
        for (node, want) in oracle.iter().enumerate() {
            for (got, want) in m.row(node).iter().zip(want) {
                worst = worst.max((got - want).abs());
            }
        }
    }
    ensure!(worst <= 1e-12, "max deviation from dense powers {worst:.2e}");
    let triangle = rwpe_rows("C1CC1", 4);
    ensure!(
        triangle.iter().all(|r| r == &[0.0, 0.5, 0.25, 0.375]),
        "triangle {triangle:?}"
    );
    let path = rwpe_rows("CCC", 4);
    ensure!(path[1] == [0.0, 1.0, 0.0, 1.0], "path centre {:?}", path[1]);
    ensure!(
        path[0] == [0.0, 0.5, 0.0, 0.5] && path[2] == path[0],
        "path ends {path:?}"
    );
    let star = rwpe_rows("CC(C)(C)C", 4);
    ensure!(star[1] == [0.0, 1.0, 0.0, 1.0], "star centre {:?}", star[1]);
    ensure!(
        [0, 2, 3, 4].iter().all(|&l| star[l] == [0.0, 0.25, 0.0, 0.25]),
        "star leaves {star:?}"
    );
    Ok(format!(
        "50 molecules within {worst:.1e}; triangle, path and star exact"
    ))
}

// 3. Metric oracles

/// Record indices in ascending value order, ties by ascending id.
fn order(values: &[f64], ids: &[String]) -> Vec<usize> {
    let mut o: Vec<usize> = (0..values.len()).collect();
    o.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap()
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    o
}

struct Oracle {
    y_order: Vec<usize>,
    z_order: Vec<usize>,
}

impl Oracle {
    fn new(p: &PredictionSet) -> Self {
        Self {
            y_order: order(&p.y, &p.ids),
            z_order: order(&p.z, &p.ids),
        }
    }

    fn overlap(&self, zeta: f64, sigma: f64) -> (usize, usize, usize) {
        let n = self.y_order.len();
        let t = ((sigma * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        let k = ((zeta * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        let mut predicted = vec![false; n];
        self.z_order[..k].iter().for_each(|&i| predicted[i] = true);
        (self.y_order[..t].iter().filter(|&&i| predicted[i]).count(), t, k)
    }

    fn recall(&self, zeta: f64, sigma: f64) -> f64 {
        let (both, t, _) = self.overlap(zeta, sigma);
        both as f64 / t as f64
    }

    fn attainable(&self, zeta: f64, sigma: f64) -> f64 {
        let (both, t, k) = self.overlap(zeta, sigma);
        both as f64 / t.min(k) as f64
    }

    fn aurtc(&self, zeta: f64, grid: &[f64]) -> f64 {
        let ys: Vec<f64> = grid.iter().map(|&s| self.attainable(zeta, s)).collect();
        trapezoid(grid, &ys)
    }

    fn res(&self, grid: &[f64]) -> f64 {
        let rows: Vec<f64> = grid.iter().map(|&z| self.aurtc(z, grid)).collect();
        trapezoid(grid, &rows)
    }

    fn f1(&self, fraction: f64) -> f64 {
        let (both, h, _) = self.overlap(fraction, fraction);
        if both == 0 {
            return 0.0;
        }
        let p = both as f64 / h as f64;
        2.0 * p * p / (p + p)
    }
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    let mut area = 0.0;
    for i in 1..xs.len() {
        area += 0.5 * (ys[i] + ys[i - 1]) * (xs[i].log10() - xs[i - 1].log10());
    }
    area / (xs[xs.len() - 1].log10() - xs[0].log10())
}

fn textbook_pearson(y: &[f64], z: &[f64]) -> f64 {
    let n = y.len() as f64;
    let (sy, sz): (f64, f64) = (y.iter().sum(), z.iter().sum());
    let syy: f64 = y.iter().map(|v| v * v).sum();
    let szz: f64 = z.iter().map(|v| v * v).sum();
    let syz: f64 = y.iter().zip(z).map(|(a, b)| a * b).sum();
    (n * syz - sy * sz) / ((n * syy - sy * sy).sqrt() * (n * szz - sz * sz).sqrt())
}

fn textbook_r2(y: &[f64], z: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = y.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - m).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Random set of `n ≤ 300` records with zero-padded ids in index order; every
/// fourth instance rounds values so that rank ties occur.
fn random_set(case: u64) -> PredictionSet {
    let mut g = SeededRng::new(1000 + case).generator();
    let n = g.random_range(20..=300);
    let noise = g.random_range(0.0..6.0);
    let round = case.is_multiple_of(4);
    let q = |v: f64| if round { (v * 2.0).round() / 2.0 } else { v };
    let y: Vec<f64> = (0..n).map(|_| q(g.random_range(-12.0..-2.0))).collect();
    let z: Vec<f64> = y.iter().map(|v| q(v + noise * g.random_range(-1.0..1.0))).collect();
    let ids = (0..n).map(|i| format!("m{i:04}")).collect();
    PredictionSet::new(ids, y, z).unwrap()
}

fn metric_oracles() -> Outcome {
    let fractions = [0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0];
    let (mut worst_corr, mut worst_refine, mut worst_curve): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for case in 0..100 {
        let p = random_set(case);
        let o = Oracle::new(&p);
        for &zeta in &fractions {
            for &sigma in &fractions {
                let got = recall_zeta_sigma(&p, zeta, sigma).map_err(fail)?;
                ensure!(
                    got == o.recall(zeta, sigma),
                    "case {case}: recall({zeta}, {sigma}) {got}"
                );
                let got = attainable_recall(&p, zeta, sigma).map_err(fail)?;
                ensure!(
                    got == o.attainable(zeta, sigma),
                    "case {case}: attainable({zeta}, {sigma}) {got}"
                );
            }
        }
        for f in [0.01, 0.05, 0.1, 0.2, 0.5] {
            if p.len() as f64 * f >= 1.0 {
                let got = f1_at_fraction(&p.z, &p.y, f).map_err(fail)?;
                ensure!(got == o.f1(f), "case {case}: F1 at {f}: {got} vs {}", o.f1(f));
            }
        }
        let grid = log_grid(p.len(), 64).map_err(fail)?;
        let fine = log_grid(p.len(), 256).map_err(fail)?;
        for zeta in [0.01, 0.1] {
            let a = aurtc(&p, zeta, &grid).map_err(fail)?;
            worst_curve = worst_curve.max((a - o.aurtc(zeta, &grid)).abs());
            worst_refine = worst_refine.max((a - o.aurtc(zeta, &fine)).abs());
        }
        let res = res_score(&p, &grid, &grid).map_err(fail)?;
        if case < 50 {
            worst_curve = worst_curve.max((res - o.res(&grid)).abs());
        }
        if case < 10 {
            worst_refine = worst_refine.max((res - o.res(&fine)).abs());
        } else {
            worst_refine = worst_refine.max((res - res_score(&p, &fine, &fine).map_err(fail)?).abs());
        }
        worst_corr = worst_corr.max((pearson(&p).map_err(fail)? - textbook_pearson(&p.y, &p.z)).abs());
        worst_corr = worst_corr.max((r_squared(&p).map_err(fail)? - textbook_r2(&p.y, &p.z)).abs());
    }
    ensure!(
        worst_curve < 1e-12,
        "AURTC/RES differ from the oracle on the same grid by {worst_curve:.2e}"
    );
    ensure!(
        worst_refine < 0.01,
        "AURTC/RES move by {worst_refine:.4} under 4x grid refinement"
    );
    ensure!(
        worst_corr < 1e-9,
        "Pearson/R² differ from the textbook formulas by {worst_corr:.2e}"
    );

    let y: Vec<f64> = (0..500).map(|i| -12.0 + i as f64 * 0.02).collect();
    let perfect = PredictionSet::unnamed(y.clone(), y.clone()).map_err(fail)?;
    let grid = log_grid(500, 64).map_err(fail)?;
    let r = res_score(&perfect, &grid, &grid).map_err(fail)?;
    let a = aurtc(&perfect, 0.01, &grid).map_err(fail)?;
    let rho = pearson(&perfect).map_err(fail)?;
    ensure!(
        (r - 1.0).abs() < 1e-9 && (a - 1.0).abs() < 1e-9 && (rho - 1.0).abs() < 1e-9,
        "perfect: RES {r} AURTC {a} R {rho}"
    );
    Ok(format!(
        "100 sets: set metrics exact, curves {worst_curve:.0e}, refinement {worst_refine:.4}, correlations {worst_corr:.0e}; perfect = 1"
    ))
}

// 4. Rank invariance

fn rank_invariance() -> Outcome {
    let fractions = [0.01, 0.05, 0.1, 0.3];
    for case in 0..20 {
        let p = random_set(500 + case);
        let warped: Vec<f64> = p.z.iter().map(|v| 3.0 * v + (v / 4.0).exp() - 7.0).collect();
        let q = PredictionSet::new(p.ids.clone(), p.y.clone(), warped).map_err(fail)?;
        let grid = log_grid(p.len(), 64).map_err(fail)?;
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
        for &zeta in &fractions {
            for &sigma in &fractions {
                ensure!(
                    same(
                        recall_zeta_sigma(&p, zeta, sigma).map_err(fail)?,
                        recall_zeta_sigma(&q, zeta, sigma).map_err(fail)?
                    ),
                    "case {case}: recall"
                );
                ensure!(
                    same(
                        attainable_recall(&p, zeta, sigma).map_err(fail)?,
                        attainable_recall(&q, zeta, sigma).map_err(fail)?
                    ),
                    "case {case}: attainable recall"
                );
            }
            ensure!(
                same(
                    aurtc(&p, zeta, &grid).map_err(fail)?,
                    aurtc(&q, zeta, &grid).map_err(fail)?
                ),
                "case {case}: AURTC"
            );
        }
        ensure!(
            same(
                res_score(&p, &grid, &grid).map_err(fail)?,
                res_score(&q, &grid, &grid).map_err(fail)?
            ),
            "case {case}: RES"
        );
        for f in [0.1, 0.2] {
            ensure!(
                same(
                    f1_at_fraction(&p.z, &p.y, f).map_err(fail)?,
                    f1_at_fraction(&q.z, &q.y, f).map_err(fail)?
                ),
                "case {case}: F1"
            );
        }
    }
    Ok("20 instances bit-identical under z -> 3z + exp(z/4) - 7".into())
}

// 5. Permutation and isolation

fn no_dropout(mut c: ModelConfig) -> ModelConfig {
    c.dropout = 0.0;
    c.dropout_attn = 0.0;
    c.dropout_pe = 0.0;
    c
}

fn predict(m: &Model, graphs: &[&FeaturizedGraph]) -> Result<Vec<f64>, String> {
    m.predict(&m.collate(graphs).map_err(fail)?).map_err(fail)
}

fn permutation_isolation() -> Outcome {
    let stats = DegreeStats {
        log_mean: 0.9,
        lin_mean: 2.1,
    };
    let models: Vec<Model> = ["scoreformer", "l-scoreformer"]
        .iter()
        .map(|name| {
            let cfg = ModelConfig::preset(name).unwrap().with_degree_stats(stats);
            build_model(&cfg, &SeededRng::new(5)).unwrap()
        })
        .collect();
    let mols = small_molecules(250, 40, 505);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let m = &models[case % 2];
        let k = m.config.rw_length;
        let mol = &mols[case];
        let perm = common::random_perm(mol.num_atoms(), case as u64);
        let a = graph_of(mol, 0, k);
        let b = graph_of(&common::permute(mol, &perm), 0, k);
        let alone = predict(m, &[&a])?[0];
        worst = worst.max((alone - predict(m, &[&b])?[0]).abs());
        let others: Vec<FeaturizedGraph> = mols[50 + 4 * case..54 + 4 * case]
            .iter()
            .enumerate()
            .map(|(i, g)| graph_of(g, i as u64 + 1, k))
            .collect();
        let batch = [&others[0], &others[1], &a, &others[2], &others[3]];
        worst = worst.max((alone - predict(m, &batch)?[2]).abs());
    }
    ensure!(worst < 1e-9, "max deviation {worst:.2e}");
    Ok(format!(
        "50 cases, relabelling and batch-mate changes within {worst:.1e}"
    ))
}

// 6. wMSE contract

fn wmse_contract() -> Outcome {
    let mut g = SeededRng::new(66).generator();
    let z: Vec<f64> = (0..200).map(|_| g.random_range(-14.0..0.0)).collect();
    let y: Vec<f64> = (0..200).map(|_| g.random_range(-14.0..0.0)).collect();
    let mse = z.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 200.0;
    let at_zero = wmse(&z, &y, 0.0).map_err(fail)?;
    ensure!(at_zero == mse, "alpha=0 gives {at_zero}, MSE is {mse}");
    let worked = wmse(&[0.0], &[-2.0], 1.0).map_err(fail)?;
    ensure!(
        (worked - 29.5562).abs() < 1e-4 && (worked - 4.0 * 2f64.exp()).abs() < 1e-6,
        "worked value {worked}"
    );
    for (lo, hi) in [(-10.0, -2.0), (-3.0, -2.5), (-0.5, 0.0)] {
        let a = wmse(&[lo + 1.5], &[lo], 1.0).map_err(fail)?;
        let b = wmse(&[hi + 1.5], &[hi], 1.0).map_err(fail)?;
        ensure!(a > b, "y={lo} contributes {a}, y={hi} contributes {b}");
    }
    Ok(format!("alpha=0 exact MSE, e^2*4 = {worked:.4}, lower y weighs more"))
}

// 7. Memorization

fn memorization() -> Outcome {
    let started = Instant::now();
    let mut tc = TrainConfig::preset("l-scoreformer").map_err(fail)?;
    let data = prepare(&make_data(64, 3, 0.25).map_err(fail)?, tc.model.rw_length)
        .map_err(fail)?
        .0;
    tc.learning_rate = 2e-3;
    tc.batch_size = 16;
    tc.max_epochs = 200;
    tc.patience = 200;
    tc.wmse_alpha = 0.1;
    tc.hit_fraction = 0.5;
    tc.selection = Selection::ValWmse;
    tc.seed = 1;
    tc.model = no_dropout(tc.model);
    let all: Vec<_> = data.records.iter().collect();
    let splits = Splits {
        train: all.clone(),
        val: all.clone(),
        test: all.clone(),
    };
    let (ck, _) = train(&tc, &splits).map_err(fail)?;
    let z = predict_records(&ck.model, &all, 64).map_err(fail)?;
    let y: Vec<f64> = all.iter().map(|r| r.score).collect();
    let w = wmse(&z, &y, tc.wmse_alpha).map_err(fail)?;
    let r = pearson(&PredictionSet::unnamed(y, z).map_err(fail)?).map_err(fail)?;
    let elapsed = started.elapsed();
    ensure!(w < 0.05 && r > 0.99, "train wMSE {w:.4}, Pearson {r:.4}");
    ensure!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    Ok(format!(
        "64 molecules, alpha 0.1: train wMSE {w:.5}, Pearson {r:.5}, {elapsed:.1?}"
    ))
}

// 8. End-to-end learnability

fn end_to_end_config(seed: u64) -> Result<TrainConfig, String> {
    let overrides: Vec<String> = [
        "preset=\"l-scoreformer\"",
        "max_epochs=30",
        "patience=30",
        "learning_rate=1e-3",
        "hit_fraction=0.1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut tc = TrainConfig::from_toml("", &overrides).map_err(fail)?;
    tc.seed = seed;
    Ok(tc)
}

fn run_pipeline(dir: &Path, tc: &TrainConfig, data: &Path, name: &str) -> Result<f64, String> {
    let run = dir.join(name);
    train_command(tc, data, &run).map_err(fail)?;
    let preds = run.join("test_predictions.csv");
    let ck = run.join(cli::CHECKPOINT_FILE);
    predict_command(&ck, data, SplitName::Test, None, &preds).map_err(fail)?;
    let opts = EvalOptions {
        checkpoint: Some(ck),
        ..EvalOptions::default()
    };
    let report = evaluate_command(&preds, data, &opts, &run.join("report.toml")).map_err(fail)?;
    Ok(report.pearson)
}

fn end_to_end(dir: &Path) -> Outcome {
    let started = Instant::now();
    let csv = dir.join("e2e.csv");
    let data = dir.join("e2e.sfpd");
    write_dataset(&csv, &make_data(2000, 7, 0.25).map_err(fail)?).map_err(fail)?;
    preprocess(&csv, 2, &data).map_err(fail)?;
    let mut scores = Vec::new();
    for seed in 0..3 {
        scores.push(run_pipeline(
            dir,
            &end_to_end_config(seed)?,
            &data,
            &format!("e2e_seed{seed}"),
        )?);
    }
    let med = median(&scores);
    let elapsed = started.elapsed();
    ensure!(med > 0.6, "median test Pearson {med:.4} from {scores:?}");
    ensure!(elapsed < Duration::from_secs(1800), "took {elapsed:?}");
    Ok(format!("test Pearson {scores:.3?}, median {med:.4}, {elapsed:.1?}"))
}

// 9. Orderings

fn orderings(dir: &Path) -> Outcome {
    let small = ModelConfig::l_scoreformer().with_degree_stats(DegreeStats {
        log_mean: 0.9,
        lin_mean: 2.1,
    });
    let big = ModelConfig::scoreformer().with_degree_stats(DegreeStats {
        log_mean: 0.9,
        lin_mean: 2.1,
    });
    let (ps, pb) = (
        build_model(&small, &SeededRng::new(0)).map_err(fail)?.parameter_count(),
        build_model(&big, &SeededRng::new(0)).map_err(fail)?.parameter_count(),
    );
    ensure!(ps < pb, "parameter counts l-scoreformer {ps}, scoreformer {pb}");

    let molecules = make_data(256, 9, 0.25).map_err(fail)?;
    let settings = BenchmarkSettings {
        batch_size: 64,
        repetitions: 5,
        warmup: 1,
    };
    let mut rates = Vec::new();
    for name in ["l-scoreformer", "scoreformer"] {
        let k = ModelConfig::preset(name).map_err(fail)?.rw_length;
        let data = prepare(&molecules, k).map_err(fail)?.0;
        let model = cli::preset_model(name, &data, 0).map_err(fail)?;
        rates.push(benchmark(&model, &data, &settings).map_err(fail)?.samples_per_second);
    }
    ensure!(
        rates[0] > rates[1],
        "samples/s l-scoreformer {:.0}, scoreformer {:.0}",
        rates[0],
        rates[1]
    );

    let data = PreparedDataset::load(dir.join("e2e.sfpd")).map_err(fail)?;
    let rows = ablate(
        &end_to_end_config(0)?,
        &data,
        &[Variant::NoRwpe, Variant::Gcn],
        &[0, 1, 2],
    )
    .map_err(fail)?;
    let table: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {:.4}", r.variant, r.test_wmse))
        .collect();
    let base = rows[0].test_wmse;
    ensure!(
        rows[1..].iter().all(|r| base <= r.test_wmse),
        "params {ps} < {pb} and samples/s {:.0} > {:.0} hold; ablation median test wMSE not ordered: {}",
        rates[0],
        rates[1],
        table.join(", ")
    );
    Ok(format!(
        "params {ps} < {pb}; samples/s {:.0} > {:.0}; median test wMSE {}",
        rates[0],
        rates[1],
        table.join(", ")
    ))
}

// 10. Determinism

fn digest(path: &Path) -> Result<String, String> {
    let bytes = fs::read(path).map_err(fail)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn determinism(dir: &Path) -> Outcome {
    let csv = dir.join("det.csv");
    let data = dir.join("det.sfpd");
    write_dataset(&csv, &make_data(300, 10, 0.25).map_err(fail)?).map_err(fail)?;
    preprocess(&csv, 2, &data).map_err(fail)?;
    let mut tc = end_to_end_config(4)?;
    tc.max_epochs = 5;
    let mut runs = Vec::new();
    for name in ["det_a", "det_b"] {
        let (_, log) = train_command(&tc, &data, &dir.join(name)).map_err(fail)?;
        runs.push((digest(&dir.join(name).join(cli::CHECKPOINT_FILE))?, log.to_csv(false)));
    }
    ensure!(
        runs[0].0 == runs[1].0,
        "checkpoint digests differ: {} vs {}",
        runs[0].0,
        runs[1].0
    );
    ensure!(runs[0].1 == runs[1].1, "training logs differ");
    Ok(format!(
        "two runs, checkpoint sha256 {}…, identical logs",
        &runs[0].0[..12]
    ))
}

// 11. Weight split

fn weight_split(dir: &Path) -> Outcome {
    let data = PreparedDataset::load(dir.join("det.sfpd")).map_err(fail)?;
    let mw: Vec<f64> = data.records.iter().map(|r| r.molecular_weight).collect();
    for seed in 0..25 {
        let spec = SplitSpec {
            mode: SplitMode::Weight,
            seed,
            ..SplitSpec::default()
        };
        let s = split_indices(mw.len(), Some(&mw), &spec).map_err(fail)?;
        let lightest_test = s.test.iter().map(|&i| mw[i]).fold(f64::INFINITY, f64::min);
        let heaviest_rest = s
            .train
            .iter()
            .chain(&s.val)
            .map(|&i| mw[i])
            .fold(f64::NEG_INFINITY, f64::max);
        ensure!(
            heaviest_rest <= lightest_test,
            "seed {seed}: train/val max {heaviest_rest} > test min {lightest_test}"
        );
    }
    let mut tc = end_to_end_config(0)?;
    tc.max_epochs = 3;
    tc.split.mode = SplitMode::Weight;
    let r = run_pipeline(dir, &tc, &dir.join("det.sfpd"), "weight_split")?;
    ensure!(r.is_finite(), "test Pearson {r}");
    let n_test = threshold_count(0.1, data.len());
    Ok(format!(
        "25 seeds respect the weight boundary; trained and evaluated on {n_test} heaviest, Pearson {r:.3}"
    ))
}

fn main() {
    let dir = TempDir::new().expect("temporary directory");
    let d = dir.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("gradient suite", Box::new(gradient_suite)),
        ("RWPE oracle", Box::new(rwpe_oracle)),
        ("metric oracle equivalence", Box::new(metric_oracles)),
        ("rank invariance", Box::new(rank_invariance)),
        ("permutation and isolation", Box::new(permutation_isolation)),
        ("wMSE contract", Box::new(wmse_contract)),
        ("memorization", Box::new(memorization)),
        ("end-to-end learnability", Box::new(|| end_to_end(d))),
        ("orderings", Box::new(|| orderings(d))),
        ("determinism", Box::new(|| determinism(d))),
        ("weight split", Box::new(|| weight_split(d))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome =
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
