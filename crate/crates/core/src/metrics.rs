//! Hit-recovery and regression metrics. Lower scores are better throughout:
//! "positives" are the records with the lowest true or predicted values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::write_atomic;

pub const DEFAULT_GRID_POINTS: usize = 64;

/// Paired true (`y`) and predicted (`z`) scores.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub ids: Vec<String>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl PredictionSet {
    pub fn new(ids: Vec<String>, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        if y.len() != z.len() || ids.len() != y.len() {
            return Err(Error::Data(format!(
                "prediction set lengths differ: {} ids, {} targets, {} predictions",
                ids.len(),
                y.len(),
                z.len()
            )));
        }
        if y.len() < 2 {
            return Err(Error::Data(format!("need at least 2 predictions, got {}", y.len())));
        }
        if let Some(i) = y.iter().chain(&z).position(|v| !v.is_finite()) {
            let id = &ids[i % ids.len()];
            return Err(Error::Data(format!("non-finite value for record `{id}`")));
        }
        Ok(Self { ids, y, z })
    }

    /// Builds a set with ids `0..n`.
    pub fn unnamed(y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        let ids = (0..y.len()).map(|i| i.to_string()).collect();
        Self::new(ids, y, z)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// `⌈fraction·n⌉`, computed with a small tolerance so that exact products
/// such as `(1/n)·n` are not pushed up by rounding, clamped to `1..=n`.
pub fn threshold_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Rank of each record under ascending order, ties by ascending index.
fn ranks(values: &[f64]) -> Vec<usize> {
    ranks_by(values, |a, b| a.cmp(&b))
}

fn ranks_by(values: &[f64], tie: impl Fn(usize, usize) -> std::cmp::Ordering) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then_with(|| tie(a, b)));
    let mut rank = vec![0; values.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// Answers `|T ∩ P|` queries for top-`t` true and top-`p` predicted sets.
struct Overlap {
    /// Predicted ranks of the records, listed in true-rank order.
    z_rank_by_y: Vec<usize>,
}

impl Overlap {
    /// Ties are broken by ascending record id.
    fn new(p: &PredictionSet) -> Self {
        let by_id = |a: usize, b: usize| p.ids[a].cmp(&p.ids[b]).then(a.cmp(&b));
        let ry = ranks_by(&p.y, by_id);
        let rz = ranks_by(&p.z, by_id);
        let mut z_rank_by_y = vec![0; ry.len()];
        for (i, &r) in ry.iter().enumerate() {
            z_rank_by_y[r] = rz[i];
        }
        Self { z_rank_by_y }
    }

    fn count(&self, t: usize, p: usize) -> usize {
        self.z_rank_by_y[..t].iter().filter(|&&r| r < p).count()
    }

    /// Row of counts for a fixed `t` over ascending predicted sizes.
    fn counts(&self, t: usize, ps: &[usize]) -> Vec<usize> {
        let mut sorted = self.z_rank_by_y[..t].to_vec();
        sorted.sort_unstable();
        ps.iter().map(|&p| sorted.partition_point(|&r| r < p)).collect()
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must lie in (0, 1]")))
    }
}

/// Fraction of the true top-`σ` set found in the predicted top-`ζ` set.
pub fn recall_zeta_sigma(p: &PredictionSet, zeta: f64, sigma: f64) -> Result<f64> {
    check_fraction("zeta", zeta)?;
    check_fraction("sigma", sigma)?;
    let n = p.len();
    let (t, k) = (threshold_count(sigma, n), threshold_count(zeta, n));
    Ok(Overlap::new(p).count(t, k) as f64 / t as f64)
}

/// Recall normalized by what the set sizes allow, `|T ∩ P| / min(|T|, |P|)`.
/// Equals `recall_zeta_sigma` whenever `ζ ≥ σ`; a perfect ranking scores 1
/// everywhere.
pub fn attainable_recall(p: &PredictionSet, zeta: f64, sigma: f64) -> Result<f64> {
    check_fraction("zeta", zeta)?;
    check_fraction("sigma", sigma)?;
    let n = p.len();
    let (t, k) = (threshold_count(sigma, n), threshold_count(zeta, n));
    Ok(Overlap::new(p).count(t, k) as f64 / t.min(k) as f64)
}

/// `points` log-spaced fractions from `1/n` to 1 inclusive.
pub fn log_grid(n: usize, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::Config(format!("grid needs at least 2 points, got {points}")));
    }
    if n < 2 {
        return Err(Error::Config(format!("grid over {n} records is degenerate")));
    }
    let lo = -(n as f64).log10();
    Ok((0..points)
        .map(|i| {
            if i + 1 == points {
                1.0
            } else {
                10f64.powf(lo * (1.0 - i as f64 / (points - 1) as f64))
            }
        })
        .collect())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Config("grid needs at least 2 points".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] <= 0.0 || grid[grid.len() - 1] > 1.0 {
        return Err(Error::Config("grid must be strictly increasing within (0, 1]".into()));
    }
    Ok(())
}

/// Attainable recall at fixed `ζ` over each `σ` of the grid.
pub fn rtc_curve(p: &PredictionSet, zeta: f64, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_fraction("zeta", zeta)?;
    check_grid(grid)?;
    let n = p.len();
    let overlap = Overlap::new(p);
    let k = threshold_count(zeta, n);
    Ok(grid
        .iter()
        .map(|&s| {
            let t = threshold_count(s, n);
            (s, overlap.count(t, k) as f64 / t.min(k) as f64)
        })
        .collect())
}

/// Trapezoid integral of `ys` over `log10(xs)`, divided by the log width.
fn log_trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.log10()).collect();
    let area: f64 = (1..xs.len())
        .map(|i| 0.5 * (ys[i] + ys[i - 1]) * (lx[i] - lx[i - 1]))
        .sum();
    area / (lx[lx.len() - 1] - lx[0])
}

/// Normalized area under the recall-threshold curve at fixed `ζ`.
pub fn aurtc(p: &PredictionSet, zeta: f64, grid: &[f64]) -> Result<f64> {
    let curve = rtc_curve(p, zeta, grid)?;
    let (xs, ys): (Vec<f64>, Vec<f64>) = curve.into_iter().unzip();
    Ok(log_trapezoid(&xs, &ys))
}

/// Attainable-recall surface, `surface[i][j]` at `(ζ = grid_zeta[i], σ = grid_sigma[j])`.
pub fn res_surface(p: &PredictionSet, grid_zeta: &[f64], grid_sigma: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_grid(grid_zeta)?;
    check_grid(grid_sigma)?;
    let n = p.len();
    let overlap = Overlap::new(p);
    let ks: Vec<usize> = grid_zeta.iter().map(|&z| threshold_count(z, n)).collect();
    let mut surface = vec![vec![0.0; grid_sigma.len()]; grid_zeta.len()];
    for (j, &s) in grid_sigma.iter().enumerate() {
        let t = threshold_count(s, n);
        for (i, c) in overlap.counts(t, &ks).into_iter().enumerate() {
            surface[i][j] = c as f64 / t.min(ks[i]) as f64;
        }
    }
    Ok(surface)
}

/// Normalized volume under the recall surface over log-scaled axes.
pub fn res_score(p: &PredictionSet, grid_zeta: &[f64], grid_sigma: &[f64]) -> Result<f64> {
    let surface = res_surface(p, grid_zeta, grid_sigma)?;
    let rows: Vec<f64> = surface.iter().map(|row| log_trapezoid(grid_sigma, row)).collect();
    Ok(log_trapezoid(grid_zeta, &rows))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(p: &PredictionSet) -> Result<f64> {
    let (my, mz) = (mean(&p.y), mean(&p.z));
    let (mut syy, mut szz, mut syz) = (0.0, 0.0, 0.0);
    for (y, z) in p.y.iter().zip(&p.z) {
        syy += (y - my) * (y - my);
        szz += (z - mz) * (z - mz);
        syz += (y - my) * (z - mz);
    }
    if syy == 0.0 || szz == 0.0 {
        return Err(Error::Data("Pearson correlation is undefined for zero variance".into()));
    }
    Ok(syz / (syy.sqrt() * szz.sqrt()))
}

/// Coefficient of determination of `z` as a predictor of `y`.
pub fn r_squared(p: &PredictionSet) -> Result<f64> {
    let my = mean(&p.y);
    let ss_tot: f64 = p.y.iter().map(|y| (y - my) * (y - my)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Data(
            "R² is undefined when the targets have zero variance".into(),
        ));
    }
    let ss_res: f64 = p.y.iter().zip(&p.z).map(|(y, z)| (y - z) * (y - z)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean of `e^{-α·y}·(z − y)²`.
pub fn wmse(z: &[f64], y: &[f64], alpha: f64) -> Result<f64> {
    if z.len() != y.len() || z.is_empty() {
        return Err(Error::Data(format!(
            "wMSE needs equal non-empty lengths, got {} and {}",
            z.len(),
            y.len()
        )));
    }
    let total: f64 = z
        .iter()
        .zip(y)
        .map(|(z, y)| (-alpha * y).exp() * (z - y) * (z - y))
        .sum();
    Ok(total / z.len() as f64)
}

/// F1 of the predicted top-`fraction` set against the true one. Both sets
/// have `⌈fraction·N⌉` members.
pub fn f1_at_fraction(z: &[f64], y: &[f64], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(Error::Config(format!("hit fraction {fraction} must lie in (0, 0.5]")));
    }
    if z.len() != y.len() {
        return Err(Error::Data(format!(
            "F1 needs equal lengths, got {} and {}",
            z.len(),
            y.len()
        )));
    }
    let n = y.len();
    let needed = (1.0 / fraction - 1e-9).ceil() as usize;
    if n < needed {
        return Err(Error::Data(format!(
            "F1 at fraction {fraction} needs at least {needed} samples, got {n}"
        )));
    }
    let h = threshold_count(fraction, n);
    let (ry, rz) = (ranks(y), ranks(z));
    let both = ry.iter().zip(&rz).filter(|(&a, &b)| a < h && b < h).count();
    let (precision, recall) = (both as f64 / h as f64, both as f64 / h as f64);
    if both == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Hit fraction actually used for `n` samples: the requested fraction, or
/// the larger of 10% and one sample (at most half) when the set is too
/// small to hold one hit at that fraction.
pub fn effective_hit_fraction(requested: f64, n: usize) -> f64 {
    if (n as f64) * requested < 1.0 - 1e-9 {
        requested.max(0.1).max(1.0 / n.max(1) as f64).min(0.5)
    } else {
        requested
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub wmse_alpha: f64,
    pub wmse: f64,
    pub res: f64,
    pub aurtc_0_01: f64,
    pub aurtc_0_001: f64,
    pub recall_0_1_0_01: f64,
    pub recall_0_1_0_001: f64,
    pub pearson: f64,
    pub r_squared: f64,
    pub hit_fraction: f64,
    pub f1: f64,
}

impl EvalReport {
    pub const CSV_HEADER: [&'static str; 12] = [
        "n",
        "wmse_alpha",
        "wmse",
        "res",
        "aurtc_0_01",
        "aurtc_0_001",
        "recall_0_1_0_01",
        "recall_0_1_0_001",
        "pearson",
        "r_squared",
        "hit_fraction",
        "f1",
    ];

    pub fn csv_row(&self) -> Vec<String> {
        let mut row = vec![self.n.to_string()];
        row.extend(
            [
                self.wmse_alpha,
                self.wmse,
                self.res,
                self.aurtc_0_01,
                self.aurtc_0_001,
                self.recall_0_1_0_01,
                self.recall_0_1_0_001,
                self.pearson,
                self.r_squared,
                self.hit_fraction,
                self.f1,
            ]
            .iter()
            .map(|v| v.to_string()),
        );
        row
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report fields serialize")
    }

    /// Writes `<stem>.toml` and `<stem>.csv` next to each other.
    pub fn write(&self, toml_path: &Path) -> Result<()> {
        write_atomic(toml_path, |w| Ok(w.write_all(self.to_text().as_bytes())?))?;
        write_atomic(&toml_path.with_extension("csv"), |w| {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(Self::CSV_HEADER)?;
            wtr.write_record(self.csv_row())?;
            wtr.flush()?;
            Ok(())
        })
    }
}

/// Computes every report field with the default 64-point grids.
pub fn evaluate_all(p: &PredictionSet, hit_fraction: f64, alpha: f64) -> Result<EvalReport> {
    let grid = log_grid(p.len(), DEFAULT_GRID_POINTS)?;
    let hit_fraction = effective_hit_fraction(hit_fraction, p.len());
    Ok(EvalReport {
        n: p.len(),
        wmse_alpha: alpha,
        wmse: wmse(&p.z, &p.y, alpha)?,
        res: res_score(p, &grid, &grid)?,
        aurtc_0_01: aurtc(p, 0.01, &grid)?,
        aurtc_0_001: aurtc(p, 0.001, &grid)?,
        recall_0_1_0_01: recall_zeta_sigma(p, 0.1, 0.01)?,
        recall_0_1_0_001: recall_zeta_sigma(p, 0.1, 0.001)?,
        pearson: pearson(p)?,
        r_squared: r_squared(p)?,
        hit_fraction,
        f1: f1_at_fraction(&p.z, &p.y, hit_fraction)?,
    })
}

/// Dumps RTC curves for `ζ ∈ {0.01, 0.001}` as `zeta,sigma,recall` rows.
pub fn write_rtc_curves(p: &PredictionSet, path: &Path) -> Result<()> {
    let grid = log_grid(p.len(), DEFAULT_GRID_POINTS)?;
    let curves = [0.01, 0.001]
        .iter()
        .map(|&z| rtc_curve(p, z, &grid).map(|c| (z, c)))
        .collect::<Result<Vec<_>>>()?;
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["zeta", "sigma", "recall"])?;
        for (z, curve) in &curves {
            for (s, r) in curve {
                wtr.write_record([z.to_string(), s.to_string(), r.to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    })
}

/// Dumps the recall surface as `zeta,sigma,recall` rows.
pub fn write_res_surface(p: &PredictionSet, path: &Path) -> Result<()> {
    let grid = log_grid(p.len(), DEFAULT_GRID_POINTS)?;
    let surface = res_surface(p, &grid, &grid)?;
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["zeta", "sigma", "recall"])?;
        for (i, row) in surface.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                wtr.write_record([grid[i].to_string(), grid[j].to_string(), r.to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    })
}
