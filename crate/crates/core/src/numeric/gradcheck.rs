use rand::seq::index::sample;

use super::{NumericError, SeededRng, Tape, Tensor, Var};

/// Result of comparing tape gradients with central differences.
#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    /// max over checked coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    pub checked: usize,
    /// (input index, flat coordinate) pairs skipped as non-differentiable.
    pub kinks: Vec<(usize, usize)>,
}

// one-sided slopes disagreeing by more than this (relative) mark a kink
const KINK_TOL: f64 = 1e-2;

/// Checks the gradient of a scalar function of one tensor.
pub fn finite_diff_check<F, E>(f: F, x: &Tensor, h: f64) -> Result<GradCheck, E>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: From<NumericError>,
{
    finite_diff_check_many(|t: &mut Tape, v: &[Var]| f(t, v[0]), std::slice::from_ref(x), h, None)
}

/// Checks gradients of a scalar function with respect to several inputs.
///
/// With `sample = Some((k, seed))` only `k` seeded-random coordinates of each
/// input are perturbed, which keeps checks on large parameter sets cheap.
pub fn finite_diff_check_many<F, E>(
    f: F,
    xs: &[Tensor],
    h: f64,
    sample_per_input: Option<(usize, u64)>,
) -> Result<GradCheck, E>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<NumericError>,
{
    if h <= 0.0 {
        return Err(NumericError::InvalidArgument(format!("step h = {h} must be positive")).into());
    }
    let eval = |inputs: &[Tensor]| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let f0 = tape.value(loss).item();
    tape.backward(loss).map_err(E::from)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(xs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheck::default();
    let mut work = xs.to_vec();
    for (ti, x) in xs.iter().enumerate() {
        let coords: Vec<usize> = match sample_per_input {
            Some((k, seed)) if k < x.numel() => {
                let mut g = SeededRng::new(seed).fork(ti as u64).generator();
                let mut c = sample(&mut g, x.numel(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..x.numel()).collect(),
        };
        for c in coords {
            let orig = x.data()[c];
            work[ti].data_mut()[c] = orig + h;
            let fp = eval(&work)?;
            work[ti].data_mut()[c] = orig - h;
            let fm = eval(&work)?;
            work[ti].data_mut()[c] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(NumericError::NonFinitePerturbation(c).into());
            }
            let fwd = (fp - f0) / h;
            let bwd = (f0 - fm) / h;
            if (fwd - bwd).abs() > KINK_TOL * 1f64.max(fwd.abs()).max(bwd.abs()) {
                report.kinks.push((ti, c));
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[ti][c];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
