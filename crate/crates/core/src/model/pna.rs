use std::sync::Arc;

use super::config::{Aggregator, DegreeStats, Scaler};
use crate::numeric::{NumericError, SegmentKind, Tape, Tensor, Var};

pub const STD_EPS: f64 = 1e-8;
pub const MOMENT_EPS: f64 = 1e-8;

/// Per-batch constants shared by every PNA layer: one row-scale vector per
/// scaler (`None` for identity) and a mask zeroing degree-0 nodes.
#[derive(Clone, Debug)]
pub struct DegreeTerms {
    pub targets: Arc<[usize]>,
    pub num_nodes: usize,
    pub scales: Vec<Option<Var>>,
    pub has_neighbors: Var,
}

impl DegreeTerms {
    pub fn new(
        tape: &mut Tape,
        targets: &Arc<[usize]>,
        degrees: &[usize],
        scalers: &[Scaler],
        stats: &DegreeStats,
    ) -> Self {
        let scales = scalers
            .iter()
            .map(|&s| {
                (s != Scaler::Identity).then(|| {
                    let f = degrees.iter().map(|&d| s.factor(d, stats)).collect();
                    tape.constant(Tensor::vector(f))
                })
            })
            .collect();
        let mask = degrees.iter().map(|&d| if d > 0 { 1.0 } else { 0.0 }).collect();
        Self {
            targets: targets.clone(),
            num_nodes: degrees.len(),
            scales,
            has_neighbors: tape.constant(Tensor::vector(mask)),
        }
    }
}

/// Aggregates `messages` (`[E, m]`, row `e` addressed to `targets[e]`) with
/// every aggregator and scaler. Output is `[n, |A|·|S|·m]` with the block
/// for aggregator `a` and scaler `s` at position `a·|S| + s`.
pub fn pna_aggregate(
    tape: &mut Tape,
    messages: Var,
    terms: &DegreeTerms,
    aggregators: &[Aggregator],
) -> Result<Var, NumericError> {
    let n = terms.num_nodes;
    let seg = |tape: &mut Tape, v: Var, kind| tape.segment_reduce(v, kind, &terms.targets, n);
    let mut mean = None;
    let mut blocks = Vec::with_capacity(aggregators.len() * terms.scales.len());
    for &agg in aggregators {
        let a = match agg {
            Aggregator::Sum => seg(tape, messages, SegmentKind::Sum)?,
            Aggregator::Min => seg(tape, messages, SegmentKind::Min)?,
            Aggregator::Max => seg(tape, messages, SegmentKind::Max)?,
            Aggregator::Mul => seg(tape, messages, SegmentKind::Prod)?,
            Aggregator::Mean => *get_mean(tape, &mut mean, messages, terms)?,
            Aggregator::Std => {
                let mu = *get_mean(tape, &mut mean, messages, terms)?;
                let sq = tape.powi(messages, 2)?;
                let mean_sq = seg(tape, sq, SegmentKind::Mean)?;
                let mu_sq = tape.powi(mu, 2)?;
                let var = tape.sub(mean_sq, mu_sq)?;
                let var = tape.relu(var)?;
                let shape = tape.value(var).shape().to_vec();
                let eps = tape.constant(Tensor::full(&shape, STD_EPS));
                let var = tape.add(var, eps)?;
                let sd = tape.sqrt(var)?;
                tape.mul_col(sd, terms.has_neighbors)?
            }
            Aggregator::Moment4 | Aggregator::Moment5 => {
                let order = if agg == Aggregator::Moment4 { 4 } else { 5 };
                let mu = *get_mean(tape, &mut mean, messages, terms)?;
                let mu_e = tape.gather_rows(mu, &terms.targets)?;
                let centered = tape.sub(messages, mu_e)?;
                let pw = tape.powi(centered, order)?;
                let c = seg(tape, pw, SegmentKind::Mean)?;
                tape.signed_root(c, order as u32, MOMENT_EPS)?
            }
        };
        for scale in &terms.scales {
            blocks.push(match scale {
                None => a,
                Some(s) => tape.mul_col(a, *s)?,
            });
        }
    }
    if blocks.len() == 1 {
        return Ok(blocks[0]);
    }
    tape.concat(&blocks, 1)
}

fn get_mean<'a>(
    tape: &mut Tape,
    slot: &'a mut Option<Var>,
    messages: Var,
    terms: &DegreeTerms,
) -> Result<&'a Var, NumericError> {
    if slot.is_none() {
        *slot = Some(tape.segment_reduce(messages, SegmentKind::Mean, &terms.targets, terms.num_nodes)?);
    }
    Ok(slot.as_ref().expect("mean cached"))
}
