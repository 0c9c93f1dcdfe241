use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::{Selection, TrainConfig};
use super::split::{split_indices, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{effective_hit_fraction, f1_at_fraction, wmse};
use crate::model::{build_model, Checkpoint, DegreeStats, Model, TrainMeta};
use crate::numeric::{Adam, AdamConfig, SeededRng, Tape, Tensor, Var};
use crate::pipeline::{write_atomic, PreparedDataset, PreparedRecord};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

/// Train, validation and test records.
#[derive(Clone, Debug)]
pub struct Splits<'a> {
    pub train: Vec<&'a PreparedRecord>,
    pub val: Vec<&'a PreparedRecord>,
    pub test: Vec<&'a PreparedRecord>,
}

impl<'a> Splits<'a> {
    pub fn new(data: &'a PreparedDataset, spec: &SplitSpec) -> Result<Self> {
        let mw: Vec<f64> = data.records.iter().map(|r| r.molecular_weight).collect();
        let idx = split_indices(data.len(), Some(&mw), spec)?;
        let pick = |ix: &[usize]| ix.iter().map(|&i| &data.records[i]).collect();
        Ok(Self {
            train: pick(&idx.train),
            val: pick(&idx.val),
            test: pick(&idx.test),
        })
    }
}

/// Mean of `e^{-α·y_i}·(z_i − y_i)²` over the entries of `z`.
pub fn wmse_loss(tape: &mut Tape, z: Var, y: &[f64], alpha: f64) -> Result<Var> {
    let shape = tape.value(z).shape().to_vec();
    if tape.value(z).numel() != y.len() || y.is_empty() {
        return Err(Error::Data(format!(
            "wMSE got {} predictions for {} targets",
            tape.value(z).numel(),
            y.len()
        )));
    }
    let target = tape.constant(Tensor::new(shape.clone(), y.to_vec())?);
    let weights = tape.constant(Tensor::new(shape, y.iter().map(|v| (-alpha * v).exp()).collect())?);
    let diff = tape.sub(z, target)?;
    let sq = tape.powi(diff, 2)?;
    let weighted = tape.mul(sq, weights)?;
    Ok(tape.mean_all(weighted)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_wmse: f64,
    pub val_wmse: f64,
    pub val_f1: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
}

impl TrainLog {
    pub const HEADER: [&'static str; 5] = ["epoch", "train_wmse", "val_wmse", "val_f1", "seconds"];

    /// CSV text; `seconds` is left out when `with_seconds` is false, which
    /// gives a run-to-run comparable form.
    pub fn to_csv(&self, with_seconds: bool) -> String {
        let cols = if with_seconds { 5 } else { 4 };
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(&Self::HEADER[..cols]).expect("in-memory write");
        for e in &self.epochs {
            let row = [
                e.epoch.to_string(),
                e.train_wmse.to_string(),
                e.val_wmse.to_string(),
                e.val_f1.to_string(),
                format!("{:.3}", e.seconds),
            ];
            wtr.write_record(&row[..cols]).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("ASCII CSV")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| Ok(w.write_all(self.to_csv(true).as_bytes())?))
    }

    pub fn selected(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.selected_epoch.wrapping_sub(1))
    }
}

/// Predictions for `records` in order, dropout off.
pub fn predict_records(model: &Model, records: &[&PreparedRecord], batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        let graphs: Vec<_> = chunk.iter().map(|r| &r.graph).collect();
        out.extend(model.predict(&model.collate(&graphs)?)?);
    }
    Ok(out)
}

fn scores(records: &[&PreparedRecord]) -> Vec<f64> {
    records.iter().map(|r| r.score).collect()
}

fn numeric_failure(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::Numeric(n) => Error::NumericFailure(format!("epoch {epoch}, batch {batch}: {n}")),
        other => other,
    }
}

/// Trains with Adam on the weighted MSE and keeps the epoch chosen by
/// `tc.selection`.
pub fn train(tc: &TrainConfig, splits: &Splits) -> Result<(Checkpoint, TrainLog)> {
    tc.validate()?;
    if splits.train.is_empty() || splits.val.len() < 2 {
        return Err(Error::Data(
            "training needs a non-empty train split and at least 2 validation records".into(),
        ));
    }
    let stats = DegreeStats::from_graphs(splits.train.iter().map(|r| &r.graph))?;
    let cfg = tc.model.clone().with_degree_stats(stats);
    if cfg.use_rwpe {
        for r in splits.train.iter().chain(&splits.val) {
            let k = r.graph.rwpe.as_ref().map_or(0, |m| m.walk_length());
            if k != cfg.rw_length {
                return Err(Error::Config(format!(
                    "record `{}` has RWPE walk length k={k} but the model expects rw_length k={}",
                    r.id, cfg.rw_length
                )));
            }
        }
    }
    let root = SeededRng::new(tc.seed);
    let mut model = build_model(&cfg, &root.fork(STREAM_INIT))?;
    let train_y = scores(&splits.train);
    let n = train_y.len() as f64;
    let mean = train_y.iter().sum::<f64>() / n;
    let var = train_y.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    model.target_mean = mean;
    model.target_std = if var > 0.0 { var.sqrt() } else { 1.0 };

    let mut adam = Adam::new(AdamConfig::with_lr(tc.learning_rate), &model.params);
    let val_y = scores(&splits.val);
    let hit_fraction = effective_hit_fraction(tc.hit_fraction, val_y.len());
    let mut log = TrainLog::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut order: Vec<usize> = (0..splits.train.len()).collect();

    for epoch in 1..=tc.max_epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut root.fork(STREAM_SHUFFLE).fork(epoch as u64).generator());
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let recs: Vec<&PreparedRecord> = chunk.iter().map(|&i| splits.train[i]).collect();
            let graphs: Vec<_> = recs.iter().map(|r| &r.graph).collect();
            let batch = model.collate(&graphs)?;
            let y = scores(&recs);
            let mut step = || -> Result<f64> {
                let mut tape = Tape::new();
                let bound = model.params.bind(&mut tape);
                let rng = root.fork(STREAM_DROPOUT).fork(epoch as u64).fork(b as u64);
                let z = model.forward(&mut tape, &bound, &batch, true, &rng)?;
                let loss = wmse_loss(&mut tape, z, &y, tc.wmse_alpha)?;
                let value = tape.value(loss).item();
                tape.backward(loss)?;
                model.params.accumulate_grads(&tape, &bound);
                Ok(value)
            };
            let value = step().map_err(|e| numeric_failure(epoch, b, e))?;
            if !value.is_finite() {
                return Err(Error::NumericFailure(format!(
                    "epoch {epoch}, batch {b}: loss is {value}"
                )));
            }
            adam.step(&mut model.params)
                .map_err(|e| numeric_failure(epoch, b, e.into()))?;
            loss_sum += value * recs.len() as f64;
            seen += recs.len();
        }
        let val_z = predict_records(&model, &splits.val, tc.batch_size)?;
        let val_wmse = wmse(&val_z, &val_y, tc.wmse_alpha)?;
        let val_f1 = f1_at_fraction(&val_z, &val_y, hit_fraction)?;
        if !val_wmse.is_finite() {
            return Err(Error::NumericFailure(format!(
                "epoch {epoch}: validation wMSE is {val_wmse}"
            )));
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_wmse: loss_sum / seen as f64,
            val_wmse,
            val_f1,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: train_wmse {:.5} val_wmse {val_wmse:.5} val_f1 {val_f1:.4}",
            loss_sum / seen as f64
        );
        let improved = match tc.selection {
            Selection::ValF1 => best.as_ref().is_none_or(|(f1, _)| val_f1 > *f1),
            Selection::ValWmse => best.as_ref().is_none_or(|(w, _)| -val_wmse > *w),
        };
        if improved {
            let key = match tc.selection {
                Selection::ValF1 => val_f1,
                Selection::ValWmse => -val_wmse,
            };
            best = Some((key, model.params.iter().map(|p| p.value.clone()).collect()));
            log.selected_epoch = epoch;
        } else if epoch - log.selected_epoch >= tc.patience {
            log::info!("no validation improvement for {} epochs, stopping", tc.patience);
            break;
        }
    }
    let (_, values) = best.expect("at least one epoch ran");
    for (p, v) in model.params.iter_mut().zip(values) {
        p.value = v;
    }
    let meta = TrainMeta {
        wmse_alpha: tc.wmse_alpha,
        hit_fraction: tc.hit_fraction,
        seed: tc.seed,
        split_mode: tc.split.mode.name().to_string(),
        split_seed: tc.split.seed,
        split_fractions: tc.split.fractions,
        selected_epoch: log.selected_epoch,
    };
    Ok((Checkpoint { model, meta }, log))
}
