//! Implementations behind the command-line subcommands. Every function here
//! reads and writes named files only, so the commands compose through the
//! file system.

use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_all, pearson, r_squared, wmse, write_res_surface, write_rtc_curves, EvalReport, PredictionSet,
};
use crate::model::{build_model, Checkpoint, ConvKind, DegreeStats, Model, ModelConfig};
use crate::numeric::SeededRng;
use crate::pipeline::{prepare, write_atomic, PreparedDataset, PreparedRecord, PREPARED_MAGIC};
use crate::smiles::{load_dataset, write_rejections};
use crate::train::{predict_records, train, SplitSpec, Splits, TrainConfig, TrainLog};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CONFIG_FILE: &str = "config.toml";
const PREDICT_BATCH: usize = 256;

/// Counts from a preprocessing run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreprocessSummary {
    pub kept: usize,
    pub rejected: usize,
    pub rejections_path: PathBuf,
}

/// `<out>.rejections.csv` next to the prepared file.
pub fn rejections_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".rejections.csv");
    out.with_file_name(name)
}

/// Parses, featurizes and caches RWPE for a CSV dataset, writing the
/// prepared container and a rejection report.
pub fn preprocess(input: &Path, k: usize, out: &Path) -> Result<PreprocessSummary> {
    let loaded = load_dataset(input)?;
    let (prepared, mut rejections) = prepare(&loaded.dataset, k)?;
    rejections.splice(0..0, loaded.rejections);
    prepared.save(out)?;
    let rejections_path = rejections_path(out);
    write_rejections(&rejections_path, &rejections)?;
    Ok(PreprocessSummary {
        kept: prepared.len(),
        rejected: rejections.len(),
        rejections_path,
    })
}

fn check_cache(cfg: &ModelConfig, data: &PreparedDataset) -> Result<()> {
    if cfg.use_rwpe {
        data.check_rw_length(cfg.rw_length)?;
    }
    Ok(())
}

/// Trains on a prepared dataset and writes the checkpoint, the training log
/// and the resolved configuration into `out_dir`.
pub fn train_command(tc: &TrainConfig, data: &Path, out_dir: &Path) -> Result<(Checkpoint, TrainLog)> {
    tc.validate()?;
    let prepared = PreparedDataset::load(data)?;
    check_cache(&tc.model, &prepared)?;
    let splits = Splits::new(&prepared, &tc.split)?;
    log::info!(
        "split {}: {} train, {} val, {} test",
        tc.split.mode.name(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    let (ck, log) = train(tc, &splits)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    ck.save(out_dir.join(CHECKPOINT_FILE))?;
    log.write(&out_dir.join(TRAIN_LOG_FILE))?;
    write_atomic(
        &out_dir.join(CONFIG_FILE),
        |w| Ok(w.write_all(tc.to_toml().as_bytes())?),
    )?;
    Ok((ck, log))
}

/// Which records of a prepared dataset to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    All,
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "all" => Ok(SplitName::All),
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected all, train, val or test)"
            ))),
        }
    }
}

/// Records of `data` in `split`, using the split the checkpoint was trained
/// under, optionally narrowed to `ids`.
pub fn select_records<'a>(
    ck: &Checkpoint,
    data: &'a PreparedDataset,
    split: SplitName,
    ids: Option<&[String]>,
) -> Result<Vec<&'a PreparedRecord>> {
    let mut records: Vec<&PreparedRecord> = match split {
        SplitName::All => data.records.iter().collect(),
        _ => {
            let splits = Splits::new(data, &SplitSpec::from_meta(&ck.meta)?)?;
            match split {
                SplitName::Train => splits.train,
                SplitName::Val => splits.val,
                _ => splits.test,
            }
        }
    };
    if let Some(ids) = ids {
        let known: HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
        let missing: Vec<&str> = ids
            .iter()
            .map(String::as_str)
            .filter(|id| !known.contains(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "ids not found in the selected records: {}",
                missing.join(", ")
            )));
        }
        let by_id: HashMap<&str, &PreparedRecord> = records.iter().map(|r| (r.id.as_str(), *r)).collect();
        records = ids.iter().map(|id| by_id[id.as_str()]).collect();
    }
    Ok(records)
}

/// Predictions as `(id, prediction)` pairs.
pub fn predict_ids(model: &Model, records: &[&PreparedRecord]) -> Result<Vec<(String, f64)>> {
    let z = predict_records(model, records, PREDICT_BATCH)?;
    Ok(records.iter().map(|r| r.id.clone()).zip(z).collect())
}

pub fn write_predictions(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["id", "prediction"])?;
        for (id, z) in rows {
            wtr.write_record([id.as_str(), &z.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    })
}

pub fn read_predictions(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "prediction"] {
        return Err(Error::Data(format!(
            "{}: expected header `id,prediction`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let z: f64 = rec[1].trim().parse().map_err(|_| {
            Error::Data(format!(
                "{}: row {}: bad prediction `{}`",
                path.display(),
                i + 2,
                &rec[1]
            ))
        })?;
        rows.push((rec[0].to_string(), z));
    }
    Ok(rows)
}

/// Runs the checkpoint on the chosen records and writes `id,prediction`.
pub fn predict_command(
    checkpoint: &Path,
    data: &Path,
    split: SplitName,
    ids: Option<&[String]>,
    out: &Path,
) -> Result<Vec<(String, f64)>> {
    let ck = Checkpoint::load(checkpoint)?;
    let prepared = PreparedDataset::load(data)?;
    check_cache(&ck.model.config, &prepared)?;
    let records = select_records(&ck, &prepared, split, ids)?;
    let rows = if records.is_empty() {
        Vec::new()
    } else {
        predict_ids(&ck.model, &records)?
    };
    write_predictions(out, &rows)?;
    Ok(rows)
}

/// True scores by id from a prepared container or an `id,smiles,score` CSV.
pub fn load_truth(path: &Path) -> Result<HashMap<String, f64>> {
    let mut magic = [0u8; 4];
    let is_prepared = std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .is_ok()
        && magic == PREPARED_MAGIC;
    if is_prepared {
        let data = PreparedDataset::load(path)?;
        return Ok(data.records.into_iter().map(|r| (r.id, r.score)).collect());
    }
    let loaded = load_dataset(path)?;
    Ok(loaded.dataset.records.into_iter().map(|r| (r.id, r.score)).collect())
}

/// Pairs predictions with true scores; every predicted id must be known.
pub fn join_truth(predictions: &[(String, f64)], truth: &HashMap<String, f64>) -> Result<PredictionSet> {
    let mut seen = HashSet::new();
    if let Some((id, _)) = predictions.iter().find(|(id, _)| !seen.insert(id.as_str())) {
        return Err(Error::Data(format!("prediction id `{id}` appears more than once")));
    }
    let missing: Vec<&str> = predictions
        .iter()
        .map(|(id, _)| id.as_str())
        .filter(|id| !truth.contains_key(*id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "{} predicted ids have no true score: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let ids = predictions.iter().map(|(id, _)| id.clone()).collect();
    let y = predictions.iter().map(|(id, _)| truth[id]).collect();
    let z = predictions.iter().map(|(_, z)| *z).collect();
    PredictionSet::new(ids, y, z)
}

/// Evaluation options; `None` fields fall back to the checkpoint's training
/// settings, then to the defaults.
#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub checkpoint: Option<PathBuf>,
    pub wmse_alpha: Option<f64>,
    pub hit_fraction: Option<f64>,
    /// Also dump RTC curves and the recall surface as CSV.
    pub curves: bool,
}

/// Joins predictions with truth and writes `<out>` (TOML) plus `<out>.csv`.
pub fn evaluate_command(predictions: &Path, truth: &Path, opts: &EvalOptions, out: &Path) -> Result<EvalReport> {
    let meta = match &opts.checkpoint {
        Some(p) => Some(Checkpoint::load(p)?.meta),
        None => None,
    };
    let alpha = opts.wmse_alpha.or(meta.as_ref().map(|m| m.wmse_alpha)).unwrap_or(1.0);
    let hit_fraction = opts
        .hit_fraction
        .or(meta.as_ref().map(|m| m.hit_fraction))
        .unwrap_or(0.01);
    let set = join_truth(&read_predictions(predictions)?, &load_truth(truth)?)?;
    let report = evaluate_all(&set, hit_fraction, alpha)?;
    report.write(out)?;
    if opts.curves {
        write_rtc_curves(&set, &out.with_extension("rtc.csv"))?;
        write_res_surface(&set, &out.with_extension("res.csv"))?;
    }
    Ok(report)
}

/// Builds an untrained preset model whose degree statistics come from `data`.
pub fn preset_model(preset: &str, data: &PreparedDataset, seed: u64) -> Result<Model> {
    let stats = DegreeStats::from_graphs(data.graphs())?;
    let cfg = ModelConfig::preset(preset)?.with_degree_stats(stats);
    check_cache(&cfg, data)?;
    build_model(&cfg, &SeededRng::new(seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSettings {
    pub batch_size: usize,
    pub repetitions: usize,
    pub warmup: usize,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            batch_size: 256,
            repetitions: 5,
            warmup: 1,
        }
    }
}

/// Inference throughput over a cached dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub parameter_count: usize,
    pub batch_size: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub workers: usize,
    pub samples_per_repetition: usize,
    pub total_samples: usize,
    /// Median over repetitions.
    pub samples_per_second: f64,
    pub repetition_samples_per_second: Vec<f64>,
    /// Extrapolated hours to score 128 million molecules.
    pub hours_per_128m: f64,
}

impl BenchmarkReport {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("benchmark report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| Ok(w.write_all(self.to_text().as_bytes())?))
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Times batched inference (collation from cache plus forward pass) over
/// every record, single-threaded, after `warmup` untimed passes.
pub fn benchmark(model: &Model, data: &PreparedDataset, s: &BenchmarkSettings) -> Result<BenchmarkReport> {
    if data.is_empty() {
        return Err(Error::Data("benchmark needs a non-empty dataset".into()));
    }
    if s.batch_size == 0 || s.repetitions == 0 {
        return Err(Error::Config(
            "benchmark batch_size and repetitions must be at least 1".into(),
        ));
    }
    check_cache(&model.config, data)?;
    let graphs: Vec<_> = data.graphs().collect();
    let pass = || -> Result<()> {
        for chunk in graphs.chunks(s.batch_size) {
            std::hint::black_box(model.predict(&model.collate(chunk)?)?);
        }
        Ok(())
    };
    for _ in 0..s.warmup {
        pass()?;
    }
    let mut rates = Vec::with_capacity(s.repetitions);
    for _ in 0..s.repetitions {
        let t = Instant::now();
        pass()?;
        rates.push(graphs.len() as f64 / t.elapsed().as_secs_f64());
    }
    let sps = median(&rates);
    Ok(BenchmarkReport {
        parameter_count: model.parameter_count(),
        batch_size: s.batch_size,
        repetitions: s.repetitions,
        warmup: s.warmup,
        workers: 1,
        samples_per_repetition: graphs.len(),
        total_samples: graphs.len() * s.repetitions,
        samples_per_second: sps,
        repetition_samples_per_second: rates,
        hours_per_128m: 128e6 / sps / 3600.0,
    })
}

/// Model variants compared by the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Base,
    NoRwpe,
    Gcn,
    NoRwpeGcn,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::NoRwpe => "no-rwpe",
            Variant::Gcn => "gcn",
            Variant::NoRwpeGcn => "no-rwpe+gcn",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "base" => Ok(Variant::Base),
            "no-rwpe" => Ok(Variant::NoRwpe),
            "gcn" => Ok(Variant::Gcn),
            "no-rwpe+gcn" => Ok(Variant::NoRwpeGcn),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (expected no-rwpe, gcn or no-rwpe+gcn)"
            ))),
        }
    }

    pub fn apply(self, cfg: &mut ModelConfig) {
        if matches!(self, Variant::NoRwpe | Variant::NoRwpeGcn) {
            cfg.use_rwpe = false;
        }
        if matches!(self, Variant::Gcn | Variant::NoRwpeGcn) {
            cfg.conv_kind = ConvKind::Gcn;
        }
    }
}

/// One ablation table row: medians over the training seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seeds: usize,
    pub pearson: f64,
    pub r_squared: f64,
    pub train_wmse: f64,
    pub test_wmse: f64,
}

impl AblationRow {
    pub const HEADER: [&'static str; 6] = ["variant", "seeds", "pearson", "r_squared", "train_wmse", "test_wmse"];
}

/// Test-set metrics of one trained model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunScores {
    pub pearson: f64,
    pub r_squared: f64,
    pub train_wmse: f64,
    pub test_wmse: f64,
}

/// Scores a trained model on the train and test splits (dropout off).
pub fn score_run(model: &Model, splits: &Splits, alpha: f64) -> Result<RunScores> {
    let eval = |recs: &[&PreparedRecord]| -> Result<(Vec<f64>, Vec<f64>)> {
        let z = predict_records(model, recs, PREDICT_BATCH)?;
        Ok((z, recs.iter().map(|r| r.score).collect()))
    };
    let (z_train, y_train) = eval(&splits.train)?;
    let (z_test, y_test) = eval(&splits.test)?;
    let test = PredictionSet::unnamed(y_test.clone(), z_test.clone())?;
    Ok(RunScores {
        pearson: pearson(&test)?,
        r_squared: r_squared(&test)?,
        train_wmse: wmse(&z_train, &y_train, alpha)?,
        test_wmse: wmse(&z_test, &y_test, alpha)?,
    })
}

/// Trains the base configuration and every requested variant on the same
/// split for each seed and tabulates median scores.
pub fn ablate(
    tc: &TrainConfig,
    data: &PreparedDataset,
    variants: &[Variant],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let splits = Splits::new(data, &tc.split)?;
    let mut all = vec![Variant::Base];
    all.extend(variants.iter().copied().filter(|v| *v != Variant::Base));
    let mut rows = Vec::with_capacity(all.len());
    for variant in all {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut vtc = tc.clone();
            vtc.seed = seed;
            variant.apply(&mut vtc.model);
            check_cache(&vtc.model, data)?;
            log::info!("ablation {}: seed {seed}", variant.name());
            let (ck, _) = train(&vtc, &splits)?;
            runs.push(score_run(&ck.model, &splits, vtc.wmse_alpha)?);
        }
        let med = |f: fn(&RunScores) -> f64| median(&runs.iter().map(f).collect::<Vec<_>>());
        rows.push(AblationRow {
            variant: variant.name().to_string(),
            seeds: seeds.len(),
            pearson: med(|r| r.pearson),
            r_squared: med(|r| r.r_squared),
            train_wmse: med(|r| r.train_wmse),
            test_wmse: med(|r| r.test_wmse),
        });
    }
    Ok(rows)
}

pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<()> {
    write_atomic(path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(AblationRow::HEADER)?;
        for r in rows {
            wtr.write_record([
                r.variant.clone(),
                r.seeds.to_string(),
                r.pearson.to_string(),
                r.r_squared.to_string(),
                r.train_wmse.to_string(),
                r.test_wmse.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    })
}
