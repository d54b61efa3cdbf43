//! The five subcommands. Each takes a resolved [`RunConfig`], writes its
//! outputs and manifest under the run's output directory and returns a
//! summary for the caller to print.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use vqpu::classify::{evaluate, fit_classifier, write_predictions, EvalSplit, Evaluation};
use vqpu::data::{
    binarize_and_split, dataset_fingerprint, load_idx_images, make_gaussian_highdim,
    make_gaussian_toy, read_dataset, sample_labeled, write_dataset, GaussianClasses,
    IsotropicGaussianClasses, LabeledSet, PuDataset, SplitSpec,
};
use vqpu::encoder::{Architecture, Encoder, InitConfig};
use vqpu::loss::{LossConfig, Variant};
use vqpu::model::{FeatureMode, PuModel};
use vqpu::ntk::{
    build_system, sample_size_sweep, verify_theorem, ConstantRows, EncoderJacobianRows,
    GaussianRows, RowSampler, SweepPoint, SystemConfig, TheoremReport, UniformRows,
};
use vqpu::rng::derive_seed;
use vqpu::train::{train_with_monitor, write_metrics, StopReason, TrainConfig, TrainOutcome};
use vqpu::{Error, Parallelism, Result};

use crate::config::{DataSource, RowsConfig, RunConfig, MNIST_DIR_ENV};
use crate::manifest::{write_json, Manifest};

const DATA_STREAM: u64 = 100;
const TEST_STREAM: u64 = 101;
const NTK_INIT_STREAM: u64 = 102;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_out(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    Ok(out)
}

/// A dataset with what the manifest needs to know about where it came from.
pub struct LoadedData {
    pub dataset: PuDataset,
    pub fingerprint: String,
    pub inputs: Vec<PathBuf>,
    pub notes: Vec<String>,
}

fn mnist_dir(dir: &Option<PathBuf>) -> PathBuf {
    dir.clone()
        .or_else(|| std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Builds or reads the configured dataset.
pub fn load_data(cfg: &RunConfig) -> Result<LoadedData> {
    let split = || {
        cfg.data.split.ok_or_else(|| {
            Error::Config("data.split is required for generated and MNIST sources".into())
        })
    };
    let spec = |s: crate::config::SplitConfig| {
        SplitSpec::new(s.alpha, s.n_p, s.n_u, derive_seed(cfg.seed, DATA_STREAM))
    };
    let test_seed = derive_seed(cfg.seed, TEST_STREAM);
    let mut inputs = Vec::new();
    let mut notes = Vec::new();
    let dataset =
        match &cfg.data.source {
            DataSource::Toy1d {
                mu_pos,
                var_pos,
                mu_neg,
                var_neg,
            } => {
                let s = split()?;
                let ds = make_gaussian_toy(*mu_pos, *var_pos, *mu_neg, *var_neg, &spec(s))?;
                match s.n_test.filter(|&n| n > 0) {
                    Some(n) => {
                        let src = GaussianClasses::new(*mu_pos, *var_pos, *mu_neg, *var_neg)?;
                        ds.with_test(sample_labeled(&src, n, s.alpha, test_seed)?)?
                    }
                    None => ds,
                }
            }
            DataSource::GaussianHighdim { dim, separation } => {
                let s = split()?;
                let ds = make_gaussian_highdim(*dim, *separation, &spec(s))?;
                match s.n_test.filter(|&n| n > 0) {
                    Some(n) => {
                        let src = IsotropicGaussianClasses::new(*dim, *separation)?;
                        ds.with_test(sample_labeled(&src, n, s.alpha, test_seed)?)?
                    }
                    None => ds,
                }
            }
            DataSource::Mnist {
                dir,
                positive_classes,
            } => {
                let s = split()?;
                let dir = mnist_dir(dir);
                let file = |name: &str| dir.join(name);
                let missing: Vec<_> = [
                    "train-images-idx3-ubyte",
                    "train-labels-idx1-ubyte",
                    "t10k-images-idx3-ubyte",
                    "t10k-labels-idx1-ubyte",
                ]
                .into_iter()
                .map(file)
                .filter(|p| !p.is_file())
                .collect();
                if !missing.is_empty() {
                    return Err(Error::Usage(format!(
                    "MNIST files not found: {} (run scripts/fetch_mnist.sh or set {MNIST_DIR_ENV})",
                    missing.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
                )));
                }
                let classes: BTreeSet<u8> = positive_classes.iter().copied().collect();
                let train = load_idx_images(
                    &file("train-images-idx3-ubyte"),
                    &file("train-labels-idx1-ubyte"),
                )?;
                let test = load_idx_images(
                    &file("t10k-images-idx3-ubyte"),
                    &file("t10k-labels-idx1-ubyte"),
                )?;
                for name in [
                    "train-images-idx3-ubyte",
                    "train-labels-idx1-ubyte",
                    "t10k-images-idx3-ubyte",
                    "t10k-labels-idx1-ubyte",
                ] {
                    inputs.push(file(name));
                }
                notes.push("pixels scaled to [0, 1] by dividing by 255".to_string());
                let ds = binarize_and_split(&train, &classes, &spec(s))?;
                let mut held_out = test.binarize(&classes)?;
                if let Some(n) = s.n_test {
                    let n = n.min(held_out.len());
                    held_out = LabeledSet {
                        features: held_out.features.slice(ndarray::s![..n, ..]).to_owned(),
                        labels: held_out.labels[..n].to_vec(),
                    };
                }
                if held_out.is_empty() {
                    ds
                } else {
                    ds.with_test(held_out)?
                }
            }
            DataSource::Csv { path } => {
                if cfg.data.split.is_some() {
                    return Err(Error::Config("a csv source takes no data.split".into()));
                }
                let (ds, fingerprint) = read_dataset(path)?;
                inputs.push(path.clone());
                inputs.push(path.with_extension("json"));
                return Ok(LoadedData {
                    dataset: ds,
                    fingerprint,
                    inputs,
                    notes,
                });
            }
        };
    Ok(LoadedData {
        fingerprint: dataset_fingerprint(&dataset),
        dataset,
        inputs,
        notes,
    })
}

fn manifest_for(command: &str, cfg: &RunConfig, data: &LoadedData) -> Result<Manifest> {
    let mut m = Manifest::new(command, cfg);
    m.dataset_fingerprint = Some(data.fingerprint.clone());
    m.notes = data.notes.clone();
    for p in &data.inputs {
        m.add_input(p)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub out: PathBuf,
    pub fingerprint: String,
    pub n_p: usize,
    pub n_u: usize,
    pub n_test: usize,
}

pub fn simulate(cfg: &RunConfig) -> Result<SimulateSummary> {
    let data = load_data(cfg)?;
    let out = create_out(cfg)?;
    let files = write_dataset(&data.dataset, &out.join("dataset.csv"))?;
    let ds = &data.dataset;
    let summary = SimulateSummary {
        out: out.clone(),
        fingerprint: files.fingerprint,
        n_p: ds.n_positive(),
        n_u: ds.n_unlabeled(),
        n_test: ds.n_test(),
    };
    let mut m = manifest_for("simulate", cfg, &data)?;
    m.add_output(&out, "dataset.csv")?;
    m.add_output(&out, "dataset.json")?;
    m.summary =
        serde_json::json!({ "n_p": summary.n_p, "n_u": summary.n_u, "n_test": summary.n_test });
    m.write(&out)?;
    Ok(summary)
}

/// Accuracy of a freshly fitted classifier on `split`.
fn score_split(
    model: &PuModel,
    ds: &PuDataset,
    train: &TrainConfig,
    split: EvalSplit,
    par: Parallelism,
) -> Result<Evaluation> {
    let fit = fit_classifier(
        model,
        ds.training_view(),
        train.feature_mode(),
        &train.kmeans(),
        par,
    )?;
    evaluate(&fit.classifier, model, ds, split, par)
}

fn can_score(ds: &PuDataset, split: EvalSplit) -> bool {
    ds.has_hidden_labels() && (split == EvalSplit::Unlabeled || ds.n_test() > 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub peak_distance: f64,
    /// Monitored accuracy at the best checkpoint, when monitoring ran.
    pub accuracy_at_peak: Option<f64>,
    /// Highest monitored accuracy over all checks.
    pub best_monitored_accuracy: Option<f64>,
}

impl TrainSummary {
    fn from_outcome(o: &TrainOutcome) -> Self {
        let h = &o.state.history;
        Self {
            best_epoch: o.best_epoch,
            epochs_run: o.state.epoch,
            stop_reason: o.stop_reason,
            peak_distance: o.peak_distance(),
            accuracy_at_peak: h
                .iter()
                .find(|r| r.epoch == o.best_epoch)
                .and_then(|r| r.eval_accuracy),
            best_monitored_accuracy: h.iter().filter_map(|r| r.eval_accuracy).reduce(f64::max),
        }
    }
}

/// Trains on a loaded dataset, monitoring the eval split when asked and
/// possible.
pub fn run_training(
    cfg: &RunConfig,
    train: &TrainConfig,
    ds: &PuDataset,
    monitor: bool,
) -> Result<TrainOutcome> {
    let split = cfg.eval.split;
    let monitor = monitor && can_score(ds, split);
    train_with_monitor(ds.training_view(), train, |model, _| {
        if !monitor {
            return Ok(None);
        }
        score_split(model, ds, train, split, train.parallelism).map(|e| Some(e.accuracy))
    })
}

pub fn train(cfg: &RunConfig) -> Result<(TrainSummary, TrainOutcome)> {
    let data = load_data(cfg)?;
    let out = create_out(cfg)?;
    let outcome = run_training(cfg, &cfg.train, &data.dataset, cfg.eval.monitor)?;
    outcome.best.save(&out.join("best.ckpt"))?;
    outcome.state.model.save(&out.join("final.ckpt"))?;
    write_metrics(&out.join("metrics.csv"), &outcome.state.history)?;
    let summary = TrainSummary::from_outcome(&outcome);

    let mut m = manifest_for("train", cfg, &data)?;
    m.notes
        .push(format!("clustering space: {:?}", cfg.train.feature_mode()));
    for name in ["best.ckpt", "final.ckpt", "metrics.csv"] {
        m.add_output(&out, name)?;
    }
    m.summary = serde_json::json!({
        "architecture": outcome.best.encoder.architecture(),
        "train": summary,
    });
    m.write(&out)?;
    Ok((summary, outcome))
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub variant: String,
    pub seed: u64,
    pub accuracy: f64,
    pub epochs_to_stop: Option<usize>,
    pub centroid_distance_peak: Option<f64>,
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        kind => Error::Format {
            path: path.to_path_buf(),
            offset,
            message: format!("{kind:?}"),
        },
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Replaces the row with the same dataset, variant and seed, or appends.
fn upsert_result(path: &Path, row: &ResultRow) -> Result<Vec<ResultRow>> {
    let mut rows = if path.is_file() {
        read_results(path)?
    } else {
        Vec::new()
    };
    match rows
        .iter_mut()
        .find(|r| (&r.dataset, &r.variant, r.seed) == (&row.dataset, &row.variant, row.seed))
    {
        Some(existing) => *existing = row.clone(),
        None => rows.push(row.clone()),
    }
    write_csv(path, &rows)?;
    Ok(rows)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// `dataset variant: mean +- std (n runs)` lines, in first-seen order.
pub fn summarize(rows: &[ResultRow]) -> Vec<String> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.dataset.as_str(), r.variant.as_str())) {
            keys.push((&r.dataset, &r.variant));
        }
    }
    keys.into_iter()
        .map(|(d, v)| {
            let acc: Vec<f64> = rows
                .iter()
                .filter(|r| r.dataset == d && r.variant == v)
                .map(|r| r.accuracy * 100.0)
                .collect();
            let (m, s) = mean_std(&acc);
            format!("{d} {v}: {m:.1} ± {s:.1} ({} runs)", acc.len())
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `results.csv` in the output directory.
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub split: EvalSplit,
    pub checkpoint: String,
    pub evaluation: Evaluation,
    pub low_confidence: bool,
    pub row: ResultRow,
    #[serde(skip)]
    pub table: Vec<String>,
}

pub fn eval(cfg: &RunConfig, opts: &EvalOptions) -> Result<EvalSummary> {
    let out = cfg.out_dir();
    let ckpt = opts
        .checkpoint
        .clone()
        .or_else(|| cfg.eval.checkpoint.clone())
        .unwrap_or_else(|| out.join("best.ckpt"));
    if !ckpt.is_file() {
        return Err(Error::Usage(format!(
            "checkpoint {} not found; run `train` first",
            ckpt.display()
        )));
    }
    let data = load_data(cfg)?;
    let ds = &data.dataset;
    if !can_score(ds, cfg.eval.split) {
        return Err(Error::Usage(format!(
            "dataset has no labels for the {:?} split",
            cfg.eval.split
        )));
    }
    let out = create_out(cfg)?;
    let model = PuModel::load(&ckpt)?;
    let par = cfg.parallelism;
    let fit = fit_classifier(
        &model,
        ds.training_view(),
        cfg.train.feature_mode(),
        &cfg.train.kmeans(),
        par,
    )?;
    let evaluation = evaluate(&fit.classifier, &model, ds, cfg.eval.split, par)?;
    let eval_view = ds.evaluation()?;
    let features = match cfg.eval.split {
        EvalSplit::Unlabeled => eval_view.unlabeled_features,
        EvalSplit::Test => eval_view.test.expect("checked above").features.view(),
    };
    write_predictions(
        &out.join("predictions.csv"),
        &fit.classifier.predict(&model, features, par)?,
    )?;
    write_json(
        &out.join("classifier.json"),
        &fit.classifier.to_artifact(&ckpt),
    )?;

    let train_manifest = ckpt
        .parent()
        .map(|d| crate::manifest::manifest_path(d, "train"));
    let train_summary: Option<TrainSummary> = train_manifest
        .filter(|p| p.is_file())
        .map(|p| Manifest::read(&p))
        .transpose()?
        .and_then(|m| serde_json::from_value(m.summary["train"].clone()).ok());
    let row = ResultRow {
        dataset: cfg.name.clone(),
        variant: model.variant.name().to_string(),
        seed: model.seed,
        accuracy: evaluation.accuracy,
        epochs_to_stop: train_summary.as_ref().map(|s| s.epochs_run),
        centroid_distance_peak: train_summary.as_ref().map(|s| s.peak_distance),
    };
    let results = opts
        .results
        .clone()
        .unwrap_or_else(|| out.join("results.csv"));
    if let Some(parent) = results.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let rows = upsert_result(&results, &row)?;
    let summary = EvalSummary {
        split: cfg.eval.split,
        checkpoint: ckpt.display().to_string(),
        evaluation,
        low_confidence: fit.classifier.low_confidence,
        row,
        table: summarize(&rows),
    };
    write_json(&out.join("eval.json"), &summary)?;

    let mut m = manifest_for("eval", cfg, &data)?;
    m.add_input(&ckpt)?;
    for name in ["predictions.csv", "classifier.json", "eval.json"] {
        m.add_output(&out, name)?;
    }
    if results.parent() == Some(out.as_path()) {
        m.add_output(&out, "results.csv")?;
    } else {
        m.notes
            .push(format!("results row written to {}", results.display()));
    }
    m.summary = serde_json::to_value(&summary).expect("plain data");
    m.write(&out)?;
    Ok(summary)
}

/// One ablation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: String,
    pub variant: String,
    pub anchor_scalar: Option<f64>,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub epochs_to_stop: Option<usize>,
    pub centroid_distance_peak: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
    pub flag: String,
}

/// Pooled accuracy of one variant, or one `(variant, a)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: String,
    /// Empty for the row pooled over every `a`.
    pub anchor_scalar: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub runs: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
    pub table: Vec<AblationCell>,
}

/// The training config of one ablation cell.
pub fn cell_config(
    base: &TrainConfig,
    variant: Variant,
    a: Option<f64>,
    seed: u64,
    par: Parallelism,
) -> TrainConfig {
    let mut loss = LossConfig::new(variant);
    loss.anchor_scalar = a;
    loss.anchor_policy = base.loss.anchor_policy;
    if variant == Variant::SingleVector {
        loss.mu_p = base.loss.mu_p.clone();
        loss.mu_u = base.loss.mu_u.clone();
    }
    TrainConfig {
        loss,
        seed,
        feature_mode: if variant.uses_codebook() {
            base.feature_mode
        } else {
            Some(FeatureMode::RawEncodings)
        },
        parallelism: par,
        ..base.clone()
    }
}

fn pooled(variant: &str, a: Option<f64>, rows: &[&AblationRow]) -> AblationCell {
    let acc: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
    let (mean, std) = if acc.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&acc);
        (Some(m), Some(s))
    };
    AblationCell {
        variant: variant.to_string(),
        anchor_scalar: a,
        mean_accuracy: mean,
        std_accuracy: std,
        runs: acc.len(),
        failed: rows.len() - acc.len(),
    }
}

pub fn ablate(cfg: &RunConfig) -> Result<AblationSummary> {
    let data = load_data(cfg)?;
    let ds = &data.dataset;
    if !can_score(ds, cfg.eval.split) {
        return Err(Error::Usage(format!(
            "dataset has no labels for the {:?} split",
            cfg.eval.split
        )));
    }
    let out = create_out(cfg)?;
    let seeds = if cfg.ablate.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        cfg.ablate.seeds.clone()
    };
    let mut cells = Vec::new();
    for &v in &cfg.ablate.variants {
        let scalars: Vec<Option<f64>> = if v.needs_anchor_scalar() {
            cfg.ablate
                .anchor_scalars
                .iter()
                .copied()
                .map(Some)
                .collect()
        } else {
            vec![None]
        };
        for a in scalars {
            for &seed in &seeds {
                cells.push((v, a, seed));
            }
        }
    }
    let inner = if cfg.parallelism.is_parallel() {
        Parallelism::Sequential
    } else {
        cfg.parallelism
    };
    let rows: Vec<AblationRow> = cfg.parallelism.map(cells.len(), |i| {
        let (v, a, seed) = cells[i];
        let tc = cell_config(&cfg.train, v, a, seed, inner);
        let result = run_training(cfg, &tc, ds, false).and_then(|o| {
            let acc = score_split(&o.best, ds, &tc, cfg.eval.split, inner)?.accuracy;
            Ok((acc, o))
        });
        let mut row = AblationRow {
            dataset: cfg.name.clone(),
            variant: v.name().to_string(),
            anchor_scalar: a,
            seed,
            accuracy: None,
            epochs_to_stop: None,
            centroid_distance_peak: None,
            status: "ok".into(),
            flag: if a == Some(0.0) {
                "no separation target (a = 0)".into()
            } else {
                String::new()
            },
        };
        match result {
            Ok((acc, o)) => {
                row.accuracy = Some(acc);
                row.epochs_to_stop = Some(o.state.epoch);
                row.centroid_distance_peak = Some(o.peak_distance());
            }
            Err(e) => {
                log::warn!("ablation cell {v} a={a:?} seed {seed} failed: {e}");
                row.status = format!("failed: {e}");
            }
        }
        row
    });

    let mut table = Vec::new();
    for &v in &cfg.ablate.variants {
        let of_variant: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v.name()).collect();
        table.push(pooled(v.name(), None, &of_variant));
    }
    for &v in cfg
        .ablate
        .variants
        .iter()
        .filter(|v| v.needs_anchor_scalar())
    {
        for &a in &cfg.ablate.anchor_scalars {
            let of_cell: Vec<&AblationRow> = rows
                .iter()
                .filter(|r| r.variant == v.name() && r.anchor_scalar == Some(a))
                .collect();
            table.push(pooled(v.name(), Some(a), &of_cell));
        }
    }
    write_csv(&out.join("ablation.csv"), &rows)?;
    write_csv(&out.join("ablation_table.csv"), &table)?;
    let mut m = manifest_for("ablate", cfg, &data)?;
    m.add_output(&out, "ablation.csv")?;
    m.add_output(&out, "ablation_table.csv")?;
    m.summary = serde_json::to_value(&table).expect("plain data");
    m.write(&out)?;
    Ok(AblationSummary { rows, table })
}

fn unit(dim: usize, i: usize) -> Result<Vec<f64>> {
    if dim <= i {
        return Err(Error::Config(format!(
            "default class means need dim >= 2, got {dim}"
        )));
    }
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    Ok(v)
}

fn means(
    dim: usize,
    pos: &Option<Vec<f64>>,
    neg: &Option<Vec<f64>>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let pos = pos.clone().map_or_else(|| unit(dim, 0), Ok)?;
    let neg = neg.clone().map_or_else(|| unit(dim, 1), Ok)?;
    if pos.len() != dim || neg.len() != dim {
        return Err(Error::Config(format!("class means must have length {dim}")));
    }
    Ok((pos, neg))
}

type Samplers = (Box<dyn RowSampler>, Box<dyn RowSampler>);

/// Positive and negative row samplers for `rows`.
pub fn samplers(rows: &RowsConfig, seed: u64) -> Result<Samplers> {
    Ok(match rows {
        RowsConfig::Gaussian {
            dim,
            std,
            positive_mean,
            negative_mean,
        } => {
            let (p, n) = means(*dim, positive_mean, negative_mean)?;
            (
                Box::new(GaussianRows { mean: p, std: *std }),
                Box::new(GaussianRows { mean: n, std: *std }),
            )
        }
        RowsConfig::Uniform {
            dim,
            half_width,
            positive_mean,
            negative_mean,
        } => {
            let (p, n) = means(*dim, positive_mean, negative_mean)?;
            (
                Box::new(UniformRows {
                    mean: p,
                    half_width: *half_width,
                }),
                Box::new(UniformRows {
                    mean: n,
                    half_width: *half_width,
                }),
            )
        }
        RowsConfig::Constant { positive, negative } => {
            if positive.len() != negative.len() || positive.is_empty() {
                return Err(Error::Config(
                    "constant rows must be nonempty and of equal length".into(),
                ));
            }
            (
                Box::new(ConstantRows {
                    row: positive.clone(),
                }),
                Box::new(ConstantRows {
                    row: negative.clone(),
                }),
            )
        }
        RowsConfig::Encoder {
            input_dim,
            separation,
            hidden,
            output_index,
        } => {
            let arch = Architecture::mlp(*input_dim, hidden, 1, 1);
            let init = InitConfig {
                seed: derive_seed(seed, NTK_INIT_STREAM),
                ..InitConfig::default()
            };
            let encoder = Encoder::new(arch, init)?;
            let source = Arc::new(IsotropicGaussianClasses::new(*input_dim, *separation)?);
            let make = |positive| EncoderJacobianRows {
                encoder: encoder.clone(),
                source: source.clone(),
                positive,
                output_index: *output_index,
            };
            (Box::new(make(true)), Box::new(make(false)))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NtkSummary {
    pub trials: usize,
    pub passes: usize,
    pub pass_rate: f64,
    pub regime_not_met: usize,
    pub sweep: Vec<SweepPoint>,
    /// Least-squares slope of `ln mean ||J^T w||` against `ln n`.
    pub sweep_slope: Option<f64>,
}

/// Slope of the least-squares line through `(x, y)`.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn verify_ntk(cfg: &RunConfig) -> Result<(NtkSummary, Vec<TheoremReport>)> {
    let n = &cfg.ntk;
    if n.trials == 0 {
        return Err(Error::Config("ntk.trials must be at least 1".into()));
    }
    let (pos, neg) = samplers(&n.rows, cfg.seed)?;
    let base = SystemConfig {
        n_p: n.n_p,
        n_up: n.n_up,
        n_un: n.n_un,
        alpha: n.alpha,
        mu_p: n.mu_p,
        mu_u: n.mu_u,
        seed: cfg.seed,
    };
    let out = create_out(cfg)?;
    let par = cfg.parallelism;
    let results = par.map(n.trials, |i| {
        let sys = SystemConfig {
            seed: derive_seed(cfg.seed, i as u64),
            ..base
        };
        verify_theorem(&build_system(pos.as_ref(), neg.as_ref(), &sys)?, n.epsilon)
    });
    let mut m = Manifest::new("verify-ntk", cfg);
    let mut reports = Vec::with_capacity(n.trials);
    for (i, r) in results.into_iter().enumerate() {
        let (report, trajectory) = r?;
        let dir = format!("trial-{i:03}");
        std::fs::create_dir_all(out.join(&dir)).map_err(|e| io_err(&out.join(&dir), e))?;
        write_json(&out.join(&dir).join("report.json"), &report)?;
        write_csv(&out.join(&dir).join("trajectory.csv"), &trajectory)?;
        m.add_output(&out, &format!("{dir}/report.json"))?;
        m.add_output(&out, &format!("{dir}/trajectory.csv"))?;
        reports.push(report);
    }
    let passes = reports.iter().filter(|r| r.pass).count();
    let regime_not_met = reports.iter().filter(|r| r.t_used.is_none()).count();
    let sweep = if n.sweep_sizes.is_empty() {
        Vec::new()
    } else {
        sample_size_sweep(
            pos.as_ref(),
            neg.as_ref(),
            &base,
            &n.sweep_sizes,
            n.sweep_draws,
            n.epsilon,
            par,
        )?
    };
    let sweep_slope = (sweep.len() >= 2).then(|| {
        let pts: Vec<(f64, f64)> = sweep
            .iter()
            .map(|s| ((s.n as f64).ln(), s.mean_jt_w_norm.ln()))
            .collect();
        fit_slope(&pts)
    });
    if !sweep.is_empty() {
        write_csv(&out.join("sweep.csv"), &sweep)?;
        m.add_output(&out, "sweep.csv")?;
    }
    let summary = NtkSummary {
        trials: n.trials,
        passes,
        pass_rate: passes as f64 / n.trials as f64,
        regime_not_met,
        sweep,
        sweep_slope,
    };
    write_json(&out.join("summary.json"), &summary)?;
    m.add_output(&out, "summary.json")?;
    m.summary = serde_json::to_value(&summary).expect("plain data");
    m.write(&out)?;
    Ok((summary, reports))
}
