//! Mini-batch training with centroid-distance early stopping.
//!
//! Every `check_every` epochs the unlabeled set is mapped into the
//! clustering space and split by 2-means. The distance between the two
//! centroids is tracked; the model at its running maximum is kept, and
//! training stops once `patience` consecutive checks fail to beat it.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cluster::{kmeans2, KMeansConfig};
use crate::codebook::Codebook;
use crate::data::TrainingView;
use crate::encoder::{Adam, AdamConfig, Architecture, Encoder, InitConfig, InputNorm};
use crate::exec::Parallelism;
use crate::loss::{ablation_loss, LossConfig};
use crate::model::{FeatureMode, PuModel};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

const INIT_STREAM: u64 = 1;
const CODEBOOK_STREAM: u64 = 2;
const KMEANS_STREAM: u64 = 3;
const POSITIVE_STREAM: u64 = 4;
const EPOCH_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    pub check_every: usize,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub min_epochs: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            check_every: 1,
            patience: Some(3),
            min_epochs: 5,
        }
    }
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        if self.check_every == 0 || self.patience == Some(0) {
            return Err(Error::config(
                "stop rule needs check_every >= 1 and patience >= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderPreset {
    Mlp {
        hidden: Vec<usize>,
        k: usize,
        p: usize,
    },
    ConvSix {
        height: usize,
        width: usize,
        #[serde(default = "default_base_channels")]
        base_channels: usize,
        p: usize,
    },
}

fn default_base_channels() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub preset: EncoderPreset,
    #[serde(default = "one")]
    pub init_scale: f64,
    #[serde(default)]
    pub zero_final_layer: bool,
    /// Standardize each input feature with training-set statistics.
    #[serde(default = "yes")]
    pub standardize_inputs: bool,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl EncoderConfig {
    pub fn mlp(hidden: Vec<usize>, k: usize, p: usize) -> Self {
        Self {
            preset: EncoderPreset::Mlp { hidden, k, p },
            init_scale: 1.0,
            zero_final_layer: false,
            standardize_inputs: true,
        }
    }

    pub fn architecture(&self, input_dim: usize) -> Result<Architecture> {
        match &self.preset {
            EncoderPreset::Mlp { hidden, k, p } => Ok(Architecture::mlp(input_dim, hidden, *k, *p)),
            EncoderPreset::ConvSix {
                height,
                width,
                base_channels,
                p,
            } => {
                if height * width != input_dim {
                    return Err(Error::config(format!(
                        "conv preset expects {height}x{width} inputs, data has {input_dim} features"
                    )));
                }
                Architecture::conv_six(*height, *width, *base_channels, *p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub stop: StopRule,
    pub batch_size: usize,
    pub max_epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    /// 0 when omitted.
    #[serde(default)]
    pub seed: u64,
    /// Defaults to index vectors for codebook variants, raw encodings otherwise.
    #[serde(default)]
    pub feature_mode: Option<FeatureMode>,
    #[serde(default = "five")]
    pub kmeans_restarts: usize,
    #[serde(skip)]
    pub parallelism: Parallelism,
}

fn five() -> usize {
    5
}

impl TrainConfig {
    pub fn new(loss: LossConfig, encoder: EncoderConfig, seed: u64) -> Self {
        Self {
            loss,
            encoder,
            stop: StopRule::default(),
            batch_size: 64,
            max_epochs: 200,
            adam: AdamConfig::default(),
            seed,
            feature_mode: None,
            kmeans_restarts: 5,
            parallelism: Parallelism::default(),
        }
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.feature_mode
            .unwrap_or_else(|| FeatureMode::default_for(self.loss.variant))
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            seed: derive_seed(self.seed, KMEANS_STREAM),
            restarts: self.kmeans_restarts,
            max_iter: 300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stop.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 || self.kmeans_restarts == 0 {
            return Err(Error::config(
                "batch_size, max_epochs and kmeans_restarts must be >= 1",
            ));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

/// One centroid-distance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub epoch: usize,
    pub centroid_distance: f64,
    pub train_loss: f64,
    pub encoder_term: f64,
    pub codebook_term: f64,
    pub degenerate: bool,
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// Everything the loop owns while running.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: PuModel,
    pub encoder_opt: Adam,
    pub codebook_opt: Option<Adam>,
    pub epoch: usize,
    pub history: Vec<CheckRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Snapshot at the largest recorded centroid distance.
    pub best: PuModel,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainOutcome {
    pub fn peak_distance(&self) -> f64 {
        self.state
            .history
            .iter()
            .map(|r| r.centroid_distance)
            .fold(0.0, f64::max)
    }
}

/// Builds the untrained model for `config` on data of dimension `dim`.
pub fn init_model(config: &TrainConfig, data: TrainingView<'_>) -> Result<PuModel> {
    let arch = config.encoder.architecture(data.dim())?;
    config.loss.validate(arch.k, arch.p)?;
    if !config.loss.anchor_scalar_is_standard() {
        log::warn!(
            "anchor_scalar {:?} is outside the published grid {:?}",
            config.loss.anchor_scalar,
            crate::loss::STANDARD_ANCHOR_SCALARS
        );
    }
    let init = InitConfig {
        seed: derive_seed(config.seed, INIT_STREAM),
        init_scale: config.encoder.init_scale,
        zero_final_layer: config.encoder.zero_final_layer,
    };
    let norm = config.encoder.standardize_inputs.then(|| {
        let all = ndarray::concatenate(Axis(0), &[data.positives, data.unlabeled])
            .expect("views share width");
        InputNorm::fit(all.view())
    });
    let p = arch.p;
    let encoder = Encoder::new(arch, init)?.with_input_norm(norm)?;
    let codebook = config
        .loss
        .build_codebook(p, derive_seed(config.seed, CODEBOOK_STREAM))?;
    Ok(PuModel {
        encoder,
        codebook,
        variant: config.loss.variant,
        seed: config.seed,
        step: 0,
    })
}

/// Centroid distance of the unlabeled set in the configured feature space.
pub fn centroid_distance(
    model: &PuModel,
    unlabeled: ArrayView2<f64>,
    config: &TrainConfig,
) -> Result<(f64, bool)> {
    let reps = model.representation(unlabeled, config.feature_mode(), config.parallelism)?;
    let km = kmeans2(reps.view(), &config.kmeans(), config.parallelism)?;
    Ok((km.centroid_distance, km.degenerate))
}

pub fn train(data: TrainingView<'_>, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_monitor(data, config, |_, _| Ok(None))
}

/// Like [`train`], calling `monitor(model, epoch)` at every check. Whatever
/// it returns is stored as the check's `eval_accuracy`.
pub fn train_with_monitor<M>(
    data: TrainingView<'_>,
    config: &TrainConfig,
    mut monitor: M,
) -> Result<TrainOutcome>
where
    M: FnMut(&PuModel, usize) -> Result<Option<f64>>,
{
    config.validate()?;
    if data.positives.nrows() == 0 || data.unlabeled.nrows() < 2 {
        return Err(Error::usage(
            "training needs labeled positives and at least 2 unlabeled samples",
        ));
    }
    let model = init_model(config, data)?;
    let encoder_opt = Adam::for_encoder(config.adam, &model.encoder);
    let codebook_opt = model
        .codebook
        .as_ref()
        .filter(|_| config.loss.variant.updates_codebook())
        .map(|cb| Adam::new(config.adam, &[cb.vectors().len()]));
    let mut state = TrainState {
        model,
        encoder_opt,
        codebook_opt,
        epoch: 0,
        history: Vec::new(),
    };

    let n_u = data.unlabeled.nrows();
    let n_p = data.positives.nrows();
    let b = config.batch_size;
    let mut pos_rng = seeded(derive_seed(config.seed, POSITIVE_STREAM));
    let mut pos_order: Vec<usize> = (0..n_p).collect();
    let mut pos_cursor = n_p;

    let mut best = state.model.clone();
    let mut best_epoch = 0;
    let mut running_max = 0.0;
    let mut stale_checks = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=config.max_epochs {
        let mut rng = seeded(derive_seed(config.seed, EPOCH_STREAM + epoch as u64));
        let mut order: Vec<usize> = (0..n_u).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut enc_sum, mut cb_sum, mut steps) = (0.0, 0.0, 0.0, 0usize);

        for unl_idx in order.chunks(b) {
            let mut pos_idx = Vec::with_capacity(b.min(n_p));
            while pos_idx.len() < b.min(n_p) {
                if pos_cursor == n_p {
                    pos_order.shuffle(&mut pos_rng);
                    pos_cursor = 0;
                }
                pos_idx.push(pos_order[pos_cursor]);
                pos_cursor += 1;
            }
            let pos = data.positives.select(Axis(0), &pos_idx);
            let unl = data.unlabeled.select(Axis(0), unl_idx);
            let eval = step(&mut state, config, pos.view(), unl.view()).map_err(|e| match e {
                Error::Training(msg) => {
                    Error::Training(format!("epoch {epoch}, step {steps}: {msg}"))
                }
                other => other,
            })?;
            loss_sum += eval.0;
            enc_sum += eval.1;
            cb_sum += eval.2;
            steps += 1;
        }
        state.epoch = epoch;

        if epoch % config.stop.check_every != 0 {
            continue;
        }
        let (distance, degenerate) = centroid_distance(&state.model, data.unlabeled, config)?;
        let eval_accuracy = monitor(&state.model, epoch)?;
        let s = steps as f64;
        state.history.push(CheckRecord {
            epoch,
            centroid_distance: distance,
            train_loss: loss_sum / s,
            encoder_term: enc_sum / s,
            codebook_term: cb_sum / s,
            degenerate,
            eval_accuracy,
        });
        log::debug!(
            "epoch {epoch}: centroid distance {distance:.6}, loss {:.6}",
            loss_sum / s
        );

        if distance > running_max {
            running_max = distance;
            best = state.model.clone();
            best_epoch = epoch;
            stale_checks = 0;
        } else if running_max > 0.0 {
            stale_checks += 1;
        }
        if let Some(patience) = config.stop.patience {
            if stale_checks >= patience && epoch >= config.stop.min_epochs {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }
    if state.history.is_empty() {
        log::warn!("no centroid-distance check ran; returning the final model");
        best = state.model.clone();
        best_epoch = state.epoch;
    }
    Ok(TrainOutcome {
        state,
        best,
        best_epoch,
        stop_reason,
    })
}

/// One optimizer step. Returns the loss and its encoder and codebook parts.
fn step(
    state: &mut TrainState,
    config: &TrainConfig,
    pos: ArrayView2<f64>,
    unl: ArrayView2<f64>,
) -> Result<(f64, f64, f64)> {
    let model = &mut state.model;
    let eval = ablation_loss(
        &config.loss,
        &model.encoder,
        model.codebook.as_ref(),
        pos,
        unl,
    )?;
    state
        .encoder_opt
        .step_encoder(&mut model.encoder, &eval.encoder_grad)?;
    if let (Some(opt), Some(cb), Some(g)) = (
        state.codebook_opt.as_mut(),
        model.codebook.as_mut(),
        eval.codebook_grad.as_ref(),
    ) {
        update_codebook(opt, cb, g)?;
    }
    model.step += 1;
    Ok((eval.loss, eval.encoder_term, eval.codebook_term))
}

fn update_codebook(opt: &mut Adam, cb: &mut Codebook, grad: &Array2<f64>) -> Result<()> {
    let g = grad.as_slice().expect("standard layout");
    cb.update_vectors(|v| opt.step(&mut [v], &[g]))
}

/// Writes the check history as CSV.
pub fn write_metrics(path: &Path, history: &[CheckRecord]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(
        out,
        "epoch,centroid_distance,train_loss,encoder_term,codebook_term,degenerate,eval_accuracy"
    )
    .expect("vec write");
    for r in history {
        let acc = r.eval_accuracy.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.centroid_distance,
            r.train_loss,
            r.encoder_term,
            r.codebook_term,
            r.degenerate,
            acc
        )
        .expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_highdim, SplitSpec};
    use crate::loss::Variant;

    fn quick(variant: Variant, patience: Option<usize>) -> (crate::data::PuDataset, TrainConfig) {
        let ds = make_gaussian_highdim(4, 6.0, &SplitSpec::new(0.5, 100, 300, 5)).unwrap();
        let mut cfg = TrainConfig::new(
            LossConfig::new(variant).with_codebook_size(16),
            EncoderConfig::mlp(vec![16], 2, 3),
            11,
        );
        cfg.max_epochs = 6;
        cfg.stop = StopRule {
            check_every: 2,
            patience,
            min_epochs: 1,
        };
        (ds, cfg)
    }

    #[test]
    fn unlimited_patience_runs_all_epochs() {
        let (ds, cfg) = quick(Variant::VqFull, None);
        let out = train(ds.training_view(), &cfg).unwrap();
        assert_eq!(out.state.epoch, 6);
        assert_eq!(out.stop_reason, StopReason::MaxEpochs);
        let epochs: Vec<usize> = out.state.history.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![2, 4, 6]);
        let argmax = out.state.history.iter().fold((0, -1.0), |m, r| {
            if r.centroid_distance > m.1 {
                (r.epoch, r.centroid_distance)
            } else {
                m
            }
        });
        assert_eq!(out.best_epoch, argmax.0);
    }

    #[test]
    fn same_seed_same_run() {
        let (ds, mut cfg) = quick(Variant::VqFull, Some(1));
        cfg.parallelism = Parallelism::Sequential;
        let a = train(ds.training_view(), &cfg).unwrap();
        let b = train(ds.training_view(), &cfg).unwrap();
        assert_eq!(a.state.history, b.state.history);
        assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    }

    #[test]
    fn bad_stop_rule_rejected() {
        let (ds, mut cfg) = quick(Variant::VqFull, Some(0));
        cfg.stop.patience = Some(0);
        assert!(matches!(
            train(ds.training_view(), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn metrics_csv_has_row_per_check() {
        let dir = tempfile::tempdir().unwrap();
        let rec = CheckRecord {
            epoch: 3,
            centroid_distance: 1.5,
            train_loss: 0.25,
            encoder_term: 0.2,
            codebook_term: 0.05,
            degenerate: false,
            eval_accuracy: Some(0.9),
        };
        let path = dir.path().join("m.csv");
        write_metrics(&path, &[rec]).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "3,1.5,0.25,0.2,0.05,false,0.9"
        );
    }
}
