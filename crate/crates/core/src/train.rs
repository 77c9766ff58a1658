//! The training and evaluation harness: experiment configuration, the
//! epoch/batch loop with milestone learning-rate decay, and fold-wise
//! angular-error evaluation.
//!
//! The loop per batch: draw a shuffled batch, look up each sample's cached
//! coarse direction (assigned once at dataset preparation — the zero-shot
//! pass runs on the initial frozen weights and classes never change during
//! training), encode image and prompt, fuse, regress pitch/yaw, take the
//! configured loss and update the trainable parameter groups with Adam.
//!
//! Defaults reproduce the published regimen: batch 128, 50 epochs, Adam at
//! 1e-5 with 0.1 decay after epochs 5 and 45. Loss defaults by protocol —
//! mean absolute error for leave-one-subject-out datasets, mean squared
//! error for the 3-fold protocol — and can be overridden.
//!
//! Checkpointing is delegated to a [`TrainObserver`]: the loop calls it
//! after every epoch with the full optimizer state (and once more on a
//! numerical abort), so an I/O layer can persist per-epoch, best-so-far and
//! diagnostic checkpoints without this crate touching files.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::encoder::{BackboneId, FreezePolicy, ImageTensor};
use crate::fusion::{FusionMode, TokenLayout};
use crate::geometry::{angular_error_deg, GazeAngles, GeometryError};
use crate::manifest::FaceSample;
use crate::model::{BatchGradState, GazeClipModel, LossKind, PreparedSample};
use crate::optim::{Adam, MilestoneSchedule, ScheduleError};
use crate::prompt::{PromptError, PromptMode};
use crate::split::{partition_indices, FoldSpec};

/// Which cross-validation protocol an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Protocol {
    /// Leave-one-subject-out.
    Loso,
    /// Three folds of subject groups.
    Kfold3,
}

impl Protocol {
    /// Config-file / CLI spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Loso => "loso",
            Protocol::Kfold3 => "kfold3",
        }
    }

    /// The loss used when the config does not override it.
    pub fn default_loss(self) -> LossKind {
        match self {
            Protocol::Loso => LossKind::L1,
            Protocol::Kfold3 => LossKind::L2,
        }
    }
}

impl core::fmt::Display for Protocol {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Protocol {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loso" => Ok(Protocol::Loso),
            "kfold3" => Ok(Protocol::Kfold3),
            _ => Err(TrainError::UnknownProtocol(s.to_string())),
        }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentConfig {
    /// Backbone identifier.
    pub backbone: BackboneId,
    /// Fusion mode.
    pub fusion_mode: FusionMode,
    /// Attention token layout.
    pub token_layout: TokenLayout,
    /// Which towers train.
    pub freeze: FreezePolicy,
    /// What text accompanies each sample.
    pub prompt_mode: PromptMode,
    /// Loss override; `None` selects by protocol.
    pub loss: Option<LossKind>,
    /// Samples per optimizer step.
    pub batch_size: usize,
    /// Passes over the training fold.
    pub epochs: u32,
    /// Adam learning rate before any decay.
    pub initial_lr: f64,
    /// 1-based epochs after which the rate decays.
    pub lr_milestones: Vec<u32>,
    /// Multiplicative decay at each milestone.
    pub lr_gamma: f64,
    /// Run seed: initialization and batch shuffling derive from it.
    pub seed: u64,
    /// Cross-validation protocol.
    pub protocol: Protocol,
    /// Manifest path or dataset tag (identifies the data in the hash).
    pub manifest: String,
    /// Optional hard cap on optimizer steps (smoke tests, debugging).
    pub max_steps: Option<u64>,
}

impl Default for ExperimentConfig {
    /// The published regimen.
    fn default() -> Self {
        ExperimentConfig {
            backbone: BackboneId::Rn50,
            fusion_mode: FusionMode::CrossAttention,
            token_layout: TokenLayout::OuterProduct,
            freeze: FreezePolicy::default(),
            prompt_mode: PromptMode::Predefined,
            loss: None,
            batch_size: 128,
            epochs: 50,
            initial_lr: 1e-5,
            lr_milestones: alloc::vec![5, 45],
            lr_gamma: 0.1,
            seed: 0,
            protocol: Protocol::Loso,
            manifest: String::new(),
            max_steps: None,
        }
    }
}

impl ExperimentConfig {
    /// The loss actually used: the override, or the protocol default.
    pub fn effective_loss(&self) -> LossKind {
        self.loss.unwrap_or_else(|| self.protocol.default_loss())
    }

    /// Validate the scalar fields (the schedule validates its own).
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1"));
        }
        if self.max_steps == Some(0) {
            return Err(TrainError::InvalidConfig("max_steps must be at least 1 when set"));
        }
        self.schedule()?;
        Ok(())
    }

    /// The learning-rate schedule this config describes.
    pub fn schedule(&self) -> Result<MilestoneSchedule, ScheduleError> {
        MilestoneSchedule::new(self.initial_lr, self.lr_milestones.clone(), self.lr_gamma)
    }

    /// Learning rate of a 1-based epoch, bounded by the configured epoch
    /// count.
    pub fn lr_at(&self, epoch: u32) -> Result<f64, TrainError> {
        if epoch == 0 || epoch > self.epochs {
            return Err(TrainError::EpochOutOfRange { epoch, epochs: self.epochs });
        }
        Ok(self.schedule()?.lr_at(epoch)?)
    }

    /// Build the model this config describes.
    pub fn build_model(&self) -> GazeClipModel {
        let mut model = GazeClipModel::new(
            self.backbone,
            self.fusion_mode,
            self.token_layout,
            self.seed,
        );
        model.set_freeze(self.freeze);
        model
    }

    /// Canonical key-value rendering: one sorted `key=value` line per
    /// field. This is the hashing pre-image, so every semantic field
    /// appears and floats use shortest round-trip formatting.
    pub fn canonical_kv(&self) -> String {
        let milestones = self
            .lr_milestones
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut lines = alloc::vec![
            format!("backbone={}", self.backbone.as_str()),
            format!("batch_size={}", self.batch_size),
            format!("epochs={}", self.epochs),
            format!("freeze.image_trainable={}", self.freeze.image_trainable),
            format!("freeze.text_trainable={}", self.freeze.text_trainable),
            format!("fusion_mode={}", self.fusion_mode.as_str()),
            format!("initial_lr={:?}", self.initial_lr),
            format!("loss={}", self.effective_loss().as_str()),
            format!("lr_gamma={:?}", self.lr_gamma),
            format!("lr_milestones={milestones}"),
            format!("manifest={}", self.manifest),
            format!(
                "max_steps={}",
                self.max_steps.map(|s| s.to_string()).unwrap_or_else(|| String::from("none"))
            ),
            format!("prompt_mode={}", self.prompt_mode.as_str()),
            format!("protocol={}", self.protocol.as_str()),
            format!("seed={}", self.seed),
            format!("token_layout={}", self.token_layout.as_str()),
        ];
        lines.sort_unstable();
        let mut out = String::new();
        for line in lines {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the canonical rendering: the experiment identity.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_kv().as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            const HEX: &[u8; 16] = b"0123456789abcdef";
            out.push(HEX[(byte >> 4) as usize] as char);
            out.push(HEX[(byte & 0xf) as usize] as char);
        }
        out
    }
}

/// A sample ready for the training loop: manifest row (with its cached
/// direction) plus pooled pixels and resolved prompt.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    /// Manifest metadata; `direction` is always populated.
    pub meta: FaceSample,
    /// Pooled image, prompt text and target.
    pub prepared: PreparedSample,
}

/// Attach images to manifest rows and resolve each sample's prompt.
///
/// Directions already cached in the manifest are trusted; missing ones are
/// assigned here by the zero-shot cosine argmax on `model`'s current
/// (initial, frozen-tower) weights and cached into the returned metadata —
/// assignment runs once, before training, and never changes afterwards.
pub fn prepare_dataset(
    model: &GazeClipModel,
    items: &[(FaceSample, ImageTensor)],
    prompt_mode: PromptMode,
) -> Result<Vec<LoadedSample>, PromptError> {
    let prompts = model.prompt_embeddings();
    let mut out = Vec::with_capacity(items.len());
    for (meta, image) in items {
        let mut meta = meta.clone();
        let direction = match meta.direction {
            Some(class) => class,
            None => {
                let emb = model.encode_image(image);
                model.zero_shot_direction(&emb, &prompts)?
            }
        };
        meta.direction = Some(direction);
        let prompt = prompt_mode.fusion_text(direction);
        let prepared = PreparedSample::new(image, prompt, meta.gaze);
        out.push(LoadedSample { meta, prepared });
    }
    Ok(out)
}

/// Everything an observer needs to persist training state at an epoch
/// boundary.
pub struct TrainSnapshot<'a> {
    /// 1-based epoch just completed.
    pub epoch: u32,
    /// Optimizer steps taken so far.
    pub steps_done: u64,
    /// Mean training loss of the completed epoch.
    pub epoch_mean_loss: f64,
    /// Learning rate the epoch ran at.
    pub lr: f64,
    /// Model parameters.
    pub model: &'a GazeClipModel,
    /// Optimizer state.
    pub adam: &'a Adam,
}

/// Receives per-epoch snapshots (checkpoint cadence: every epoch; trackers
/// for best-so-far live behind this trait) and the diagnostic snapshot on a
/// numerical abort.
pub trait TrainObserver {
    /// Called after every completed epoch. Returning an error message
    /// aborts training (e.g. checkpoint I/O failed).
    fn epoch_end(&mut self, snapshot: &TrainSnapshot<'_>) -> Result<(), String>;

    /// Called once if training aborts on a non-finite loss, with the state
    /// at the failing step, so a diagnostic checkpoint can be written.
    fn numerical_abort(&mut self, _snapshot: &TrainSnapshot<'_>) {}
}

/// Observer that does nothing.
pub struct NoopObserver;

impl TrainObserver for NoopObserver {
    fn epoch_end(&mut self, _snapshot: &TrainSnapshot<'_>) -> Result<(), String> {
        Ok(())
    }
}

/// Per-run training record.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Mean loss per completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Optimizer steps taken.
    pub steps: u64,
    /// Epochs completed.
    pub epochs_completed: u32,
}

/// A finished training run.
pub struct TrainOutcome {
    /// The trained model (final-epoch weights).
    pub model: GazeClipModel,
    /// Final optimizer state (for exact resume).
    pub adam: Adam,
    /// Loss series and counters.
    pub report: TrainReport,
}

impl core::fmt::Debug for TrainOutcome {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("TrainOutcome")
            .field("params", &self.model.param_count())
            .field("report", &self.report)
            .finish()
    }
}


/// Harness errors.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    /// A config field violates its contract.
    InvalidConfig(&'static str),
    /// Learning-rate schedule rejected the config.
    Schedule(ScheduleError),
    /// Epoch outside `1..=epochs`.
    EpochOutOfRange {
        /// Requested epoch.
        epoch: u32,
        /// Configured epoch count.
        epochs: u32,
    },
    /// The fold has no training samples.
    EmptyTrainFold,
    /// The fold has no test samples.
    EmptyTestFold,
    /// Loss became NaN or infinite.
    NonFiniteLoss {
        /// Epoch of the failing step.
        epoch: u32,
        /// 1-based optimizer step within the run.
        step: u64,
    },
    /// An observer (e.g. checkpoint writer) failed.
    Observer(String),
    /// Zero-shot assignment failed during preparation.
    Prompt(PromptError),
    /// Metric computation failed.
    Geometry(GeometryError),
    /// Unrecognized protocol name.
    UnknownProtocol(String),
    /// Unrecognized ablation suite name.
    UnknownSuite(String),
    /// No models supplied to an ensemble evaluation.
    EmptyEnsemble,
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            TrainError::Schedule(e) => write!(f, "invalid schedule: {e}"),
            TrainError::EpochOutOfRange { epoch, epochs } => {
                write!(f, "epoch {epoch} out of range 1..={epochs}")
            }
            TrainError::EmptyTrainFold => write!(f, "fold has no training samples"),
            TrainError::EmptyTestFold => write!(f, "fold has no test samples"),
            TrainError::NonFiniteLoss { epoch, step } => {
                write!(f, "training aborted: non-finite loss at epoch {epoch}, step {step}")
            }
            TrainError::Observer(msg) => write!(f, "observer failed: {msg}"),
            TrainError::Prompt(e) => write!(f, "prompt assignment failed: {e}"),
            TrainError::Geometry(e) => write!(f, "metric failed: {e}"),
            TrainError::UnknownProtocol(s) => {
                write!(f, "unknown protocol `{s}` (expected loso or kfold3)")
            }
            TrainError::UnknownSuite(s) => {
                write!(
                    f,
                    "unknown ablation suite `{s}` (expected prompt_modes, freeze_grid, fusion_modes or backbones)"
                )
            }
            TrainError::EmptyEnsemble => write!(f, "ensemble evaluation needs at least one model"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

impl From<ScheduleError> for TrainError {
    fn from(e: ScheduleError) -> Self {
        TrainError::Schedule(e)
    }
}

impl From<PromptError> for TrainError {
    fn from(e: PromptError) -> Self {
        TrainError::Prompt(e)
    }
}

impl From<GeometryError> for TrainError {
    fn from(e: GeometryError) -> Self {
        TrainError::Geometry(e)
    }
}

/// Train on one fold of a prepared dataset.
///
/// Deterministic for a fixed config: initialization derives from the seed,
/// and each epoch's batch order comes from a fresh ChaCha20 stream seeded
/// by the run seed mixed with the epoch number. Only parameter groups the
/// freeze policy marks trainable are updated.
pub fn train(
    config: &ExperimentConfig,
    dataset: &[LoadedSample],
    fold: &FoldSpec,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    train_from(config, config.build_model(), dataset, fold, observer)
}

/// [`train`] with an explicit starting model instead of a fresh
/// initialization — the entry point for runs that begin from externally
/// loaded weights. The model must have been built from `config` (or share
/// its layout); the optimizer always starts cold.
pub fn train_from(
    config: &ExperimentConfig,
    mut model: GazeClipModel,
    dataset: &[LoadedSample],
    fold: &FoldSpec,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let schedule = config.schedule()?;
    let loss_kind = config.effective_loss();

    let metas: Vec<FaceSample> = dataset.iter().map(|s| s.meta.clone()).collect();
    let prepared: Vec<PreparedSample> = dataset.iter().map(|s| s.prepared.clone()).collect();
    let (train_indices, _) = partition_indices(&metas, fold);
    if train_indices.is_empty() {
        return Err(TrainError::EmptyTrainFold);
    }

    let mut adam = Adam::new(model.param_count());
    let ranges = model.trainable_ranges();
    let mut state = BatchGradState::new();

    let mut order = train_indices;
    let mut step_losses: Vec<f64> = Vec::new();
    let mut epoch_losses: Vec<f64> = Vec::new();
    let mut steps_done: u64 = 0;
    let mut epochs_completed: u32 = 0;

    'epochs: for epoch in 1..=config.epochs {
        let lr = schedule.lr_at(epoch)?;
        let mut rng = ChaCha20Rng::seed_from_u64(
            config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        order.shuffle(&mut rng);

        let epoch_start = step_losses.len();
        for batch in order.chunks(config.batch_size) {
            if let Some(cap) = config.max_steps {
                if steps_done >= cap {
                    break 'epochs;
                }
            }
            let loss = model.batch_loss_and_grad(&prepared, batch, loss_kind, &mut state);
            steps_done += 1;
            if !loss.is_finite() {
                observer.numerical_abort(&TrainSnapshot {
                    epoch,
                    steps_done,
                    epoch_mean_loss: loss,
                    lr,
                    model: &model,
                    adam: &adam,
                });
                return Err(TrainError::NonFiniteLoss { epoch, step: steps_done });
            }
            adam.step(model.theta_mut(), state.grad(), lr, &ranges);
            step_losses.push(loss);
        }

        let epoch_steps = step_losses.len() - epoch_start;
        if epoch_steps == 0 {
            break;
        }
        let mean = step_losses[epoch_start..].iter().sum::<f64>() / epoch_steps as f64;
        epoch_losses.push(mean);
        epochs_completed = epoch;
        observer
            .epoch_end(&TrainSnapshot {
                epoch,
                steps_done,
                epoch_mean_loss: mean,
                lr,
                model: &model,
                adam: &adam,
            })
            .map_err(TrainError::Observer)?;
    }

    Ok(TrainOutcome {
        model,
        adam,
        report: TrainReport { step_losses, epoch_losses, steps: steps_done, epochs_completed },
    })
}

/// One subject's evaluation summary.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubjectError {
    /// Subject id.
    pub subject_id: String,
    /// Mean angular error over the subject's samples, degrees.
    pub mean_error_deg: f64,
    /// Samples evaluated.
    pub sample_count: usize,
}

/// Fold-level evaluation result.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    /// Mean angular error over the fold's test samples, degrees.
    pub fold_mean_deg: f64,
    /// Per-subject breakdown, sorted by subject id.
    pub per_subject: Vec<SubjectError>,
    /// Test samples evaluated.
    pub sample_count: usize,
    /// Identity hash of the producing config.
    pub config_hash: String,
    /// Wall-clock seconds, filled by the caller (0 here; excluded from
    /// determinism comparisons).
    pub wall_clock_secs: f64,
}

/// Evaluate an arbitrary predictor over a fold's test samples.
///
/// The backbone of [`evaluate`]; exposed so tests can inject oracle
/// predictors (e.g. the ground truth itself, or a constant).
pub fn evaluate_with(
    predict: &mut dyn FnMut(&LoadedSample) -> GazeAngles,
    dataset: &[LoadedSample],
    fold: &FoldSpec,
    config_hash: &str,
) -> Result<MetricsReport, TrainError> {
    let metas: Vec<FaceSample> = dataset.iter().map(|s| s.meta.clone()).collect();
    let (_, test_indices) = partition_indices(&metas, fold);
    if test_indices.is_empty() {
        return Err(TrainError::EmptyTestFold);
    }

    // Per-subject running sums, keyed by sorted subject id.
    let mut subjects: Vec<(String, f64, usize)> = Vec::new();
    let mut total = 0.0;
    for &i in &test_indices {
        let sample = &dataset[i];
        let pred = predict(sample);
        let err = angular_error_deg(pred, sample.meta.gaze)?;
        total += err;
        let key = &sample.meta.subject_id;
        match subjects.binary_search_by(|(s, _, _)| s.cmp(key)) {
            Ok(pos) => {
                subjects[pos].1 += err;
                subjects[pos].2 += 1;
            }
            Err(pos) => subjects.insert(pos, (key.clone(), err, 1)),
        }
    }

    let per_subject = subjects
        .into_iter()
        .map(|(subject_id, sum, n)| SubjectError {
            subject_id,
            mean_error_deg: sum / n as f64,
            sample_count: n,
        })
        .collect();
    Ok(MetricsReport {
        fold_mean_deg: total / test_indices.len() as f64,
        per_subject,
        sample_count: test_indices.len(),
        config_hash: String::from(config_hash),
        wall_clock_secs: 0.0,
    })
}

/// Evaluate a trained model over a fold's test samples.
///
/// Side-effect-free: the model is only read. Deterministic: same model and
/// fold give an identical report (wall-clock excluded, left at 0).
pub fn evaluate(
    model: &GazeClipModel,
    dataset: &[LoadedSample],
    fold: &FoldSpec,
    config_hash: &str,
) -> Result<MetricsReport, TrainError> {
    evaluate_with(
        &mut |sample| model.predict_prepared(&sample.prepared),
        dataset,
        fold,
        config_hash,
    )
}

/// Evaluate an ensemble by averaging member predictions per sample before
/// the metric (the documented stand-in for multi-seed ensemble rows).
pub fn evaluate_ensemble(
    models: &[&GazeClipModel],
    dataset: &[LoadedSample],
    fold: &FoldSpec,
    config_hash: &str,
) -> Result<MetricsReport, TrainError> {
    if models.is_empty() {
        return Err(TrainError::EmptyEnsemble);
    }
    let inv = 1.0 / models.len() as f64;
    evaluate_with(
        &mut |sample| {
            let mut pitch = 0.0;
            let mut yaw = 0.0;
            for model in models {
                let p = model.predict_prepared(&sample.prepared);
                pitch += p.pitch;
                yaw += p.yaw;
            }
            GazeAngles { pitch: pitch * inv, yaw: yaw * inv }
        },
        dataset,
        fold,
        config_hash,
    )
}

/// Sample-weighted pool of fold means: `sum(mean_i * n_i) / sum(n_i)`.
pub fn pooled_mean_deg(reports: &[MetricsReport]) -> Option<f64> {
    let total_samples: usize = reports.iter().map(|r| r.sample_count).sum();
    if total_samples == 0 {
        return None;
    }
    let weighted: f64 = reports.iter().map(|r| r.fold_mean_deg * r.sample_count as f64).sum();
    Some(weighted / total_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::IMAGE_LEN;
    use crate::params::ParamGroup;
    use crate::split::plan_loso;
    use alloc::vec;

    fn synthetic_image(seed: u64) -> ImageTensor {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(12345);
        ImageTensor::new(
            (0..IMAGE_LEN)
                .map(|_| {
                    state = state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    (state >> 40) as f64 / (1u64 << 24) as f64
                })
                .collect(),
        )
        .unwrap()
    }

    fn tiny_dataset(config: &ExperimentConfig, subjects: &[&str], per_subject: usize) -> Vec<LoadedSample> {
        let model = config.build_model();
        let items: Vec<(FaceSample, ImageTensor)> = subjects
            .iter()
            .enumerate()
            .flat_map(|(si, s)| {
                (0..per_subject).map(move |j| {
                    let k = (si * per_subject + j) as u64;
                    (
                        FaceSample {
                            image_ref: format!("{s}/{j}.png"),
                            subject_id: s.to_string(),
                            gaze: GazeAngles {
                                pitch: 0.05 * (k as f64 + 1.0) - 0.2,
                                yaw: 0.4 - 0.07 * k as f64,
                            },
                            direction: None,
                        },
                        synthetic_image(k + 100),
                    )
                })
            })
            .collect();
        prepare_dataset(&model, &items, config.prompt_mode).unwrap()
    }

    fn smoke_config() -> ExperimentConfig {
        ExperimentConfig {
            batch_size: 4,
            epochs: 3,
            initial_lr: 1e-3,
            lr_milestones: vec![2],
            manifest: String::from("synthetic"),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_config_matches_published_regimen() {
        let c = ExperimentConfig::default();
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.epochs, 50);
        assert_eq!(c.initial_lr, 1e-5);
        assert_eq!(c.lr_milestones, vec![5, 45]);
        assert_eq!(c.lr_gamma, 0.1);
        assert_eq!(c.effective_loss(), LossKind::L1);
        assert_eq!(c.lr_at(3).unwrap(), 1e-5);
        assert_eq!(c.lr_at(6).unwrap(), 1e-6);
        assert_eq!(c.lr_at(50).unwrap(), 1e-7);
        assert!(matches!(c.lr_at(0), Err(TrainError::EpochOutOfRange { .. })));
        assert!(matches!(c.lr_at(51), Err(TrainError::EpochOutOfRange { .. })));
    }

    #[test]
    fn loss_defaults_by_protocol_and_overrides() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.effective_loss(), LossKind::L1);
        c.protocol = Protocol::Kfold3;
        assert_eq!(c.effective_loss(), LossKind::L2);
        c.loss = Some(LossKind::L1);
        assert_eq!(c.effective_loss(), LossKind::L1);
        assert_eq!("loso".parse::<Protocol>().unwrap(), Protocol::Loso);
        assert!("5fold".parse::<Protocol>().is_err());
    }

    #[test]
    fn config_hash_is_stable_and_discriminating() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig::default();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = ExperimentConfig { seed: 1, ..ExperimentConfig::default() };
        assert_ne!(a.hash(), c.hash());
        let kv = a.canonical_kv();
        let mut lines: Vec<&str> = kv.lines().collect();
        let sorted = {
            let mut s = lines.clone();
            s.sort_unstable();
            s
        };
        assert_eq!(lines, sorted, "canonical rendering must be sorted");
        lines.retain(|l| l.starts_with("initial_lr"));
        assert_eq!(lines, vec!["initial_lr=1e-5"]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let c = ExperimentConfig { batch_size: 0, ..Default::default() };
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
        let c = ExperimentConfig { epochs: 0, ..Default::default() };
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
        let c = ExperimentConfig { max_steps: Some(0), ..Default::default() };
        assert!(matches!(c.validate(), Err(TrainError::InvalidConfig(_))));
        let c = ExperimentConfig { initial_lr: -1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn preparation_caches_directions_once() {
        let config = smoke_config();
        let dataset = tiny_dataset(&config, &["a", "b"], 2);
        for sample in &dataset {
            assert!(sample.meta.direction.is_some());
            // Predefined mode: the prompt names the cached class.
            let class = sample.meta.direction.unwrap();
            assert_eq!(
                sample.prepared.prompt.as_deref().unwrap(),
                crate::prompt::render_prompt(class)
            );
        }
        // Pre-cached directions are trusted verbatim.
        let model = config.build_model();
        let forced = vec![(
            FaceSample {
                image_ref: String::from("x.png"),
                subject_id: String::from("s"),
                gaze: GazeAngles { pitch: 0.0, yaw: 0.0 },
                direction: Some(crate::prompt::DirectionClass::Down),
            },
            synthetic_image(1),
        )];
        let loaded = prepare_dataset(&model, &forced, PromptMode::Predefined).unwrap();
        assert_eq!(loaded[0].meta.direction, Some(crate::prompt::DirectionClass::Down));
    }

    #[test]
    fn same_seed_runs_are_bitwise_identical() {
        let config = smoke_config();
        let dataset = tiny_dataset(&config, &["a", "b", "c"], 2);
        let plan = plan_loso(&dataset.iter().map(|s| s.meta.clone()).collect::<Vec<_>>()).unwrap();
        let fold = &plan.folds[0];
        let run1 = train(&config, &dataset, fold, &mut NoopObserver).unwrap();
        let run2 = train(&config, &dataset, fold, &mut NoopObserver).unwrap();
        assert_eq!(run1.report.step_losses, run2.report.step_losses);
        assert_eq!(run1.model.theta(), run2.model.theta());
        assert!(run1.report.steps > 0);
        assert_eq!(run1.report.epochs_completed, config.epochs);
        // And a different seed diverges.
        let other = ExperimentConfig { seed: 9, ..config };
        let dataset9 = tiny_dataset(&other, &["a", "b", "c"], 2);
        let run3 = train(&other, &dataset9, fold, &mut NoopObserver).unwrap();
        assert_ne!(run1.report.step_losses, run3.report.step_losses);
    }

    #[test]
    fn observer_sees_every_epoch_and_can_abort() {
        struct Recorder {
            epochs: Vec<u32>,
            fail_at: Option<u32>,
        }
        impl TrainObserver for Recorder {
            fn epoch_end(&mut self, snapshot: &TrainSnapshot<'_>) -> Result<(), String> {
                assert!(snapshot.epoch_mean_loss.is_finite());
                assert!(snapshot.lr > 0.0);
                assert_eq!(snapshot.model.theta().len(), snapshot.adam.len());
                self.epochs.push(snapshot.epoch);
                if self.fail_at == Some(snapshot.epoch) {
                    return Err(String::from("disk full"));
                }
                Ok(())
            }
        }
        let config = smoke_config();
        let dataset = tiny_dataset(&config, &["a", "b"], 2);
        let plan = plan_loso(&dataset.iter().map(|s| s.meta.clone()).collect::<Vec<_>>()).unwrap();

        let mut rec = Recorder { epochs: Vec::new(), fail_at: None };
        train(&config, &dataset, &plan.folds[0], &mut rec).unwrap();
        assert_eq!(rec.epochs, vec![1, 2, 3]);

        let mut failing = Recorder { epochs: Vec::new(), fail_at: Some(2) };
        let err = train(&config, &dataset, &plan.folds[0], &mut failing).unwrap_err();
        assert_eq!(err, TrainError::Observer(String::from("disk full")));
        assert_eq!(failing.epochs, vec![1, 2]);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        struct AbortWatcher {
            called: bool,
        }
        impl TrainObserver for AbortWatcher {
            fn epoch_end(&mut self, _s: &TrainSnapshot<'_>) -> Result<(), String> {
                Ok(())
            }
            fn numerical_abort(&mut self, snapshot: &TrainSnapshot<'_>) {
                self.called = true;
                assert!(!snapshot.epoch_mean_loss.is_finite());
            }
        }
        let config = ExperimentConfig { loss: Some(LossKind::L2), ..smoke_config() };
        let mut dataset = tiny_dataset(&config, &["a", "b"], 2);
        // Poison one training target far beyond overflow range for L2.
        for sample in dataset.iter_mut() {
            if sample.meta.subject_id == "b" {
                sample.prepared.target = [1e200, -1e200];
            }
        }
        let plan = plan_loso(&dataset.iter().map(|s| s.meta.clone()).collect::<Vec<_>>()).unwrap();
        let mut watcher = AbortWatcher { called: false };
        // Fold 0 tests "a", trains "b" (the poisoned subject).
        let err = train(&config, &dataset, &plan.folds[0], &mut watcher).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteLoss { epoch: 1, step: 1 }));
        assert!(watcher.called);
    }

    #[test]
    fn empty_train_fold_rejected() {
        let config = smoke_config();
        let dataset = tiny_dataset(&config, &["a"], 2);
        let fold = FoldSpec {
            train_subjects: vec![],
            test_subjects: vec![String::from("a")],
        };
        assert_eq!(
            train(&config, &dataset, &fold, &mut NoopObserver).unwrap_err(),
            TrainError::EmptyTrainFold
        );
    }

    #[test]
    fn harness_freeze_soundness_after_full_run() {
        let config = smoke_config();
        let dataset = tiny_dataset(&config, &["a", "b"], 2);
        let plan = plan_loso(&dataset.iter().map(|s| s.meta.clone()).collect::<Vec<_>>()).unwrap();
        let init = config.build_model();
        let outcome = train(&config, &dataset, &plan.folds[0], &mut NoopObserver).unwrap();
        let layout = outcome.model.layout();
        for range in layout.group_ranges(ParamGroup::TextTower) {
            assert_eq!(
                &outcome.model.theta()[range.clone()],
                &init.theta()[range],
                "frozen text tower moved"
            );
        }
        let mut changed = 0usize;
        let mut total = 0usize;
        for range in layout.group_ranges(ParamGroup::ImageTower) {
            for (after, before) in outcome.model.theta()[range.clone()]
                .iter()
                .zip(init.theta()[range].iter())
            {
                total += 1;
                if after != before {
                    changed += 1;
                }
            }
        }
        assert!(changed * 100 >= total * 99, "{changed}/{total} image-tower parameters moved");
    }

    #[test]
    fn max_steps_caps_the_run() {
        let config = ExperimentConfig { max_steps: Some(2), ..smoke_config() };
        let dataset = tiny_dataset(&config, &["a", "b", "c"], 2);
        let plan = plan_loso(&dataset.iter().map(|s| s.meta.clone()).collect::<Vec<_>>()).unwrap();
        let outcome = train(&config, &dataset, &plan.folds[0], &mut NoopObserver).unwrap();
        assert_eq!(outcome.report.steps, 2);
        assert_eq!(outcome.report.step_losses.len(), 2);
    }

    #[test]
    fn oracle_predictor_scores_zero_error() {
        let config = smoke_config();
        let dataset = tiny_dataset(&config, &["a", "b"], 3);
        let plan = plan_loso(&dataset.iter().map(|s| s.meta.clone()).collect::<Vec<_>>()).unwrap();
        let report = evaluate_with(
            &mut |s| s.meta.gaze,
            &dataset,
            &plan.folds[0],
            "h",
        )
        .unwrap();
        assert_eq!(report.fold_mean_deg, 0.0);
        assert_eq!(report.sample_count, 3);
        assert_eq!(report.per_subject.len(), 1);
        assert_eq!(report.per_subject[0].subject_id, "a");
        assert_eq!(report.per_subject[0].sample_count, 3);
    }

    #[test]
    fn constant_predictor_matches_brute_force_mean() {
        let config = smoke_config();
        let dataset = tiny_dataset(&config, &["a", "b"], 3);
        let plan = plan_loso(&dataset.iter().map(|s| s.meta.clone()).collect::<Vec<_>>()).unwrap();
        let zero = GazeAngles { pitch: 0.0, yaw: 0.0 };
        let report =
            evaluate_with(&mut |_| zero, &dataset, &plan.folds[1], "h").unwrap();
        // Independent mean over the tested subject's samples.
        let mut expected = 0.0;
        let mut n = 0;
        for s in &dataset {
            if s.meta.subject_id == "b" {
                expected += angular_error_deg(zero, s.meta.gaze).unwrap();
                n += 1;
            }
        }
        expected /= n as f64;
        assert!((report.fold_mean_deg - expected).abs() < 1e-12);
    }

    #[test]
    fn pooled_mean_matches_single_pooled_evaluation() {
        let config = smoke_config();
        let dataset = tiny_dataset(&config, &["a", "b", "c"], 2);
        let metas: Vec<FaceSample> = dataset.iter().map(|s| s.meta.clone()).collect();
        let plan = plan_loso(&metas).unwrap();
        let zero = GazeAngles { pitch: 0.01, yaw: -0.02 };
        let reports: Vec<MetricsReport> = plan
            .folds
            .iter()
            .map(|f| evaluate_with(&mut |_| zero, &dataset, f, "h").unwrap())
            .collect();
        let pooled = pooled_mean_deg(&reports).unwrap();
        // Single evaluation over everything (a fold testing all subjects).
        let all = FoldSpec {
            train_subjects: vec![],
            test_subjects: crate::manifest::distinct_subjects(&metas),
        };
        let whole = evaluate_with(&mut |_| zero, &dataset, &all, "h").unwrap();
        assert!((pooled - whole.fold_mean_deg).abs() < 1e-9);
        assert!(pooled_mean_deg(&[]).is_none());
    }

    #[test]
    fn evaluation_is_side_effect_free_and_deterministic() {
        let config = smoke_config();
        let dataset = tiny_dataset(&config, &["a", "b"], 2);
        let plan = plan_loso(&dataset.iter().map(|s| s.meta.clone()).collect::<Vec<_>>()).unwrap();
        let model = config.build_model();
        let before = model.theta().to_vec();
        let r1 = evaluate(&model, &dataset, &plan.folds[0], "h").unwrap();
        let r2 = evaluate(&model, &dataset, &plan.folds[0], "h").unwrap();
        assert_eq!(model.theta(), before.as_slice());
        assert_eq!(r1, r2);
        assert!(r1.fold_mean_deg.is_finite());
        // Empty test fold is a contract error.
        let empty = FoldSpec {
            train_subjects: vec![String::from("a"), String::from("b")],
            test_subjects: vec![],
        };
        assert_eq!(
            evaluate(&model, &dataset, &empty, "h").unwrap_err(),
            TrainError::EmptyTestFold
        );
    }

    #[test]
    fn ensemble_averages_member_predictions() {
        let config = smoke_config();
        let dataset = tiny_dataset(&config, &["a", "b"], 1);
        let plan = plan_loso(&dataset.iter().map(|s| s.meta.clone()).collect::<Vec<_>>()).unwrap();
        let m1 = config.build_model();
        let m2 = ExperimentConfig { seed: 5, ..config.clone() }.build_model();
        let solo = evaluate(&m1, &dataset, &plan.folds[0], "h").unwrap();
        let same = evaluate_ensemble(&[&m1, &m1], &dataset, &plan.folds[0], "h").unwrap();
        assert!((solo.fold_mean_deg - same.fold_mean_deg).abs() < 1e-12);
        // Mean-of-predictions, verified directly on one sample.
        let sample = dataset
            .iter()
            .find(|s| plan.folds[0].tests_subject(&s.meta.subject_id))
            .unwrap();
        let p1 = m1.predict_prepared(&sample.prepared);
        let p2 = m2.predict_prepared(&sample.prepared);
        let expected = GazeAngles {
            pitch: (p1.pitch + p2.pitch) / 2.0,
            yaw: (p1.yaw + p2.yaw) / 2.0,
        };
        let report = evaluate_ensemble(&[&m1, &m2], &dataset, &plan.folds[0], "h").unwrap();
        let direct = angular_error_deg(expected, sample.meta.gaze).unwrap();
        assert!((report.fold_mean_deg - direct).abs() < 1e-12);
        assert!(evaluate_ensemble(&[], &dataset, &plan.folds[0], "h").is_err());
    }
}
