//! Synthetic experiment engine: face-like landmark sequences, a simulated
//! backbone, the fine-tuning loop, evaluation and the parameter sweeps.

mod data;
pub mod dataset_io;
mod eval;
mod sweep;
mod train;

pub use data::{face_template, generate_dataset, generate_sequence, generate_split, Dataset, SequenceSample, SplitSpec};
pub use eval::{evaluate, evaluate_outputs, thread_limit, THREADS_ENV};
pub use sweep::{
    export_loss_surface, loss_surface_value, robustness_sweep, robustness_table, sweep_theta, sweep_theta_pdc, write_csv,
    LossSurfacePoint, RobustnessLevels, RobustnessRow, ThetaPdcRow, ThetaRow, DEFAULT_THETA_GRID,
    DEFAULT_THETA_PDC_GRID,
};
pub use train::{finetune, initial_model, EpochStats, TrainOutcome};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::convlstm::{AdamConfig, ModelConfig};
use crate::error::{ensure_non_negative, ensure_positive, Error, Result};
use crate::heatmap::{DegradationConfig, DEFAULT_HEATMAP_SIGMA};
use crate::loss::{JitterConfig, PixelLoss, DEFAULT_LAMBDA, DEFAULT_THETA, DEFAULT_XI};
use crate::metrics::{NormalizationRule, DEFAULT_CUTOFF};
use crate::postproc::{Decoder, PdcConfig, DEFAULT_PDC_THRESHOLD};

/// Independent random streams derived from the experiment seed.
pub(crate) mod stream {
    pub const TRAIN: u64 = 1;
    pub const TEST: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const ORDER: u64 = 4;
    pub const NOISE: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for item `index` of random stream `stream`, derived from a base seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(stream)) ^ index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
        }
    }
}

/// Which objective drives fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L2,
    L1,
    #[serde(rename = "smoothl1")]
    SmoothL1,
    Wing,
    #[serde(rename = "awing")]
    AWing,
    Gm,
    /// `(lambda + psi) * pixel` with the pixel loss taken from `loss.pixel`.
    Jitter,
}

impl LossKind {
    pub const NAMES: [&'static str; 7] = ["l2", "l1", "smoothl1", "wing", "awing", "gm", "jitter"];

    /// The plain pixel loss for every kind except `Jitter`.
    pub fn plain_pixel_loss(self) -> Option<PixelLoss> {
        match self {
            LossKind::L2 => Some(PixelLoss::L2),
            LossKind::L1 => Some(PixelLoss::L1),
            LossKind::SmoothL1 => Some(PixelLoss::SmoothL1),
            LossKind::Wing => Some(PixelLoss::Wing),
            LossKind::AWing => Some(PixelLoss::AWing),
            LossKind::Gm => Some(PixelLoss::GemanMcClure),
            LossKind::Jitter => None,
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::config("loss.kind", format!("unknown loss `{s}`, expected one of {:?}", Self::NAMES)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub theta: f64,
    pub xi: f64,
    pub lambda: f64,
    /// Pixel loss inside the jitter objective.
    pub pixel: PixelLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Jitter,
            theta: DEFAULT_THETA,
            xi: DEFAULT_XI,
            lambda: DEFAULT_LAMBDA,
            pixel: PixelLoss::GemanMcClure,
        }
    }
}

impl LossConfig {
    /// Loss parameters in the form consumed by the loss module.
    pub fn jitter_config(&self) -> JitterConfig {
        JitterConfig {
            theta: self.theta,
            xi: self.xi,
            lambda: self.lambda,
            pixel_loss: self.kind.plain_pixel_loss().unwrap_or(self.pixel),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Argmax,
    Interp,
    Pdc,
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "argmax" => Ok(DecoderKind::Argmax),
            "interp" => Ok(DecoderKind::Interp),
            "pdc" => Ok(DecoderKind::Pdc),
            _ => Err(Error::config("decoder.kind", format!("unknown decoder `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub theta_pdc: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            kind: DecoderKind::Pdc,
            theta_pdc: DEFAULT_PDC_THRESHOLD,
        }
    }
}

impl DecoderConfig {
    pub fn decoder(&self) -> Result<Decoder> {
        Ok(match self.kind {
            DecoderKind::Argmax => Decoder::Argmax,
            DecoderKind::Interp => Decoder::Interp,
            DecoderKind::Pdc => Decoder::Pdc(PdcConfig::new(self.theta_pdc)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Size of the training set; every epoch visits each sequence once.
    pub sequences_per_epoch: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            epochs: 30,
            sequences_per_epoch: 50,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub test_sequences: usize,
    /// Shift range of the evaluation sequences; 0 gives static faces.
    pub test_shift_range: usize,
    /// Frame-count range of training sequences.
    pub min_frames: usize,
    pub max_frames: usize,
    /// Frame-count range of evaluation sequences.
    pub test_min_frames: usize,
    pub test_max_frames: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            test_sequences: 20,
            test_shift_range: 0,
            min_frames: 5,
            max_frames: 8,
            test_min_frames: 5,
            test_max_frames: 8,
        }
    }
}

/// Every knob of a synthetic experiment. Missing JSON keys take these defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub landmarks: usize,
    pub heatmap_sigma: f64,
    /// Half-width of the per-axis integer random walk applied to training faces.
    pub shift_range: usize,
    pub degradation: DegradationConfig,
    pub loss: LossConfig,
    pub decoder: DecoderConfig,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub dataset: DatasetConfig,
    pub normalization: NormalizationRule,
    pub cutoff: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            landmarks: 5,
            heatmap_sigma: DEFAULT_HEATMAP_SIGMA,
            shift_range: 2,
            degradation: DegradationConfig::default(),
            loss: LossConfig::default(),
            decoder: DecoderConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            dataset: DatasetConfig::default(),
            normalization: NormalizationRule::default(),
            cutoff: DEFAULT_CUTOFF,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.height < 3 || self.grid.width < 3 {
            return Err(Error::config("grid", "height and width must be >= 3"));
        }
        if self.landmarks == 0 {
            return Err(Error::config("landmarks", "must be >= 1"));
        }
        ensure_positive("heatmap_sigma", self.heatmap_sigma)?;
        self.degradation.validate()?;
        self.loss.jitter_config().validate()?;
        self.decoder.decoder()?;
        self.model.validate()?;
        self.optimizer.adam().validate()?;
        if self.optimizer.sequences_per_epoch == 0 {
            return Err(Error::config("optimizer.sequences_per_epoch", "must be >= 1"));
        }
        if self.dataset.test_sequences == 0 {
            return Err(Error::config("dataset.test_sequences", "must be >= 1"));
        }
        if self.dataset.min_frames < 2 || self.dataset.min_frames > self.dataset.max_frames {
            return Err(Error::config(
                "dataset.min_frames",
                format!(
                    "need 2 <= min_frames <= max_frames, got {}..{}",
                    self.dataset.min_frames, self.dataset.max_frames
                ),
            ));
        }
        if self.dataset.test_min_frames < 2 || self.dataset.test_min_frames > self.dataset.test_max_frames {
            return Err(Error::config(
                "dataset.test_min_frames",
                format!(
                    "need 2 <= test_min_frames <= test_max_frames, got {}..{}",
                    self.dataset.test_min_frames, self.dataset.test_max_frames
                ),
            ));
        }
        ensure_non_negative("cutoff", self.cutoff)?;
        if let NormalizationRule::InterOcular { left, right } = self.normalization {
            if left >= self.landmarks || right >= self.landmarks || left == right {
                return Err(Error::config("normalization", "eye indices must be distinct landmarks"));
            }
        }
        Ok(())
    }

    /// Offset added to coordinates before computing CVar, so means stay away from zero.
    pub fn cvar_offset(&self) -> f64 {
        self.grid.width as f64
    }

    /// Minimum distance between a base landmark and the grid border.
    pub(crate) fn border_margin(&self, shift_range: usize) -> f64 {
        3.0 * self.heatmap_sigma + shift_range as f64
    }
}

/// Test helper: a split of `count` sequences with 5-8 frames.
#[cfg(test)]
pub(crate) fn split(stream: u64, count: usize, shift_range: usize) -> SplitSpec {
    SplitSpec {
        stream,
        count,
        shift_range,
        frames: 5..=8,
    }
}
