//! Training configuration, the ablation rows, data preparation and the
//! optimization loop.

pub mod prepare;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::FieldConfig;
use crate::lidar::EncoderKind;
use crate::nn::OptimizerConfig;
use crate::supervision::{CurriculumConfig, LossWeights};
use crate::synthesis::augment::DEFAULT_SIGMA;
use crate::synthesis::hpr::DEFAULT_GAMMA;

pub use prepare::{accumulated_depth_maps, PreparedData, RayBatch, RayPool, TrainView, ViewPixel};
pub use trainer::{EvalReport, RenderedView, StepReport, TrainState, Trainer, ViewMetrics};

/// How per-view depth targets are built from Lidar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    /// Sweeps accumulated around each view.
    pub window: usize,
    /// Hidden point removal before rasterization.
    pub hpr: bool,
    pub hpr_gamma: f64,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            window: 10,
            hpr: false,
            hpr_gamma: DEFAULT_GAMMA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub count: usize,
    /// Per-axis std of the camera-center perturbation (m).
    pub sigma: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            count: 160,
            sigma: DEFAULT_SIGMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: u64,
    pub rays_per_batch: usize,
    pub loss: LossWeights,
    pub curriculum: CurriculumConfig,
    pub field: FieldConfig,
    pub optimizer: OptimizerConfig,
    pub depth: DepthConfig,
    pub augmentation: AugmentationConfig,
    pub seed: u64,
    /// Evaluate every this many iterations; 0 disables.
    pub eval_every: u64,
    /// Log every this many iterations; 0 disables.
    pub log_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            rays_per_batch: 4096,
            loss: LossWeights::default(),
            curriculum: CurriculumConfig::default(),
            field: FieldConfig::default(),
            optimizer: OptimizerConfig::default(),
            depth: DepthConfig::default(),
            augmentation: AugmentationConfig::default(),
            seed: 0,
            eval_every: 0,
            log_every: 100,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch == 0 {
            return invalid("rays per batch must be at least 1");
        }
        if self.depth.window == 0 {
            return invalid("depth window must be at least 1");
        }
        if !(self.depth.hpr_gamma > 0.0) || !self.depth.hpr_gamma.is_finite() {
            return invalid("HPR gamma must be positive");
        }
        if !(self.augmentation.sigma >= 0.0) || !self.augmentation.sigma.is_finite() {
            return invalid("augmentation sigma must be non-negative");
        }
        self.loss.validate()?;
        self.curriculum.validate()?;
        self.field.validate()
    }

    pub fn depth_supervised(&self) -> bool {
        self.loss.depth > 0.0
    }

    pub fn augmented(&self) -> bool {
        self.loss.aug > 0.0 && self.augmentation.count > 0
    }
}

/// The ablation rows: each adds one contribution to the row before it,
/// except that the first three depth rows differ only in how targets are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Baseline,
    /// Single-sweep depth targets, every sample kept.
    DepthWindow1,
    /// Ten accumulated sweeps, every sample kept.
    DepthWindow10,
    /// Ten sweeps with hidden point removal, every sample kept.
    Hpr,
    /// Ten sweeps with the curriculum selector.
    Robust,
    /// Robust depth plus the sparse-conv Lidar encoding.
    LidarEncoding,
    /// Everything, including augmented views.
    Augmentation,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::Baseline,
        Ablation::DepthWindow1,
        Ablation::DepthWindow10,
        Ablation::Hpr,
        Ablation::Robust,
        Ablation::LidarEncoding,
        Ablation::Augmentation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline",
            Ablation::DepthWindow1 => "depth_w1",
            Ablation::DepthWindow10 => "depth_w10",
            Ablation::Hpr => "hpr",
            Ablation::Robust => "robust",
            Ablation::LidarEncoding => "lidar_encoding",
            Ablation::Augmentation => "augmentation",
        }
    }

    /// Sets the flags of this row on `cfg`; other settings are kept.
    pub fn apply(self, cfg: &mut TrainingConfig) {
        let d = LossWeights::default();
        let depth = self != Ablation::Baseline;
        cfg.loss.depth = if !depth {
            0.0
        } else if cfg.loss.depth > 0.0 {
            cfg.loss.depth
        } else {
            d.depth
        };
        cfg.depth.window = if self == Ablation::DepthWindow1 { 1 } else { 10 };
        cfg.depth.hpr = self == Ablation::Hpr;
        cfg.loss.robust = matches!(self, Ablation::Robust | Ablation::LidarEncoding | Ablation::Augmentation);
        cfg.field.encoder.kind = if matches!(self, Ablation::LidarEncoding | Ablation::Augmentation) {
            EncoderKind::SparseConv
        } else {
            EncoderKind::None
        };
        if self == Ablation::Augmentation {
            if cfg.loss.aug <= 0.0 {
                cfg.loss.aug = d.aug;
            }
            if cfg.augmentation.count == 0 {
                cfg.augmentation.count = AugmentationConfig::default().count;
            }
        } else {
            cfg.loss.aug = 0.0;
            cfg.augmentation.count = 0;
        }
    }

    /// Loss terms a training step of this row reports.
    pub fn expected_terms(self) -> Vec<&'static str> {
        let mut t = vec!["rgb", "distortion", "interlevel"];
        if self != Ablation::Baseline {
            t.extend(["depth", "sight"]);
        }
        if self == Ablation::Augmentation {
            t.extend(["rgb_aug", "depth_aug", "sight_aug"]);
        }
        t
    }
}
