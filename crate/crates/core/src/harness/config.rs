use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::PhantomSetSpec;
use crate::error::{PixcueError, Result};
use crate::forward_model::{ContrastProfile, MaskKind, MaskSpec};
use crate::io::read_file;
use crate::net::{ArchSpec, TrainingConfig};
use crate::rng::derive_seed;
use crate::uncertainty::McConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Exp5,
    Exp6,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [Self::Exp1, Self::Exp2, Self::Exp3, Self::Exp4, Self::Exp5, Self::Exp6];

    pub fn label(self) -> &'static str {
        match self {
            Self::Exp1 => "exp1",
            Self::Exp2 => "exp2",
            Self::Exp3 => "exp3",
            Self::Exp4 => "exp4",
            Self::Exp5 => "exp5",
            Self::Exp6 => "exp6",
        }
    }
}

impl std::str::FromStr for ExperimentId {
    type Err = PixcueError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.label() == s)
            .ok_or_else(|| PixcueError::Config(format!("unknown experiment id {s:?} (expected exp1..exp6)")))
    }
}

/// Everything a harness command needs; serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentId>,
    /// Training phantoms.
    pub phantoms: PhantomSetSpec,
    /// Held-out phantoms used for model selection and every experiment.
    pub validation: PhantomSetSpec,
    /// Mask used for training and as the baseline test condition.
    pub mask: MaskSpec,
    /// Harder mask of the acceleration experiment.
    #[serde(default = "stress_mask")]
    pub stress_mask: MaskSpec,
    #[serde(default = "noise_sigmas")]
    pub noise_sigmas: Vec<f64>,
    /// Used when no checkpoint is given.
    #[serde(default)]
    pub training: Option<TrainingConfig>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default = "ten")]
    pub anomaly_cases: usize,
    #[serde(default = "hundred")]
    pub joint_pixels: usize,
    #[serde(default = "fg_threshold")]
    pub foreground_threshold: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn stress_mask() -> MaskSpec {
    MaskSpec { kind: MaskKind::Random, accel: 6.0, center_fraction: 0.06, seed: 0 }
}

fn noise_sigmas() -> Vec<f64> {
    vec![0.0, 0.005, 0.01, 0.02]
}

fn ten() -> usize {
    10
}

fn hundred() -> usize {
    100
}

fn fg_threshold() -> f64 {
    0.05
}

/// Architecture and optimizer settings of the standard desk run.
pub fn standard_training(seed: u64) -> TrainingConfig {
    TrainingConfig {
        arch: ArchSpec {
            iterations: 4,
            hidden_channels: 16,
            n_bits: 8,
            head_hidden: 0,
            logit_scale: 10.0,
            prior_width: 24.0,
        },
        learning_rate: 3e-3,
        epochs: 30,
        batch_size: 1,
        seed,
        dropout_fraction: 0.2,
        train_with_dropout: false,
        ..TrainingConfig::default()
    }
}

impl ExperimentConfig {
    /// Desk-scale setup: 64x64 phantoms, 40 for training and 10 held out,
    /// 4x random mask with 8% center, K = 4, D = 256, 30 epochs.
    pub fn standard(seed: u64) -> Self {
        let set = |count, index| PhantomSetSpec {
            size: 64,
            count,
            profiles: ContrastProfile::ALL.to_vec(),
            seed: derive_seed(seed, index),
            jitter: 0.5,
            blobs: 3,
            ellipses: None,
        };
        let mut cfg = Self {
            experiment: None,
            phantoms: set(40, 1),
            validation: set(10, 2),
            mask: MaskSpec { kind: MaskKind::Random, accel: 4.0, center_fraction: 0.08, seed: 0 },
            stress_mask: stress_mask(),
            noise_sigmas: noise_sigmas(),
            training: Some(standard_training(0)),
            checkpoint: None,
            mc: McConfig::default(),
            anomaly_cases: 10,
            joint_pixels: 100,
            foreground_threshold: 0.05,
            seed,
            out_dir: None,
        };
        cfg.reseed(seed);
        cfg
    }

    /// Re-derives every seed in the configuration from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.phantoms.seed = derive_seed(seed, 1);
        self.validation.seed = derive_seed(seed, 2);
        self.mask.seed = derive_seed(seed, 3);
        self.stress_mask.seed = derive_seed(seed, 4);
        if let Some(t) = &mut self.training {
            t.seed = derive_seed(seed, 5);
        }
        self.mc.seed = derive_seed(seed, 6);
    }

    /// Recipe for the masks of held-out examples, seeded apart from the
    /// training masks.
    pub fn validation_mask(&self, spec: &MaskSpec) -> MaskSpec {
        MaskSpec { seed: derive_seed(spec.seed, u64::MAX), ..spec.clone() }
    }

    pub fn noise_seed(&self, case: usize) -> u64 {
        derive_seed(derive_seed(self.seed, 7), case as u64)
    }

    pub fn anomaly_seed(&self) -> u64 {
        derive_seed(self.seed, 8)
    }

    pub fn joint_seed(&self) -> u64 {
        derive_seed(self.seed, 9)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let cfg: Self = serde_json::from_slice(&bytes)
            .map_err(|e| PixcueError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.validation.is_empty() {
            return Err(PixcueError::Config("validation set is empty".into()));
        }
        if self.phantoms.size != self.validation.size {
            return Err(PixcueError::Config("training and validation phantoms differ in size".into()));
        }
        if self.noise_sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(PixcueError::Config("noise sigmas must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.foreground_threshold) {
            return Err(PixcueError::Config("foreground threshold outside [0, 1)".into()));
        }
        if let Some(t) = &self.training {
            t.validate()?;
        }
        if let Some(p) = &self.checkpoint {
            if !p.exists() {
                return Err(PixcueError::Config(format!("checkpoint {} does not exist", p.display())));
            }
        }
        if self.training.is_none() && self.checkpoint.is_none() {
            return Err(PixcueError::Config("config needs a training section or a checkpoint path".into()));
        }
        self.mc.validate()
    }
}
