use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multinet::{ArchConfig, Mode};

pub const CONFIG_VERSION: u32 = 1;

fn default_iterations() -> usize {
    2
}

fn default_regions() -> usize {
    64
}

fn one() -> f64 {
    1.0
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

/// One training run, read from TOML. Every key except `version` has a
/// default; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub mode: Mode,
    /// Recursion depth `T`.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Stop gradients between iterations.
    #[serde(default)]
    pub truncate: bool,
    #[serde(default = "Schedule::phase1_lr")]
    pub phase1_lr: f64,
    #[serde(default = "Schedule::phase1_epochs")]
    pub phase1_epochs: usize,
    #[serde(default = "Schedule::phase2_lr")]
    pub phase2_lr: f64,
    #[serde(default = "Schedule::phase2_epochs")]
    pub phase2_epochs: usize,
    #[serde(default = "one")]
    pub cls_weight: f64,
    #[serde(default = "one")]
    pub det_weight: f64,
    #[serde(default = "one")]
    pub part_weight: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Proposals per scene.
    #[serde(default = "default_regions")]
    pub n_regions: usize,
    #[serde(default)]
    pub train_dataset: Option<PathBuf>,
    #[serde(default)]
    pub val_dataset: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub arch: ArchConfig,
}

struct Schedule;

impl Schedule {
    fn phase1_lr() -> f64 {
        1e-3
    }
    fn phase1_epochs() -> usize {
        12
    }
    fn phase2_lr() -> f64 {
        1e-4
    }
    fn phase2_epochs() -> usize {
        12
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            mode: Mode::default(),
            iterations: default_iterations(),
            truncate: false,
            phase1_lr: Schedule::phase1_lr(),
            phase1_epochs: Schedule::phase1_epochs(),
            phase2_lr: Schedule::phase2_lr(),
            phase2_epochs: Schedule::phase2_epochs(),
            cls_weight: 1.0,
            det_weight: 1.0,
            part_weight: 1.0,
            seeds: default_seeds(),
            n_regions: default_regions(),
            train_dataset: None,
            val_dataset: None,
            out_dir: None,
            arch: ArchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable")
    }

    pub fn total_epochs(&self) -> usize {
        self.phase1_epochs + self.phase2_epochs
    }

    /// Base learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.phase1_epochs {
            self.phase1_lr
        } else {
            self.phase2_lr
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::VersionMismatch {
                what: "run config",
                found: self.version,
                expected: CONFIG_VERSION,
            });
        }
        for (name, lr) in [("phase1_lr", self.phase1_lr), ("phase2_lr", self.phase2_lr)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be a finite rate ≥ 0, got {lr}"
                )));
            }
        }
        if self.phase1_epochs == 0 || self.phase2_epochs == 0 {
            return Err(Error::Config(
                "both schedule phases need at least one epoch".into(),
            ));
        }
        for (name, w) in [
            ("cls_weight", self.cls_weight),
            ("det_weight", self.det_weight),
            ("part_weight", self.part_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and ≥ 0, got {w}"
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` is empty".into()));
        }
        if self.n_regions == 0 {
            return Err(Error::Config("n_regions must be ≥ 1".into()));
        }
        self.arch.validate()
    }
}
