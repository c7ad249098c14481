//! The single JSON run configuration. Every command-line flag overrides its
//! counterpart here, and the effective configuration is echoed into the
//! output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use quantest::{Arch, AttackConfig, NoiseConfig, TaskSpec, TrainConfig};

use crate::UserError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives the train/test split, campaign streams and shot streams.
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    pub threads: Option<usize>,
    /// Directory holding the IDX files.
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub task: TaskSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub campaign: CampaignConfig,
    pub attack: AttackConfig,
    pub noise: NoiseConfig,
    pub sampling: SamplingConfig,
    pub retrain: RetrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            data_dir: PathBuf::from("data/mnist"),
            output_dir: PathBuf::from("runs/latest"),
            task: TaskSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            campaign: CampaignConfig::default(),
            attack: AttackConfig::default(),
            noise: NoiseConfig::default(),
            sampling: SamplingConfig::default(),
            retrain: RetrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Architecture default when absent.
    pub depth: Option<usize>,
    /// Parameter initialization seed.
    pub seed: u64,
    /// Trained model to load (attack, noise, retrain, sampling).
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Qcl,
            depth: None,
            seed: 0,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// Which half of the task supplies seeds.
    pub split: Split,
    /// First `n` samples of the split; all when absent.
    pub n_seeds: Option<usize>,
    /// Write original and final amplitudes into the JSONL records.
    pub dump_states: bool,
    /// Noise strengths to sweep; `noise.sigma` alone when empty.
    pub sigmas: Vec<f64>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            n_seeds: Some(100),
            dump_states: false,
            sigmas: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub shots_grid: Vec<u64>,
    pub repeats: usize,
    /// JSONL records whose unflipped final states serve as boundary seeds.
    pub seeds: Option<PathBuf>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            shots_grid: vec![10, 100, 1_000, 10_000, 100_000],
            repeats: 10,
            seeds: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrainConfig {
    /// JSONL record files whose accepted examples augment the training set.
    pub adversarial: Vec<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UserError(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UserError(format!("{}: {e}", path.display())).into())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let user = |e: quantest::Error| UserError(e.to_string());
        self.task.validate().map_err(user)?;
        self.train.validate().map_err(user)?;
        self.attack.validate().map_err(user)?;
        self.noise.validate().map_err(user)?;
        if self.threads == Some(0) {
            return Err(UserError("threads must be at least 1".into()).into());
        }
        if self.model.depth == Some(0) {
            return Err(UserError("model depth must be at least 1".into()).into());
        }
        if self.campaign.n_seeds == Some(0) {
            return Err(UserError("n_seeds must be at least 1".into()).into());
        }
        if let Some(s) = self.campaign.sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(UserError(format!("sigma out of range: {s}")).into());
        }
        if self.sampling.repeats == 0 {
            return Err(UserError("sampling needs repeats >= 1".into()).into());
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.model.depth.unwrap_or_else(|| self.model.arch.default_depth())
    }
}
