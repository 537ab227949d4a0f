//! Iterative UARPO training: per iteration the reference policy is
//! refreshed; per step the old policy is snapshotted, groups are sampled,
//! scored and turned into advantages, and the live policy takes `μ` Adam
//! steps on the surrogate objective.

mod metrics;
mod trainer;
mod warm;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::chart::ChartError;
use crate::policy::{ModelConfig, PolicyError};
use crate::reward::{RewardConfig, RewardError};
use crate::uarpo::{Mode, UarpoError, UarpoHyper};

pub use metrics::{MetricsRow, METRICS_HEADER, TIMING_HEADER};
pub use trainer::{run_training, GroupTrace, StepOutcome, TrainSummary, Trainer};
pub use warm::{warm_start, warm_start_sequence, WarmStartConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] ChartError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Uarpo(#[from] UarpoError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite loss at global step {step}; last good policy kept")]
    NonFiniteLoss { step: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TrainError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Outer iterations I; the reference policy is refreshed at each start.
    pub iterations: usize,
    /// Steps per iteration M; 0 picks enough steps to cover the training
    /// split twice.
    pub steps_per_iteration: usize,
    /// Optimisation epochs μ per sampled batch.
    pub inner_epochs: usize,
    /// Questions per step |D_b|.
    pub batch_size: usize,
    pub temperature: f64,
    pub max_len: usize,
    pub learning_rate: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub mode: Mode,
    pub reset_stacks_each_iteration: bool,
    pub dataset: PathBuf,
    pub output: PathBuf,
    /// Start from this checkpoint instead of a fresh, warm-started model.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            steps_per_iteration: 0,
            inner_epochs: 1,
            batch_size: 4,
            temperature: 1.0,
            max_len: 64,
            learning_rate: 3e-4,
            grad_clip: 1.0,
            seed: 0,
            mode: Mode::Uarpo,
            reset_stacks_each_iteration: false,
            dataset: PathBuf::from("data"),
            output: PathBuf::from("runs/default"),
            init_checkpoint: None,
        }
    }
}

/// Everything a training run needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSetup {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub reward: RewardConfig,
    pub uarpo: UarpoHyper,
    pub warm_start: WarmStartConfig,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<(), TrainError> {
        let t = &self.train;
        let bad = |m: String| Err(TrainError::Config(m));
        if t.iterations == 0 || t.inner_epochs == 0 || t.batch_size == 0 {
            return bad("iterations, inner_epochs and batch_size must be at least 1".into());
        }
        if !(t.temperature >= 0.0) || !t.temperature.is_finite() {
            return bad(format!(
                "temperature {} must be finite and >= 0",
                t.temperature
            ));
        }
        if t.max_len == 0 || t.max_len > self.model.max_len {
            return bad(format!(
                "max_len {} must be in 1..={} (model.max_len)",
                t.max_len, self.model.max_len
            ));
        }
        if !(t.learning_rate > 0.0) || !t.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate {} must be positive",
                t.learning_rate
            ));
        }
        if !(t.grad_clip >= 0.0) {
            return bad(format!("grad_clip {} must be >= 0", t.grad_clip));
        }
        self.model.validate()?;
        self.reward.validate()?;
        self.uarpo.validate()?;
        self.warm_start.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
