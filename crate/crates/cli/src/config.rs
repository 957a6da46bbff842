//! Run configuration: one flat JSON object whose every field has a default.
//! Command-line flags are applied on top, then `S2M_SEED` if set.

use std::path::{Path, PathBuf};

use insole_motion::conditioning::ConditioningMode;
use insole_motion::denoiser::DenoiserConfig;
use insole_motion::diffusion::{DiffusionSchedule, PredictionMode, SamplerConfig};
use insole_motion::displacement::{DispConfig, DispInput};
use insole_nn::AdamConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "S2M_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub window: usize,
    pub overlap: usize,
    /// Start-to-start distance of training windows.
    pub window_stride: usize,
    pub d_model: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub pose_epochs: usize,
    pub disp_epochs: usize,
    /// Optimizer steps cap; `None` runs the full epoch budget.
    pub max_steps: Option<usize>,
    pub lambda: f64,
    pub disp_input: DispInput,
    pub conditioning: ConditioningMode,
    pub prediction: PredictionMode,
    pub rotation_augmentation: bool,
    pub subtract_gravity: bool,
    pub train_fraction: f64,
    pub checkpoint_every: usize,
    pub threads: usize,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Conditioning variants run by `eval --grid`.
    pub ablation_grid: Vec<ConditioningMode>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window: 100,
            overlap: 25,
            window_stride: 25,
            d_model: 256,
            ff_dim: 512,
            layers: 2,
            heads: 8,
            diffusion_steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            dropout: 0.1,
            batch_size: 256,
            learning_rate: 1e-3,
            pose_epochs: 500,
            disp_epochs: 200,
            max_steps: None,
            lambda: 0.001,
            disp_input: DispInput::ImuOnly,
            conditioning: ConditioningMode::Full,
            prediction: PredictionMode::PredictClean,
            rotation_augmentation: true,
            subtract_gravity: false,
            train_fraction: 0.8,
            checkpoint_every: 0,
            threads: 1,
            train_data: None,
            test_data: None,
            ablation_grid: vec![
                ConditioningMode::Full,
                ConditioningMode::PressureOnly,
                ConditioningMode::ImuOnly,
                ConditioningMode::NoInsoleMha,
            ],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Reads `path` if given, else the defaults.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Replaces the seed with `S2M_SEED` when that variable is set.
    pub fn apply_env(&mut self) -> CliResult<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.window < 2 {
            return bad(format!("window {} is too short", self.window));
        }
        if self.overlap >= self.window {
            return bad(format!("overlap {} must be below the window {}", self.overlap, self.window));
        }
        if self.window_stride == 0 || self.batch_size == 0 || self.threads == 0 {
            return bad("window_stride, batch_size and threads must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        self.schedule()?;
        self.denoiser_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.disp_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.adam().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            d: self.d_model,
            ff_dim: self.ff_dim,
            layers: self.layers,
            heads_self: self.heads,
            steps: self.diffusion_steps,
            window: self.window,
            dropout: self.dropout,
            conditioning: self.conditioning,
        }
    }

    pub fn disp_config(&self) -> DispConfig {
        DispConfig {
            d: self.d_model,
            ff_dim: self.ff_dim,
            layers: self.layers,
            heads: self.heads,
            lambda: self.lambda,
            input: self.disp_input,
            window: self.window,
            dropout: self.dropout,
        }
    }

    pub fn schedule(&self) -> CliResult<DiffusionSchedule> {
        DiffusionSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            mode: self.prediction,
            overlap: self.overlap,
            seed: self.seed,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().to_string().as_bytes()))
    }
}
