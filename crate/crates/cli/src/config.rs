//! Run configuration: JSON config file with flat keys, overridden by CLI
//! flags. Secrets (LLM key and URL) come from the environment only.

use crate::CliError;
use formagen::form_plan::PlanConstraints;
use formagen::sampler::SamplerParams;
use formagen::synth::{BackendDescriptor, BackendKind};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DEFAULT_TOY_FRAME_RATE: f64 = 10.0;
pub const DEFAULT_REMOTE_FRAME_RATE: f64 = 50.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub total_length_s: f64,
    /// Token steps per second; defaults to 10 for the toy backend and 50
    /// for a remote one.
    pub frame_rate: Option<f64>,
    pub transition_s: f64,
    pub audio_prompt_s: f64,
    pub audio_fade_s: f64,
    pub temperature: f64,
    pub cfg_gamma: f64,
    pub seed: u64,
    pub backend: String,
    pub endpoint: Option<String>,
    pub timeout_s: f64,
    pub sample_rate: u32,
    pub vocabulary_size: usize,
    pub pieces: usize,
    pub min_part_s: f64,
    pub max_part_s: Option<f64>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            total_length_s: 150.0,
            frame_rate: None,
            transition_s: 5.0,
            audio_prompt_s: 15.0,
            audio_fade_s: 10.0,
            temperature: 1.0,
            cfg_gamma: 3.0,
            seed: 0,
            backend: "toy".to_string(),
            endpoint: None,
            timeout_s: 60.0,
            sample_rate: 22050,
            vocabulary_size: 64,
            pieces: 10,
            min_part_s: 1.0,
            max_part_s: None,
            out_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {}", path.display(), e)))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("bad config {}: {}", path.display(), e)))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, value) in [
            ("total_length_s", self.total_length_s),
            ("transition_s", self.transition_s),
            ("audio_prompt_s", self.audio_prompt_s),
            ("audio_fade_s", self.audio_fade_s),
            ("temperature", self.temperature),
            ("timeout_s", self.timeout_s),
        ] {
            if !(value > 0.0) {
                return Err(CliError::Input(format!(
                    "{} must be positive, got {}",
                    name, value
                )));
            }
        }
        self.backend_kind()?;
        Ok(())
    }

    pub fn backend_kind(&self) -> Result<BackendKind, CliError> {
        match self.backend.as_str() {
            "toy" => Ok(BackendKind::Toy),
            "remote" => Ok(BackendKind::Remote),
            other => Err(CliError::Input(format!(
                "unknown backend {:?} (expected toy or remote)",
                other
            ))),
        }
    }

    pub fn backend_descriptor(&self) -> Result<BackendDescriptor, CliError> {
        match self.backend_kind()? {
            BackendKind::Toy => Ok(BackendDescriptor::toy()),
            BackendKind::Remote => {
                let endpoint = self.endpoint.clone().ok_or_else(|| {
                    CliError::Input("remote backend requires --endpoint".to_string())
                })?;
                Ok(BackendDescriptor::remote(endpoint, self.timeout_s))
            }
        }
    }

    pub fn effective_frame_rate(&self) -> f64 {
        self.frame_rate.unwrap_or(match self.backend.as_str() {
            "remote" => DEFAULT_REMOTE_FRAME_RATE,
            _ => DEFAULT_TOY_FRAME_RATE,
        })
    }

    pub fn plan_constraints(&self) -> PlanConstraints {
        PlanConstraints {
            total_length_s: self.total_length_s,
            min_part_s: self.min_part_s,
            max_part_s: self.max_part_s.unwrap_or(self.total_length_s),
        }
    }

    pub fn sampler_params(&self) -> SamplerParams {
        SamplerParams {
            temperature: self.temperature,
            cfg_gamma: self.cfg_gamma,
            rng_seed: self.seed,
            vocabulary_size: self.vocabulary_size,
        }
    }
}
