//! Library surface of the `formagen` command-line tool, so the pipeline
//! commands can be driven in-process by tests.

mod commands;
mod config;

pub use commands::{
    cmd_compare, cmd_evaluate, cmd_generate, cmd_plan, CompareOutcome, EvaluateOutcome,
    GenerateOutcome, PlanOutcome,
};
pub use config::RunConfig;

use thiserror::Error;

/// Exit-code contract: 0 success, 2 input/validation error, 3
/// backend/transport error.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    fn io_input(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<formagen::form_plan::PlanParseError> for CliError {
    fn from(e: formagen::form_plan::PlanParseError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<formagen::form_plan::ScheduleError> for CliError {
    fn from(e: formagen::form_plan::ScheduleError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<formagen::sampler::SamplerError> for CliError {
    fn from(e: formagen::sampler::SamplerError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<formagen::structure_eval::EvalError> for CliError {
    fn from(e: formagen::structure_eval::EvalError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<formagen::planner::PlannerError> for CliError {
    fn from(e: formagen::planner::PlannerError) -> Self {
        match e {
            formagen::planner::PlannerError::Transport { .. } => CliError::Backend(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<formagen::synth::SynthError> for CliError {
    fn from(e: formagen::synth::SynthError) -> Self {
        use formagen::synth::SynthError::*;
        match e {
            BackendStatus(_) | NonAudioResponse(_) | Timeout | Transport(_) => {
                CliError::Backend(e.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}
