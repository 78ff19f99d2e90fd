//! Musical-structure evaluation: self-similarity matrices over audio
//! features, similarity-network fusion across feature views, 5×5
//! downsampling, corpus statistics, and a Fréchet distance between the
//! Gaussian summaries of two corpora.

mod export;
mod features;
mod ssm;
mod stats;

pub use export::{matrix_to_csv, matrix_to_pgm, write_matrix_csv, write_matrix_pgm};
pub use features::{extract_features, resample_frames, FeatureKind, FeatureMatrix};
pub use ssm::{
    compute_ssm, downsample_matrix, fuse_ssms, normalize_unit_diagonal, FusedSSM, SSMatrix,
};
pub use stats::{
    corpus_stats, frechet_distance, gaussian_summary, upper_triangle_vec, GaussianSummary,
    SSMStats,
};

use crate::synth::AudioBuffer;
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("audio too short: need at least {needed} samples, got {got}")]
    AudioTooShort { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("covariance not positive semidefinite: min eigenvalue {0}")]
    NotPsd(f64),
}

/// Knobs for the per-track evaluation pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    /// Frame count every track is resampled to before the SSM, so all
    /// tracks produce same-size matrices.
    pub resample_frames: usize,
    /// Nearest-neighbor count of the fusion's sparse kernels.
    pub snf_neighbors: usize,
    pub snf_iterations: usize,
    /// Downsampling grid size.
    pub grid: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            resample_frames: 200,
            snf_neighbors: 20,
            snf_iterations: 20,
            grid: 5,
        }
    }
}

/// Per-track evaluation products.
#[derive(Debug, Clone)]
pub struct TrackEval {
    /// Fused similarity matrix, rescaled to unit diagonal for comparison
    /// and export.
    pub fused: SSMatrix,
    /// `grid × grid` mean-pooled form of the fused matrix.
    pub grid: Array2<f64>,
}

/// Full evaluation of one audio track: chroma and MFCC views, fixed-size
/// resampling, per-view SSMs, fusion, unit-diagonal rescaling, and grid
/// downsampling.
pub fn evaluate_track(audio: &AudioBuffer, params: &EvalParams) -> Result<TrackEval, EvalError> {
    let chroma = extract_features(audio, FeatureKind::Chroma)?;
    let mfcc = extract_features(audio, FeatureKind::Mfcc)?;

    let chroma = resample_frames(&chroma, params.resample_frames)?;
    let mfcc = resample_frames(&mfcc, params.resample_frames)?;

    let views = [compute_ssm(&chroma), compute_ssm(&mfcc)];
    let fused = fuse_ssms(&views, params.snf_neighbors, params.snf_iterations)?;
    let fused = normalize_unit_diagonal(&fused);
    let grid = fused.downsample(params.grid)?;

    Ok(TrackEval { fused, grid })
}
