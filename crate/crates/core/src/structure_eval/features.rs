//! Chroma and MFCC features over an STFT, plus fixed-size frame resampling.

use super::EvalError;
use crate::synth::AudioBuffer;
use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

pub const STFT_WINDOW: usize = 2048;
pub const STFT_HOP: usize = 512;
const CHROMA_DIM: usize = 12;
const MFCC_DIM: usize = 20;
const MEL_BANDS: usize = 64;
// Spectrum below this frequency is ignored by the chroma fold.
const CHROMA_MIN_HZ: f64 = 27.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Chroma,
    Mfcc,
}

/// Frame-by-feature matrix: chroma is 12-dimensional, MFCC keeps 20
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    /// `n_frames × dim`.
    pub frames: Array2<f64>,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }
}

// Power spectra (bins 0..=window/2) of Hann-windowed frames.
fn stft_power(samples: &[f32]) -> Vec<Vec<f64>> {
    let n_frames = 1 + (samples.len() - STFT_WINDOW) / STFT_HOP;
    let window: Vec<f64> = (0..STFT_WINDOW)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / STFT_WINDOW as f64).cos())
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(STFT_WINDOW);
    let mut frames = Vec::with_capacity(n_frames);
    let mut buffer = vec![Complex::new(0.0, 0.0); STFT_WINDOW];

    for f in 0..n_frames {
        let start = f * STFT_HOP;
        for (n, slot) in buffer.iter_mut().enumerate() {
            *slot = Complex::new(samples[start + n] as f64 * window[n], 0.0);
        }
        fft.process(&mut buffer);
        frames.push(
            buffer[..=STFT_WINDOW / 2]
                .iter()
                .map(|c| c.norm_sqr())
                .collect(),
        );
    }
    frames
}

fn bin_frequency(bin: usize, sample_rate: u32) -> f64 {
    bin as f64 * sample_rate as f64 / STFT_WINDOW as f64
}

/// Pitch class of a frequency with A440 as class 0.
pub fn pitch_class(freq_hz: f64) -> usize {
    let semitones = (12.0 * (freq_hz / 440.0).log2()).round() as i64;
    semitones.rem_euclid(12) as usize
}

fn chroma_frames(power: &[Vec<f64>], sample_rate: u32) -> Array2<f64> {
    let mut out = Array2::zeros((power.len(), CHROMA_DIM));
    for (f, spectrum) in power.iter().enumerate() {
        for (bin, &energy) in spectrum.iter().enumerate().skip(1) {
            let freq = bin_frequency(bin, sample_rate);
            if freq < CHROMA_MIN_HZ {
                continue;
            }
            out[[f, pitch_class(freq)]] += energy;
        }
        let max = out.row(f).iter().fold(0.0f64, |a, &b| a.max(b));
        if max > 0.0 {
            for c in 0..CHROMA_DIM {
                out[[f, c]] /= max;
            }
        }
    }
    out
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn mfcc_frames(power: &[Vec<f64>], sample_rate: u32) -> Array2<f64> {
    let n_bins = STFT_WINDOW / 2 + 1;
    let mel_max = hz_to_mel(sample_rate as f64 / 2.0);
    let points: Vec<f64> = (0..MEL_BANDS + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (MEL_BANDS + 1) as f64))
        .collect();

    // Triangular filters over spectrum bins.
    let mut filters = vec![vec![0.0f64; n_bins]; MEL_BANDS];
    for (m, filter) in filters.iter_mut().enumerate() {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        for (bin, weight) in filter.iter_mut().enumerate() {
            let f = bin_frequency(bin, sample_rate);
            if f > lo && f < center {
                *weight = (f - lo) / (center - lo);
            } else if f >= center && f < hi {
                *weight = (hi - f) / (hi - center);
            }
        }
    }

    let mut out = Array2::zeros((power.len(), MFCC_DIM));
    let mut log_mel = vec![0.0f64; MEL_BANDS];
    for (f, spectrum) in power.iter().enumerate() {
        for (m, filter) in filters.iter().enumerate() {
            let energy: f64 = filter
                .iter()
                .zip(spectrum)
                .map(|(&w, &e)| w * e)
                .sum();
            log_mel[m] = (energy + 1e-10).ln();
        }
        // DCT-II, dropping coefficient 0 and keeping 20 from index 1.
        for i in 1..=MFCC_DIM {
            let mut c = 0.0;
            for (m, &e) in log_mel.iter().enumerate() {
                c += e
                    * (std::f64::consts::PI * i as f64 * (m as f64 + 0.5) / MEL_BANDS as f64)
                        .cos();
            }
            out[[f, i - 1]] = c;
        }
    }
    out
}

/// Extracts a feature matrix from mono audio using an STFT with window 2048
/// and hop 512. Chroma folds spectrum energy into 12 pitch classes (A440
/// reference) with per-frame max normalization; MFCC takes 20 coefficients
/// (dropping the 0th) of a DCT-II over a 64-band log-mel filterbank.
pub fn extract_features(
    audio: &AudioBuffer,
    kind: FeatureKind,
) -> Result<FeatureMatrix, EvalError> {
    let needed = STFT_WINDOW + STFT_HOP;
    if audio.samples.len() < needed {
        return Err(EvalError::AudioTooShort {
            needed,
            got: audio.samples.len(),
        });
    }
    let power = stft_power(&audio.samples);
    let frames = match kind {
        FeatureKind::Chroma => chroma_frames(&power, audio.sample_rate),
        FeatureKind::Mfcc => mfcc_frames(&power, audio.sample_rate),
    };
    Ok(FeatureMatrix { kind, frames })
}

/// Mean-aggregates frames into `n_target` contiguous bins with boundaries
/// at `round(i × n_frames / n_target)`.
pub fn resample_frames(f: &FeatureMatrix, n_target: usize) -> Result<FeatureMatrix, EvalError> {
    if n_target < 2 {
        return Err(EvalError::BadInput(format!(
            "resample target must be ≥ 2, got {}",
            n_target
        )));
    }
    let n = f.n_frames();
    if n < 2 {
        return Err(EvalError::BadInput(
            "feature matrix needs at least 2 frames".to_string(),
        ));
    }
    let dim = f.frames.ncols();
    let boundary = |i: usize| ((i as f64 * n as f64 / n_target as f64).round() as usize).min(n);

    let mut out = Array2::zeros((n_target, dim));
    for i in 0..n_target {
        let (start, end) = (boundary(i), boundary(i + 1));
        if start < end {
            for row in start..end {
                for c in 0..dim {
                    out[[i, c]] += f.frames[[row, c]];
                }
            }
            let len = (end - start) as f64;
            for c in 0..dim {
                out[[i, c]] /= len;
            }
        } else {
            // Degenerate bin when upsampling: replicate the nearest frame.
            let row = start.min(n - 1);
            for c in 0..dim {
                out[[i, c]] = f.frames[[row, c]];
            }
        }
    }
    Ok(FeatureMatrix {
        kind: f.kind,
        frames: out,
    })
}
