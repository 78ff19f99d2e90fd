//! Audio rendering and I/O: a toy additive synthesizer for token sequences,
//! 16-bit PCM mono WAV read/write, and an HTTP client for driving a remote
//! text-to-music server with the same schedule.

use crate::sampler::TokenSequence;
use base64::Engine;
use serde::Serialize;
use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("invalid audio: {0}")]
    BadAudio(String),
    #[error("not a supported WAV file: {0}")]
    WavFormat(String),
    #[error("remote backend requires an endpoint URL")]
    MissingEndpoint,
    #[error("backend returned HTTP status {0}")]
    BackendStatus(u16),
    #[error("backend response is not audio: {0}")]
    NonAudioResponse(String),
    #[error("backend request timed out")]
    Timeout,
    #[error("backend transport error: {0}")]
    Transport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl AudioBuffer {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Which generator renders audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Toy,
    Remote,
}

/// Selects and configures the audio backend.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub timeout_s: f64,
}

impl BackendDescriptor {
    pub fn toy() -> Self {
        BackendDescriptor {
            kind: BackendKind::Toy,
            endpoint: None,
            timeout_s: 60.0,
        }
    }

    pub fn remote(endpoint: impl Into<String>, timeout_s: f64) -> Self {
        BackendDescriptor {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            timeout_s,
        }
    }
}

const FUNDAMENTAL_GAIN: f64 = 0.6;
// One octave partial at -12 dB relative to the fundamental.
const PARTIAL_GAIN: f64 = FUNDAMENTAL_GAIN * 0.251188643150958;
const CROSSFADE_S: f64 = 0.005;

/// Frequency assigned to a token: a semitone ladder from 220 Hz.
pub fn token_frequency(token: u32) -> f64 {
    220.0 * (token as f64 / 12.0).exp2()
}

fn tone_sample(token: u32, index: usize, sample_rate: u32) -> f64 {
    let t = index as f64 / sample_rate as f64;
    let f = token_frequency(token);
    let mut value = FUNDAMENTAL_GAIN * (TAU * f * t).sin();
    // Drop the partial when it would alias.
    if 2.0 * f < sample_rate as f64 / 2.0 {
        value += PARTIAL_GAIN * (TAU * 2.0 * f * t).sin();
    }
    value
}

/// Renders each token as one frame of `1/frame_rate` seconds: a sine at the
/// token's frequency plus one octave partial at -12 dB, with 5 ms linear
/// crossfades across frame boundaries. Frame boundaries are allocated
/// cumulatively so the total sample count is exact.
pub fn render_tokens(tokens: &TokenSequence, sample_rate: u32) -> Result<AudioBuffer, SynthError> {
    if tokens.tokens.is_empty() {
        return Err(SynthError::EmptySequence);
    }
    if sample_rate == 0 || !(tokens.frame_rate > 0.0) {
        return Err(SynthError::BadAudio(format!(
            "sample rate {} / frame rate {}",
            sample_rate, tokens.frame_rate
        )));
    }

    let n = tokens.tokens.len();
    let samples_per_frame = sample_rate as f64 / tokens.frame_rate;
    let boundary = |i: usize| (i as f64 * samples_per_frame).round() as usize;
    let total = boundary(n);

    let mut samples = vec![0.0f32; total];
    for (i, &token) in tokens.tokens.iter().enumerate() {
        for s in boundary(i)..boundary(i + 1) {
            samples[s] = tone_sample(token, s, sample_rate) as f32;
        }
    }

    // Crossfade across each interior boundary, inside the incoming frame.
    let fade_len = (CROSSFADE_S * sample_rate as f64).round() as usize;
    for i in 1..n {
        let b = boundary(i);
        let frame_len = boundary(i + 1) - b;
        let fade = fade_len.min(frame_len);
        if fade == 0 {
            continue;
        }
        let prev = tokens.tokens[i - 1];
        let cur = tokens.tokens[i];
        for k in 0..fade {
            let u = k as f64 / fade as f64;
            let mixed =
                (1.0 - u) * tone_sample(prev, b + k, sample_rate) + u * tone_sample(cur, b + k, sample_rate);
            samples[b + k] = mixed as f32;
        }
    }

    debug_assert!(samples.iter().all(|s| s.abs() <= 1.0));
    Ok(AudioBuffer {
        sample_rate,
        samples,
    })
}

fn encode_i16(x: f32) -> i16 {
    (x.clamp(-1.0, 1.0) as f64 * 32767.0).round() as i16
}

fn decode_i16(s: i16) -> f32 {
    // -32768 would land just below -1.
    ((s as f64 / 32767.0) as f32).max(-1.0)
}

/// Encodes a buffer as a canonical 44-byte-header RIFF/PCM 16-bit mono WAV.
pub fn wav_to_bytes(buffer: &AudioBuffer) -> Vec<u8> {
    let data_len = buffer.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&buffer.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buffer.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &buffer.samples {
        out.extend_from_slice(&encode_i16(s).to_le_bytes());
    }
    out
}

/// Decodes a RIFF/PCM 16-bit mono WAV, rejecting anything else with a
/// description of the offending format field.
pub fn wav_from_bytes(bytes: &[u8]) -> Result<AudioBuffer, SynthError> {
    let bad = |msg: String| SynthError::WavFormat(msg);
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header".to_string()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = pos + 8 + size;
        if body_end > bytes.len() {
            return Err(bad(format!(
                "chunk {} overruns file",
                String::from_utf8_lossy(id)
            )));
        }
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(bad("fmt chunk too short".to_string()));
                }
                let format = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((format, channels, sample_rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }

    let (format, channels, sample_rate, bits) =
        fmt.ok_or_else(|| bad("missing fmt chunk".to_string()))?;
    if format != 1 {
        return Err(bad(format!("PCM required, got format tag {}", format)));
    }
    if channels != 1 {
        return Err(bad(format!("mono required, got {} channels", channels)));
    }
    if bits != 16 {
        return Err(bad(format!("16-bit samples required, got {}", bits)));
    }
    let data = data.ok_or_else(|| bad("missing data chunk".to_string()))?;
    if data.len() % 2 != 0 {
        return Err(bad("data chunk has odd length".to_string()));
    }

    let samples = data
        .chunks_exact(2)
        .map(|c| decode_i16(i16::from_le_bytes([c[0], c[1]])))
        .collect();
    Ok(AudioBuffer {
        sample_rate,
        samples,
    })
}

pub fn write_wav<P: AsRef<Path>>(buffer: &AudioBuffer, path: P) -> Result<(), SynthError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&wav_to_bytes(buffer))?;
    Ok(())
}

pub fn read_wav<P: AsRef<Path>>(path: P) -> Result<AudioBuffer, SynthError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    wav_from_bytes(&bytes)
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    prompt: &'a str,
    duration_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    continuation_wav_b64: Option<String>,
}

/// Asks a remote text-to-music server for audio.
///
/// Wire contract: HTTP POST of JSON
/// `{prompt, duration_s, continuation_wav_b64?}`, response body is a WAV.
pub fn remote_generate(
    backend: &BackendDescriptor,
    prompt: &str,
    duration_s: f64,
    continuation: Option<&AudioBuffer>,
) -> Result<AudioBuffer, SynthError> {
    let endpoint = backend
        .endpoint
        .as_deref()
        .ok_or(SynthError::MissingEndpoint)?;

    let request = RemoteRequest {
        prompt,
        duration_s,
        continuation_wav_b64: continuation
            .map(|c| base64::engine::general_purpose::STANDARD.encode(wav_to_bytes(c))),
    };

    let client = reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs_f64(backend.timeout_s))
        .build()
        .map_err(|e| SynthError::Transport(e.to_string()))?;

    let response = client.post(endpoint).json(&request).send().map_err(|e| {
        if e.is_timeout() {
            SynthError::Timeout
        } else {
            SynthError::Transport(e.to_string())
        }
    })?;

    let status = response.status();
    if !status.is_success() {
        return Err(SynthError::BackendStatus(status.as_u16()));
    }
    let body = response.bytes().map_err(|e| {
        if e.is_timeout() {
            SynthError::Timeout
        } else {
            SynthError::Transport(e.to_string())
        }
    })?;
    wav_from_bytes(&body).map_err(|e| SynthError::NonAudioResponse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_frame_render() {
        let seq = TokenSequence {
            tokens: vec![0],
            frame_rate: 10.0,
        };
        let audio = render_tokens(&seq, 22050).unwrap();
        assert_eq!(audio.samples.len(), 2205);
        assert!(audio.samples.iter().all(|s| s.abs() <= 1.0));
        assert!(audio.samples.iter().any(|s| s.abs() > 0.1));
    }

    #[test]
    fn empty_sequence_rejected() {
        let seq = TokenSequence {
            tokens: vec![],
            frame_rate: 10.0,
        };
        assert!(matches!(
            render_tokens(&seq, 22050),
            Err(SynthError::EmptySequence)
        ));
    }

    #[test]
    fn render_length_is_cumulative_exact() {
        // An awkward frame rate forces per-frame rounding.
        let seq = TokenSequence {
            tokens: vec![5; 97],
            frame_rate: 9.7,
        };
        let audio = render_tokens(&seq, 22050).unwrap();
        let ideal = 97.0 * 22050.0 / 9.7;
        assert!((audio.samples.len() as f64 - ideal).abs() < 1.0);
    }

    #[test]
    fn silence_wav_size_arithmetic() {
        let buffer = AudioBuffer {
            sample_rate: 22050,
            samples: vec![0.0; 22050],
        };
        let bytes = wav_to_bytes(&buffer);
        assert_eq!(bytes.len(), 44 + 44100);
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
    }

    #[test]
    fn wav_round_trip_within_quantization() {
        let seq = TokenSequence {
            tokens: vec![0, 7, 12, 24],
            frame_rate: 10.0,
        };
        let audio = render_tokens(&seq, 8000).unwrap();
        let back = wav_from_bytes(&wav_to_bytes(&audio)).unwrap();
        assert_eq!(back.sample_rate, 8000);
        assert_eq!(back.samples.len(), audio.samples.len());
        for (a, b) in audio.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn stereo_is_rejected_naming_mono() {
        let mut bytes = wav_to_bytes(&AudioBuffer {
            sample_rate: 8000,
            samples: vec![0.0; 16],
        });
        bytes[22] = 2; // channel count
        let err = wav_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("mono required"), "{}", err);
    }

    #[test]
    fn non_pcm_is_rejected() {
        let mut bytes = wav_to_bytes(&AudioBuffer {
            sample_rate: 8000,
            samples: vec![0.0; 16],
        });
        bytes[20] = 3; // format tag: IEEE float
        let err = wav_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("PCM required"), "{}", err);
    }

    #[test]
    fn truncated_wav_is_rejected() {
        let bytes = wav_to_bytes(&AudioBuffer {
            sample_rate: 8000,
            samples: vec![0.0; 16],
        });
        assert!(wav_from_bytes(&bytes[..30]).is_err());
    }

    #[test]
    fn extreme_pcm_decodes_into_range() {
        let mut bytes = wav_to_bytes(&AudioBuffer {
            sample_rate: 8000,
            samples: vec![0.0; 2],
        });
        let data = bytes.len() - 4;
        bytes[data..data + 2].copy_from_slice(&i16::MIN.to_le_bytes());
        bytes[data + 2..].copy_from_slice(&i16::MAX.to_le_bytes());
        let audio = wav_from_bytes(&bytes).unwrap();
        assert_eq!(audio.samples[0], -1.0);
        assert_eq!(audio.samples[1], 1.0);
    }
}
