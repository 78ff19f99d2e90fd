//! Token-level sampling: classifier-free guidance, temperature sampling,
//! two-condition blending and audio-prompt decay over a pluggable
//! autoregressive token model.
//!
//! The desk-scale stand-in for a neural token model is [`ToyTokenModel`], an
//! order-1 (bigram) table over a small vocabulary where each text condition
//! biases a distinct subset of tokens. That is the smallest model in which
//! part identity is visible in a self-similarity matrix.

use crate::form_plan::ConditioningSchedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Seed reserved for the unconditional branch of CFG.
pub const UNCONDITIONAL_SEED: u64 = 0;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("blend weight {0} outside [0, 1]")]
    BadBlendWeight(f64),
    #[error("not a probability vector: {0}")]
    NotAProbability(String),
    #[error("invalid sampler params: {0}")]
    BadParams(String),
    #[error("model vocabulary {model} does not match configured vocabulary {params}")]
    VocabularyMismatch { model: usize, params: usize },
    #[error("schedule references part {0} with no span")]
    UnknownPart(u32),
    #[error("audio prompt needs {needed} tokens but source has {have}")]
    SourceTooShort { needed: usize, have: usize },
    #[error("bad token file: {0}")]
    TokenFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A text condition reduced to a stable 64-bit seed.
///
/// At desk scale the text encoder of the real system is replaced by a hash
/// of the normalized prompt; equal prompt text always yields an equal seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition {
    /// Normalized prompt text (lowercased, whitespace collapsed).
    pub id: String,
    pub seed: u64,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Derives a deterministic [`Condition`] from prompt text.
pub fn condition_from_prompt(prompt: &str) -> Result<Condition, SamplerError> {
    let normalized = prompt
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    if normalized.is_empty() {
        return Err(SamplerError::EmptyPrompt);
    }
    let mut seed = fnv1a64(normalized.as_bytes());
    if seed == UNCONDITIONAL_SEED {
        seed = 0x9e3779b97f4a7c15;
    }
    Ok(Condition {
        id: normalized,
        seed,
    })
}

/// Raw (pre-softmax) scores over the token vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(pub Vec<f64>);

impl LogitVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// A normalized distribution over the token vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Wraps a vector after checking non-negativity and normalization
    /// (sum within 1e-9 of 1).
    pub fn new(values: Vec<f64>) -> Result<Self, SamplerError> {
        if values.iter().any(|&v| !(v >= 0.0)) {
            return Err(SamplerError::NotAProbability(
                "negative or NaN entry".to_string(),
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SamplerError::NotAProbability(format!(
                "sum {} is not 1",
                sum
            )));
        }
        Ok(ProbabilityVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Parameters for one generation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerParams {
    pub temperature: f64,
    pub cfg_gamma: f64,
    pub rng_seed: u64,
    pub vocabulary_size: usize,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            temperature: 1.0,
            cfg_gamma: 3.0,
            rng_seed: 0,
            vocabulary_size: 64,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(SamplerError::BadTemperature(self.temperature));
        }
        if self.cfg_gamma < 0.0 || !self.cfg_gamma.is_finite() {
            return Err(SamplerError::BadParams(format!(
                "cfg_gamma must be ≥ 0, got {}",
                self.cfg_gamma
            )));
        }
        if self.vocabulary_size < 2 {
            return Err(SamplerError::BadParams(format!(
                "vocabulary size must be ≥ 2, got {}",
                self.vocabulary_size
            )));
        }
        Ok(())
    }
}

/// Generated tokens at a fixed token frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    /// Token steps per second.
    pub frame_rate: f64,
}

impl TokenSequence {
    pub fn duration_s(&self) -> f64 {
        self.tokens.len() as f64 / self.frame_rate
    }
}

/// An autoregressive next-token scorer.
pub trait TokenModel {
    fn vocab_size(&self) -> usize;

    /// Context length the model actually conditions on.
    fn order(&self) -> usize;

    /// Scores the next token given a context suffix of at most [`order`]
    /// tokens. `None` selects the unconditional branch.
    ///
    /// [`order`]: TokenModel::order
    fn next_logits(&self, context: &[u32], condition: Option<&Condition>) -> LogitVector;
}

// splitmix64; used to derive the toy model's pseudorandom table entries.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic order-1 token model built from a seeded pseudorandom bigram
/// bias table. Each condition seed raises the score of a small, distinct
/// token subset on top of the shared bigram base.
#[derive(Debug, Clone)]
pub struct ToyTokenModel {
    vocab_size: usize,
    table_seed: u64,
    bias_tokens: usize,
    bias_strength: f64,
}

impl ToyTokenModel {
    pub fn new(vocab_size: usize, table_seed: u64) -> Self {
        ToyTokenModel {
            vocab_size,
            table_seed,
            bias_tokens: 8,
            bias_strength: 4.0,
        }
    }

    /// The canonical table shared by all runs, so corpora generated with
    /// different RNG seeds stay comparable.
    pub fn with_default_table(vocab_size: usize) -> Self {
        ToyTokenModel::new(vocab_size, 7)
    }

    pub fn with_bias(mut self, bias_tokens: usize, bias_strength: f64) -> Self {
        self.bias_tokens = bias_tokens;
        self.bias_strength = bias_strength;
        self
    }

    /// Tokens a condition seed biases toward.
    pub fn biased_tokens(&self, seed: u64) -> Vec<u32> {
        let mut tokens: Vec<u32> = (0..self.bias_tokens)
            .map(|i| (mix(seed ^ mix(i as u64)) % self.vocab_size as u64) as u32)
            .collect();
        tokens.sort_unstable();
        tokens.dedup();
        tokens
    }
}

impl TokenModel for ToyTokenModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn order(&self) -> usize {
        1
    }

    fn next_logits(&self, context: &[u32], condition: Option<&Condition>) -> LogitVector {
        // Empty context reads the reserved start row just past the vocabulary.
        let last = context
            .last()
            .map(|&t| t as u64)
            .unwrap_or(self.vocab_size as u64);
        let seed = condition.map(|c| c.seed).unwrap_or(UNCONDITIONAL_SEED);

        let mut biased = vec![false; self.vocab_size];
        if seed != UNCONDITIONAL_SEED {
            for t in self.biased_tokens(seed) {
                biased[t as usize] = true;
            }
        }

        let row_seed = mix(self.table_seed ^ mix(last.wrapping_add(1)));
        let values = (0..self.vocab_size)
            .map(|j| {
                let base = unit(mix(row_seed ^ mix(j as u64))) * 2.0 - 1.0;
                if biased[j] {
                    base + self.bias_strength
                } else {
                    base
                }
            })
            .collect();
        LogitVector(values)
    }
}

/// Classifier-free guidance: `uncond + gamma × (cond − uncond)`.
///
/// `gamma` 0 and 1 return the respective input bitwise.
pub fn apply_cfg(
    uncond: &LogitVector,
    cond: &LogitVector,
    gamma: f64,
) -> Result<LogitVector, SamplerError> {
    if uncond.len() != cond.len() {
        return Err(SamplerError::LengthMismatch {
            left: uncond.len(),
            right: cond.len(),
        });
    }
    if gamma == 0.0 {
        return Ok(uncond.clone());
    }
    if gamma == 1.0 {
        return Ok(cond.clone());
    }
    let values = uncond
        .values()
        .iter()
        .zip(cond.values())
        .map(|(&u, &c)| u + gamma * (c - u))
        .collect();
    Ok(LogitVector(values))
}

/// Temperature softmax with max-subtraction for stability.
pub fn apply_temperature(logits: &LogitVector, t: f64) -> Result<ProbabilityVector, SamplerError> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(SamplerError::BadTemperature(t));
    }
    let max = logits
        .values()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut values: Vec<f64> = logits
        .values()
        .iter()
        .map(|&v| ((v - max) / t).exp())
        .collect();
    let sum: f64 = values.iter().sum();
    for v in &mut values {
        *v /= sum;
    }
    Ok(ProbabilityVector(values))
}

/// Convex mix `w × pa + (1 − w) × pb`; normalized by construction.
///
/// `w` 1 and 0 return the respective input bitwise.
pub fn blend_distributions(
    pa: &ProbabilityVector,
    pb: &ProbabilityVector,
    w: f64,
) -> Result<ProbabilityVector, SamplerError> {
    if pa.len() != pb.len() {
        return Err(SamplerError::LengthMismatch {
            left: pa.len(),
            right: pb.len(),
        });
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(SamplerError::BadBlendWeight(w));
    }
    if w == 1.0 {
        return Ok(pa.clone());
    }
    if w == 0.0 {
        return Ok(pb.clone());
    }
    let values = pa
        .values()
        .iter()
        .zip(pb.values())
        .map(|(&a, &b)| w * a + (1.0 - w) * b)
        .collect();
    Ok(ProbabilityVector(values))
}

/// Linear fade from 1 at `window_start` to 0 at `window_start + window_len`,
/// clamped to 1 before the window and 0 after it.
pub fn fade_weight(step: usize, window_start: usize, window_len: usize) -> f64 {
    if step <= window_start {
        return 1.0;
    }
    if step >= window_start + window_len {
        return 0.0;
    }
    1.0 - (step - window_start) as f64 / window_len as f64
}

/// Per-step snapshot passed to the generation hook.
#[derive(Debug)]
pub struct StepTrace<'a> {
    pub step: usize,
    /// Post-CFG, post-temperature distribution per active text condition,
    /// keyed by part.
    pub text_components: &'a [(u32, ProbabilityVector)],
    /// Text conditions blended with the step's weights.
    pub text_blended: &'a ProbabilityVector,
    /// Distribution conditioned on the audio-prompt source, when the step
    /// carries an audio weight.
    pub audio_component: Option<&'a ProbabilityVector>,
    /// Audio weight `w_a` (0 when no audio prompt is active).
    pub audio_weight: f64,
    pub final_dist: &'a ProbabilityVector,
    pub token: u32,
}

fn sample_index<R: Rng>(p: &ProbabilityVector, rng: &mut R) -> u32 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &v) in p.values().iter().enumerate() {
        acc += v;
        if u < acc {
            return i as u32;
        }
    }
    p.values()
        .iter()
        .rposition(|&v| v > 0.0)
        .unwrap_or(p.len() - 1) as u32
}

/// Runs the full per-step pipeline over a compiled schedule.
///
/// Each step evaluates the unconditional logits once, applies CFG and
/// temperature per active text condition, blends with the step's text
/// weights, mixes in the audio-conditioned distribution at the step's audio
/// weight, and samples with the seeded RNG. When a part with an audio
/// request starts, the requested tokens from the referenced part are
/// prefixed into the model context.
pub fn generate_tokens_with_hook<M, F>(
    model: &M,
    schedule: &ConditioningSchedule,
    params: &SamplerParams,
    mut hook: F,
) -> Result<TokenSequence, SamplerError>
where
    M: TokenModel + ?Sized,
    F: FnMut(&StepTrace),
{
    params.validate()?;
    if model.vocab_size() != params.vocabulary_size {
        return Err(SamplerError::VocabularyMismatch {
            model: model.vocab_size(),
            params: params.vocabulary_size,
        });
    }

    let mut conditions: HashMap<u32, Condition> = HashMap::new();
    for span in schedule.parts() {
        conditions.insert(span.part, condition_from_prompt(&span.prompt)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let order = model.order();
    let mut output: Vec<u32> = Vec::with_capacity(schedule.total_steps());
    let mut model_context: Vec<u32> = Vec::new();

    for (s, step) in schedule.steps().iter().enumerate() {
        // Inject the audio prompt at the start of a referencing part.
        if let Some(span) = schedule.parts().iter().find(|sp| sp.start == s) {
            if let Some(req) = &span.audio_request {
                let source = schedule
                    .span_for_part(req.source_part)
                    .ok_or(SamplerError::UnknownPart(req.source_part))?;
                let avail = source.end - source.start;
                let take = ((req.length_s * schedule.frame_rate()).round() as usize).min(avail);
                model_context.extend_from_slice(&output[source.end - take..source.end]);
            }
        }

        let ctx = &model_context[model_context.len().saturating_sub(order)..];
        let uncond = model.next_logits(ctx, None);

        let mut text_components: Vec<(u32, ProbabilityVector)> =
            Vec::with_capacity(step.text_conditions.len());
        for tc in &step.text_conditions {
            let condition = conditions
                .get(&tc.part)
                .ok_or(SamplerError::UnknownPart(tc.part))?;
            let cond = model.next_logits(ctx, Some(condition));
            let guided = apply_cfg(&uncond, &cond, params.cfg_gamma)?;
            text_components.push((tc.part, apply_temperature(&guided, params.temperature)?));
        }

        let text_blended = match text_components.len() {
            1 => text_components[0].1.clone(),
            2 => blend_distributions(
                &text_components[0].1,
                &text_components[1].1,
                step.text_conditions[0].weight,
            )?,
            n => {
                return Err(SamplerError::BadParams(format!(
                    "step {} carries {} text conditions",
                    s, n
                )))
            }
        };

        let (audio_component, audio_weight) = match &step.audio_prompt {
            Some(audio) => {
                let condition = conditions
                    .get(&audio.source_part)
                    .ok_or(SamplerError::UnknownPart(audio.source_part))?;
                let cond = model.next_logits(ctx, Some(condition));
                let guided = apply_cfg(&uncond, &cond, params.cfg_gamma)?;
                (
                    Some(apply_temperature(&guided, params.temperature)?),
                    audio.weight,
                )
            }
            None => (None, 0.0),
        };

        let final_dist = match &audio_component {
            Some(pa) => blend_distributions(pa, &text_blended, audio_weight)?,
            None => text_blended.clone(),
        };

        let token = sample_index(&final_dist, &mut rng);
        hook(&StepTrace {
            step: s,
            text_components: &text_components,
            text_blended: &text_blended,
            audio_component: audio_component.as_ref(),
            audio_weight,
            final_dist: &final_dist,
            token,
        });

        output.push(token);
        model_context.push(token);
    }

    Ok(TokenSequence {
        tokens: output,
        frame_rate: schedule.frame_rate(),
    })
}

/// [`generate_tokens_with_hook`] without instrumentation.
pub fn generate_tokens<M>(
    model: &M,
    schedule: &ConditioningSchedule,
    params: &SamplerParams,
) -> Result<TokenSequence, SamplerError>
where
    M: TokenModel + ?Sized,
{
    generate_tokens_with_hook(model, schedule, params, |_| {})
}

/// The final `round(length_s × frame_rate)` tokens of a sequence.
pub fn extract_audio_prompt_tokens(
    source: &TokenSequence,
    length_s: f64,
) -> Result<TokenSequence, SamplerError> {
    let needed = (length_s * source.frame_rate).round() as usize;
    if needed > source.tokens.len() {
        return Err(SamplerError::SourceTooShort {
            needed,
            have: source.tokens.len(),
        });
    }
    Ok(TokenSequence {
        tokens: source.tokens[source.tokens.len() - needed..].to_vec(),
        frame_rate: source.frame_rate,
    })
}

pub const TOKEN_FILE_MAGIC: [u8; 4] = *b"FGTK";
pub const TOKEN_FILE_VERSION: u32 = 1;

/// Encodes a token sequence into the binary token-file format:
/// magic `FGTK`, u32 version, u32 vocabulary size, f64 frame rate,
/// u64 count, then count × u32 tokens, all little-endian.
pub fn encode_token_file(seq: &TokenSequence, vocab_size: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + seq.tokens.len() * 4);
    out.extend_from_slice(&TOKEN_FILE_MAGIC);
    out.extend_from_slice(&TOKEN_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&vocab_size.to_le_bytes());
    out.extend_from_slice(&seq.frame_rate.to_le_bytes());
    out.extend_from_slice(&(seq.tokens.len() as u64).to_le_bytes());
    for &t in &seq.tokens {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

/// Decodes the binary token-file format; returns the sequence and the
/// vocabulary size recorded in the header.
pub fn decode_token_file(bytes: &[u8]) -> Result<(TokenSequence, u32), SamplerError> {
    let bad = |msg: &str| SamplerError::TokenFile(msg.to_string());
    if bytes.len() < 28 {
        return Err(bad("file shorter than header"));
    }
    if bytes[0..4] != TOKEN_FILE_MAGIC {
        return Err(bad("bad magic, expected FGTK"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TOKEN_FILE_VERSION {
        return Err(SamplerError::TokenFile(format!(
            "unsupported version {}",
            version
        )));
    }
    let vocab = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let frame_rate = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    if bytes.len() != 28 + count * 4 {
        return Err(bad("token payload does not match count"));
    }
    let mut tokens = Vec::with_capacity(count);
    for i in 0..count {
        let off = 28 + i * 4;
        let t = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if t >= vocab {
            return Err(SamplerError::TokenFile(format!(
                "token {} out of vocabulary {}",
                t, vocab
            )));
        }
        tokens.push(t);
    }
    Ok((TokenSequence { tokens, frame_rate }, vocab))
}

pub fn write_token_file<P: AsRef<Path>>(
    path: P,
    seq: &TokenSequence,
    vocab_size: u32,
) -> Result<(), SamplerError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode_token_file(seq, vocab_size))?;
    Ok(())
}

pub fn read_token_file<P: AsRef<Path>>(path: P) -> Result<(TokenSequence, u32), SamplerError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_token_file(&bytes)
}
