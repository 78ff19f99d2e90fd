//! Song-form plans: parsing, validation, serialization and compilation into
//! per-step conditioning schedules.
//!
//! The wire format for a plan is a JSON object keyed by part-number strings,
//! each value a 3-element array `[prompt, length_in_seconds, referenced_part]`
//! where `referenced_part` is the number of an earlier part, or `null`/`0`
//! for no reference.

use serde::de::{MapAccess, Visitor};
use serde::Deserializer;
use std::fmt;
use thiserror::Error;

/// One part of a piece: a text prompt, a duration, and optionally a
/// reference to an earlier part whose material this part varies.
#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    /// 1-based position in the piece.
    pub index: u32,
    pub prompt: String,
    pub length_s: f64,
    /// 1-based index of an earlier part, when this part varies it.
    pub referenced_part: Option<u32>,
}

/// An ordered list of parts plus the free-text description of the piece.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FormPlan {
    pub description: String,
    pub parts: Vec<Part>,
}

impl FormPlan {
    pub fn total_length_s(&self) -> f64 {
        self.parts.iter().map(|p| p.length_s).sum()
    }
}

/// Validation bounds for a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanConstraints {
    pub total_length_s: f64,
    pub min_part_s: f64,
    pub max_part_s: f64,
}

impl PlanConstraints {
    /// Constraints for a given total length with per-part bounds left wide
    /// open (any positive length up to the total).
    pub fn for_total(total_length_s: f64) -> Self {
        PlanConstraints {
            total_length_s,
            min_part_s: 1.0,
            max_part_s: total_length_s,
        }
    }
}

impl Default for PlanConstraints {
    fn default() -> Self {
        PlanConstraints::for_total(150.0)
    }
}

#[derive(Debug, Error)]
pub enum PlanParseError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("plan must be a JSON object keyed by part numbers")]
    NotAnObject,
    #[error("part number {key:?} is not a positive integer")]
    BadPartNumber { key: String },
    #[error("duplicate part number {key:?}")]
    DuplicatePart { key: String },
    #[error("part {key}: {reason}")]
    BadEntry { key: String, reason: String },
    #[error("part {key}: references later part {referenced} (must reference an earlier part)")]
    ForwardReference { key: String, referenced: u32 },
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("frame rate must be positive, got {0}")]
    BadFrameRate(f64),
    #[error("transition of {transition_s} s exceeds shortest part length of {shortest_s} s")]
    TransitionTooLong { transition_s: f64, shortest_s: f64 },
    #[error("plan cannot be scheduled: {0}")]
    InvalidPlan(String),
}

// Deserialization target that keeps duplicate keys, which serde_json's map
// types silently collapse.
struct RawEntries(Vec<(String, serde_json::Value)>);

impl<'de> serde::Deserialize<'de> for RawEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = RawEntries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some((key, value)) = map.next_entry::<String, serde_json::Value>()? {
                    entries.push((key, value));
                }
                Ok(RawEntries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

/// Parses a plan from its JSON wire format.
///
/// Accepts `null` or `0` in the referenced-part slot as "no reference", and a
/// 2-element `[prompt, length]` entry as an entry without a reference.
/// Parts are returned ordered by part number.
pub fn parse_plan(json_text: &str) -> Result<FormPlan, PlanParseError> {
    let mut de = serde_json::Deserializer::from_str(json_text);
    let raw: RawEntries = serde::Deserialize::deserialize(&mut de).map_err(|e| {
        if e.is_data() {
            PlanParseError::NotAnObject
        } else {
            PlanParseError::MalformedJson(e.to_string())
        }
    })?;
    de.end()
        .map_err(|e| PlanParseError::MalformedJson(e.to_string()))?;

    let mut parts: Vec<Part> = Vec::with_capacity(raw.0.len());
    for (key, value) in raw.0 {
        let index: u32 = match key.trim().parse() {
            Ok(n) if n >= 1 => n,
            _ => return Err(PlanParseError::BadPartNumber { key }),
        };
        if parts.iter().any(|p| p.index == index) {
            return Err(PlanParseError::DuplicatePart { key });
        }
        parts.push(parse_entry(&key, index, value)?);
    }

    parts.sort_by_key(|p| p.index);
    Ok(FormPlan {
        description: String::new(),
        parts,
    })
}

fn parse_entry(key: &str, index: u32, value: serde_json::Value) -> Result<Part, PlanParseError> {
    let bad = |reason: &str| PlanParseError::BadEntry {
        key: key.to_string(),
        reason: reason.to_string(),
    };

    let items = match value {
        serde_json::Value::Array(items) => items,
        _ => return Err(bad("expected [prompt, length_in_seconds, referenced_part]")),
    };
    if items.len() > 3 {
        return Err(bad("expected at most 3 elements"));
    }

    let prompt = match items.first() {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(_) => return Err(bad("prompt must be a string")),
        None => return Err(bad("missing prompt")),
    };
    let length_s = match items.get(1) {
        Some(v) => v
            .as_f64()
            .ok_or_else(|| bad("length is not a number"))?,
        None => return Err(bad("missing length")),
    };
    let referenced_part = match items.get(2) {
        None | Some(serde_json::Value::Null) => None,
        Some(v) => {
            let f = v
                .as_f64()
                .ok_or_else(|| bad("referenced part must be a part number, 0 or null"))?;
            if f < 0.0 || f.fract() != 0.0 || f > u32::MAX as f64 {
                return Err(bad("referenced part must be a part number, 0 or null"));
            }
            if f == 0.0 {
                None
            } else {
                Some(f as u32)
            }
        }
    };

    if let Some(r) = referenced_part {
        if r >= index {
            return Err(PlanParseError::ForwardReference {
                key: key.to_string(),
                referenced: r,
            });
        }
    }

    Ok(Part {
        index,
        prompt,
        length_s,
        referenced_part,
    })
}

/// Serializes a plan to its JSON wire format with part numbers in ascending
/// numeric order.
pub fn serialize_plan(plan: &FormPlan) -> String {
    let mut parts: Vec<&Part> = plan.parts.iter().collect();
    parts.sort_by_key(|p| p.index);

    let mut map = serde_json::Map::new();
    for part in parts {
        let reference = match part.referenced_part {
            Some(r) => serde_json::json!(r),
            None => serde_json::Value::Null,
        };
        map.insert(
            part.index.to_string(),
            serde_json::json!([part.prompt, part.length_s, reference]),
        );
    }
    serde_json::Value::Object(map).to_string()
}

pub(crate) fn fmt_seconds(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{}", x)
    }
}

/// Checks a plan against its invariants and the given constraints.
///
/// Returns one description per violation; an empty list means the plan is
/// valid. Violations are data, not errors.
pub fn validate_plan(plan: &FormPlan, constraints: &PlanConstraints) -> Vec<String> {
    let mut violations = Vec::new();

    if plan.parts.is_empty() {
        violations.push("plan has no parts".to_string());
        return violations;
    }

    for (i, part) in plan.parts.iter().enumerate() {
        let expected = (i + 1) as u32;
        if part.index != expected {
            violations.push(format!(
                "part numbering not contiguous: expected part {} but found part {}",
                expected, part.index
            ));
        }
    }

    for part in &plan.parts {
        if part.length_s <= 0.0 {
            violations.push(format!("part {}: non-positive length", part.index));
            continue;
        }
        if part.length_s < constraints.min_part_s {
            violations.push(format!(
                "part {}: length {} below minimum {}",
                part.index,
                fmt_seconds(part.length_s),
                fmt_seconds(constraints.min_part_s)
            ));
        }
        if part.length_s > constraints.max_part_s {
            violations.push(format!(
                "part {}: length {} above maximum {}",
                part.index,
                fmt_seconds(part.length_s),
                fmt_seconds(constraints.max_part_s)
            ));
        }
    }

    for part in &plan.parts {
        if let Some(r) = part.referenced_part {
            if r == 0 || r >= part.index {
                violations.push(format!(
                    "part {}: reference to part {} is not an earlier part",
                    part.index, r
                ));
            }
        }
    }

    let total = plan.total_length_s();
    if (total - constraints.total_length_s).abs() > 1e-9 {
        violations.push(format!(
            "total length {} ≠ {}",
            fmt_seconds(total),
            fmt_seconds(constraints.total_length_s)
        ));
    }

    violations
}

/// A text condition active at one schedule step.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCondition {
    /// Part whose prompt supplies the condition.
    pub part: u32,
    pub weight: f64,
}

/// Audio-prompt conditioning active at one schedule step.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioWeight {
    /// Part whose material the audio prompt was taken from.
    pub source_part: u32,
    pub weight: f64,
}

/// Conditioning for a single token step. Text-condition weights sum to 1;
/// the audio weight, when present, lies in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleStep {
    pub text_conditions: Vec<TextCondition>,
    pub audio_prompt: Option<AudioWeight>,
}

/// An audio prompt to lift from earlier generated material.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioPromptRequest {
    /// Referenced part supplying the audio.
    pub source_part: u32,
    /// Seconds of audio to take from the end of the source part.
    pub length_s: f64,
}

/// Step range occupied by one part, with everything the sampler needs to
/// condition it.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSpan {
    pub part: u32,
    pub prompt: String,
    /// First step of the part (inclusive).
    pub start: usize,
    /// One past the last step of the part.
    pub end: usize,
    pub audio_request: Option<AudioPromptRequest>,
}

/// Per-step conditioning weights compiled from a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSchedule {
    frame_rate: f64,
    steps: Vec<ScheduleStep>,
    parts: Vec<PartSpan>,
}

impl ConditioningSchedule {
    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn steps(&self) -> &[ScheduleStep] {
        &self.steps
    }

    pub fn parts(&self) -> &[PartSpan] {
        &self.parts
    }

    pub fn total_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn span_for_part(&self, part: u32) -> Option<&PartSpan> {
        self.parts.iter().find(|s| s.part == part)
    }
}

fn round_steps(x: f64) -> usize {
    x.round() as usize
}

/// Compiles a validated plan into a per-step schedule.
///
/// Within the trailing `transition_s` window of each part except the last,
/// the outgoing condition weight falls linearly 1→0 while the incoming one
/// rises 0→1. A part that references an earlier part requests an audio
/// prompt of `audio_prompt_s` from that part (clamped to its length) and
/// carries an audio weight that falls linearly 1→0 over `audio_fade_s` from
/// the part's start.
pub fn compile_schedule(
    plan: &FormPlan,
    frame_rate: f64,
    transition_s: f64,
    audio_prompt_s: f64,
    audio_fade_s: f64,
) -> Result<ConditioningSchedule, ScheduleError> {
    if !(frame_rate > 0.0) || !frame_rate.is_finite() {
        return Err(ScheduleError::BadFrameRate(frame_rate));
    }
    if plan.parts.is_empty() {
        return Err(ScheduleError::InvalidPlan("plan has no parts".to_string()));
    }
    for (i, part) in plan.parts.iter().enumerate() {
        if part.index != (i + 1) as u32 {
            return Err(ScheduleError::InvalidPlan(format!(
                "part numbering not contiguous at part {}",
                part.index
            )));
        }
        if part.length_s <= 0.0 {
            return Err(ScheduleError::InvalidPlan(format!(
                "part {}: non-positive length",
                part.index
            )));
        }
        if let Some(r) = part.referenced_part {
            if r == 0 || r >= part.index {
                return Err(ScheduleError::InvalidPlan(format!(
                    "part {}: reference to part {} is not an earlier part",
                    part.index, r
                )));
            }
        }
    }

    let shortest = plan
        .parts
        .iter()
        .map(|p| p.length_s)
        .fold(f64::INFINITY, f64::min);
    if transition_s > shortest {
        return Err(ScheduleError::TransitionTooLong {
            transition_s,
            shortest_s: shortest,
        });
    }

    let n_parts = plan.parts.len();
    let total_steps = round_steps(plan.total_length_s() * frame_rate);

    // Round-half-up per part; the final part absorbs the rounding residual so
    // the total matches round(total × frame_rate) exactly.
    let mut counts: Vec<usize> = Vec::with_capacity(n_parts);
    let mut allotted = 0usize;
    for (i, part) in plan.parts.iter().enumerate() {
        let count = if i + 1 == n_parts {
            total_steps.saturating_sub(allotted)
        } else {
            round_steps(part.length_s * frame_rate).min(total_steps - allotted)
        };
        counts.push(count);
        allotted += count;
    }

    let mut parts: Vec<PartSpan> = Vec::with_capacity(n_parts);
    let mut cursor = 0usize;
    for (part, &count) in plan.parts.iter().zip(&counts) {
        let audio_request = part.referenced_part.map(|source| {
            let source_len = plan.parts[(source - 1) as usize].length_s;
            AudioPromptRequest {
                source_part: source,
                length_s: audio_prompt_s.min(source_len),
            }
        });
        parts.push(PartSpan {
            part: part.index,
            prompt: part.prompt.clone(),
            start: cursor,
            end: cursor + count,
            audio_request,
        });
        cursor += count;
    }

    let transition_len = round_steps(transition_s * frame_rate);
    let audio_fade_len = round_steps(audio_fade_s * frame_rate);

    let mut steps: Vec<ScheduleStep> = Vec::with_capacity(total_steps);
    for (pi, span) in parts.iter().enumerate() {
        for s in span.start..span.end {
            let in_transition = pi + 1 < n_parts
                && transition_len > 0
                && s >= span.end.saturating_sub(transition_len);
            let text_conditions = if in_transition {
                let window_start = span.end - transition_len;
                let t = (s - window_start) as f64 / transition_len as f64;
                vec![
                    TextCondition {
                        part: span.part,
                        weight: 1.0 - t,
                    },
                    TextCondition {
                        part: parts[pi + 1].part,
                        weight: t,
                    },
                ]
            } else {
                vec![TextCondition {
                    part: span.part,
                    weight: 1.0,
                }]
            };

            let audio_prompt = span.audio_request.as_ref().and_then(|req| {
                if audio_fade_len == 0 || s - span.start >= audio_fade_len {
                    return None;
                }
                let weight = 1.0 - (s - span.start) as f64 / audio_fade_len as f64;
                Some(AudioWeight {
                    source_part: req.source_part,
                    weight,
                })
            });

            steps.push(ScheduleStep {
                text_conditions,
                audio_prompt,
            });
        }
    }

    debug_assert_eq!(steps.len(), total_steps);
    Ok(ConditioningSchedule {
        frame_rate,
        steps,
        parts,
    })
}
