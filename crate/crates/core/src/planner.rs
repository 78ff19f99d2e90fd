//! In-context planning: builds the multishot instruction prompt, drives a
//! chat-completion client through the two-request protocol, extracts plan
//! JSON from replies, and re-prompts with violation lists until the plans
//! validate.

use crate::form_plan::{fmt_seconds, parse_plan, validate_plan, FormPlan, PlanConstraints};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Mutex;
use thiserror::Error;

pub const ENV_LLM_URL: &str = "FORMAGEN_LLM_URL";
pub const ENV_LLM_KEY: &str = "FORMAGEN_LLM_KEY";
pub const ENV_LLM_MODEL: &str = "FORMAGEN_LLM_MODEL";

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("replay fixture exhausted")]
    FixtureExhausted,
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    BadConfig(String),
    #[error("no plan JSON found in reply")]
    NoPlanJson,
    #[error("chat failed after {attempts} attempts: {last}")]
    Transport { attempts: usize, last: String },
    #[error("no valid plans after {0} corrective retries")]
    NoValidPlans(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad transcript file: {0}")]
    BadTranscript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A full conversation, in order. After any leading system message the
/// roles alternate user/assistant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChatTranscript(pub Vec<ChatMessage>);

impl ChatTranscript {
    /// Checks the alternation invariant.
    pub fn roles_alternate(&self) -> bool {
        let body: Vec<&ChatMessage> = self
            .0
            .iter()
            .skip_while(|m| m.role == Role::System)
            .collect();
        body.iter().enumerate().all(|(i, m)| {
            if i % 2 == 0 {
                m.role == Role::User
            } else {
                m.role == Role::Assistant
            }
        })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), PlannerError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| PlannerError::BadTranscript(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, PlannerError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PlannerError::BadTranscript(e.to_string()))
    }
}

/// A synchronous chat-completion client. The full transcript is resent each
/// turn; the reply is the assistant's text. Implementations must be safely
/// shareable across concurrent planner sessions.
pub trait ChatClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError>;
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct WireResponse {
    content: String,
}

/// Chat client speaking the minimal HTTP wire contract:
/// POST `{model, messages: [{role, content}…]}`, response `{content}`.
pub struct HttpChatClient {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        timeout_s: f64,
    ) -> Result<Self, ChatError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs_f64(timeout_s))
            .build()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        Ok(HttpChatClient {
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
            client,
        })
    }

    /// Builds a client from `FORMAGEN_LLM_URL`, `FORMAGEN_LLM_KEY` and
    /// `FORMAGEN_LLM_MODEL`.
    pub fn from_env(timeout_s: f64) -> Result<Self, ChatError> {
        let endpoint = std::env::var(ENV_LLM_URL)
            .map_err(|_| ChatError::Transport(format!("{} is not set", ENV_LLM_URL)))?;
        let api_key = std::env::var(ENV_LLM_KEY).ok();
        let model = std::env::var(ENV_LLM_MODEL).unwrap_or_else(|_| "default".to_string());
        HttpChatClient::new(endpoint, api_key, model, timeout_s)
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ChatError> {
        let mut request = self.client.post(&self.endpoint).json(&WireRequest {
            model: &self.model,
            messages,
        });
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(ChatError::Status(status.as_u16()));
        }
        let parsed: WireResponse = response
            .json()
            .map_err(|e| ChatError::BadResponse(e.to_string()))?;
        Ok(parsed.content)
    }
}

/// Offline client replaying scripted assistant replies in order; used for
/// fixtures recorded from earlier sessions, so tests run without API keys.
pub struct ReplayClient {
    replies: Mutex<std::collections::VecDeque<String>>,
}

impl ReplayClient {
    pub fn from_replies(replies: Vec<String>) -> Self {
        ReplayClient {
            replies: Mutex::new(replies.into()),
        }
    }

    /// Replays the assistant messages of a recorded transcript.
    pub fn from_transcript(transcript: &ChatTranscript) -> Self {
        let replies = transcript
            .0
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .map(|m| m.content.clone())
            .collect();
        ReplayClient::from_replies(replies)
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self, PlannerError> {
        Ok(ReplayClient::from_transcript(&ChatTranscript::load(path)?))
    }
}

impl ChatClient for ReplayClient {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<String, ChatError> {
        self.replies
            .lock()
            .expect("replay queue poisoned")
            .pop_front()
            .ok_or(ChatError::FixtureExhausted)
    }
}

/// Configuration of a planning session.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Multishot example descriptions embedded in the instruction prompt.
    pub example_descriptions: Vec<String>,
    /// Numbered constraint sentences, in order.
    pub rule_texts: Vec<String>,
    pub pieces_requested: usize,
    pub total_length_s: f64,
    /// Bound on corrective re-prompts and on transport retries.
    pub max_retries: usize,
    /// Per-part validation bounds applied to returned plans.
    pub constraints: PlanConstraints,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig::for_total_length(150.0)
    }
}

impl PlannerConfig {
    pub fn for_total_length(total_length_s: f64) -> Self {
        PlannerConfig {
            example_descriptions: default_example_descriptions(),
            rule_texts: default_rule_texts(total_length_s),
            pieces_requested: 10,
            total_length_s,
            max_retries: 3,
            constraints: PlanConstraints::for_total(total_length_s),
        }
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.example_descriptions.is_empty() {
            return Err(PlannerError::BadConfig(
                "at least one example description is required".to_string(),
            ));
        }
        if self.pieces_requested < 1 {
            return Err(PlannerError::BadConfig(
                "pieces_requested must be ≥ 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// The stock constraint rules, with the total length baked in.
pub fn default_rule_texts(total_length_s: f64) -> Vec<String> {
    vec![
        format!(
            "The entire piece must be exactly {} seconds long. You will also decide the length of each part.",
            fmt_seconds(total_length_s)
        ),
        "The prompt for each part can reference an earlier part whose material it reuses."
            .to_string(),
        "Never describe a part as having a slower tempo than a previous part.".to_string(),
        "To repeat a part with variations in the chosen musical form, reference the original \
         part and, in the new prompt, explain what changed."
            .to_string(),
        "Consider a framework such as the ITPRA theory of expectation when designing the form \
         of each piece."
            .to_string(),
    ]
}

/// Stock multishot examples: 50 short descriptions in the register the
/// music model understands.
pub fn default_example_descriptions() -> Vec<String> {
    DEFAULT_EXAMPLES.iter().map(|s| s.to_string()).collect()
}

const DEFAULT_EXAMPLES: [&str; 50] = [
    "a light and cheerful EDM track with syncopated drums, airy pads, and strong emotions; bpm: 130",
    "melancholic solo piano piece with slow arpeggios and soft dynamics",
    "uplifting orchestral theme with soaring strings, bold brass, and cinematic percussion",
    "laid-back lo-fi hip hop beat with dusty vinyl crackle, mellow Rhodes chords, and a relaxed groove; bpm: 82",
    "driving rock anthem with distorted electric guitars, punchy drums, and an energetic chorus",
    "ambient drone soundscape with warm analog pads and slowly evolving textures",
    "funky disco groove with slap bass, wah guitar, tight horns, and four-on-the-floor drums; bpm: 118",
    "gentle acoustic folk song with fingerpicked guitar, soft strings, and a warm, intimate feel",
    "dark cinematic trailer music with pounding taiko drums, tense string ostinatos, and deep braams",
    "smooth jazz quartet with brushed drums, upright bass, mellow saxophone, and piano comping",
    "epic fantasy adventure theme with celtic flutes, harp runs, and galloping percussion",
    "minimal techno with a hypnotic bassline, crisp hi-hats, and subtle acid stabs; bpm: 126",
    "romantic string quartet piece with lyrical violin melodies and rich cello lines",
    "tropical house track with steel drums, plucked synths, and a breezy summer vibe; bpm: 104",
    "gritty trap beat with booming 808s, rapid hi-hat rolls, and eerie bell melodies; bpm: 140",
    "serene new-age meditation music with soft flutes, gentle chimes, and ocean-like pads",
    "upbeat ska tune with offbeat guitar skanks, bright horns, and a walking bassline",
    "vintage surf rock with twangy reverb guitar, driving toms, and a carefree mood",
    "majestic pipe organ piece with full chords and cathedral ambience",
    "bouncy synthwave with retro analog leads, gated reverb drums, and neon atmosphere; bpm: 108",
    "dreamy shoegaze with washed-out guitars, hazy choir pads, and slow-building drums",
    "traditional bluegrass with rolling banjo, fiddle solos, and stomping rhythm",
    "cool bossa nova with nylon guitar, soft percussion, and a swaying rhythm",
    "intense drum and bass with fast breakbeats, deep sub bass, and atmospheric pads; bpm: 174",
    "playful children's tune with toy piano, glockenspiel, and cheerful whistling melodies",
    "moody downtempo electronica with deep bass, sparse percussion, and airy vocal chops; bpm: 90",
    "grand waltz with sweeping strings, elegant woodwinds, and a graceful one-two-three pulse",
    "raw delta blues with slide guitar, foot stomps, and a gravelly harmonica feel",
    "triumphant sports highlight theme with driving percussion, power chords, and big brass hits",
    "ethereal choir piece with wide reverb, slow harmonic shifts, and sacred atmosphere",
    "quirky indie pop with bouncy ukulele, handclaps, and whistling hooks; bpm: 112",
    "heavy metal onslaught with chugging riffs, double kick drums, and screaming lead guitar",
    "relaxed reggae groove with skanking guitar, deep bass, and laid-back drums; bpm: 75",
    "sparkling music-box lullaby with delicate chimes and a slow, soothing melody",
    "furious flamenco with rapid nylon-string runs, palmas claps, and passionate swells",
    "icy ambient electronica with glassy textures, distant echoes, and glacial pacing",
    "swinging big band jazz with punchy brass section, walking bass, and ride cymbal drive; bpm: 160",
    "mysterious noir jazz with muted trumpet, smoky piano chords, and brushed snare",
    "anthemic stadium pop with pulsing synth bass, huge drums, and euphoric hooks; bpm: 124",
    "pastoral classical piece with solo oboe, light strings, and a morning-meadow calm",
    "west coast G-funk with whiny synth leads, deep bass, and relaxed swing; bpm: 94",
    "hard-hitting industrial with metallic percussion, distorted synth bass, and mechanical rhythms",
    "cheerful polka with accordion leads, tuba bass, and a brisk oom-pah beat",
    "late-night chillwave with warbly synths, soft sidechained pads, and nostalgic mood; bpm: 96",
    "dramatic tango with sharp string stabs, bandoneon melodies, and staccato rhythm",
    "breezy country road-trip song with twangy telecaster, lap steel, and steady backbeat",
    "mystical eastern-inspired piece with sitar drones, tabla rhythms, and bamboo flute",
    "euphoric progressive trance with long builds, shimmering arpeggios, and wide supersaws; bpm: 138",
    "cozy fireside jazz ballad with soft piano, mellow double bass, and gentle brushes",
    "victorious video game boss theme with fast chiptune arpeggios, driving drums, and heroic leads",
];

/// Builds the first (instruction) request: task framing, multishot
/// examples, numbered constraint rules, and the request for pieces with
/// form descriptions. Byte-identical for identical config.
pub fn build_instruction_prompt(config: &PlannerConfig) -> String {
    let mut out = String::new();
    out.push_str(
        "*Task* Assume you're a musician. Your task is to write text prompts for a system that \
         generates music based on the given description of the music. The system only \
         understands short, plain descriptions of instrumentation, mood, genre and tempo, and \
         it generates one part at a time.\n\n",
    );

    out.push_str(
        "*Multishot examples* Below are some example prompts that the system understands, \
         along with the type of music it can generate:\n",
    );
    for example in &config.example_descriptions {
        out.push_str("- \"");
        out.push_str(example);
        out.push_str("\"\n");
    }
    out.push('\n');

    out.push_str(
        "*Constraints* Don't limit yourself to these example prompts. The music piece should \
         be coherent and have a sense of unity. Describe your thought process for the \
         composition, followed by the breakdown of the different parts. The following are \
         important constraints that your prompts must satisfy:\n",
    );
    for (i, rule) in config.rule_texts.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, rule));
    }
    out.push('\n');

    out.push_str(&format!(
        "*Request Part 1* Come up with {} pieces, including the form and a description of \
         each part.",
        config.pieces_requested
    ));
    out
}

/// Builds the second request asking for the JSON breakdown in the plan wire
/// format.
pub fn build_followup_prompt(config: &PlannerConfig) -> String {
    format!(
        "*Request Part 2* Provide the details of the parts for each piece in JSON format: \
         {{ PART_NUMBER: [\"PROMPT\", LENGTH_IN_SECONDS, REFERENCED_PART], PART_NUMBER: \
         [\"PROMPT\", LENGTH_IN_SECONDS, REFERENCED_PART], ... }}\n\
         Emit one JSON object per piece, for all {} pieces. PART_NUMBER starts at 1 and counts \
         up without gaps. The LENGTH_IN_SECONDS values of each piece must sum to exactly {} \
         seconds. REFERENCED_PART is the number of an earlier part whose material the part \
         varies, or null when the part stands alone.",
        config.pieces_requested,
        fmt_seconds(config.total_length_s)
    )
}

/// Extracts every maximal well-formed JSON object whose keys are all
/// numeric strings, in order of appearance. Prose and code fences around
/// the objects are dropped.
pub fn extract_plan_json(reply: &str) -> Result<Vec<String>, PlannerError> {
    let bytes = reply.as_bytes();
    let mut found = Vec::new();
    let mut pos = 0;

    while let Some(rel) = bytes[pos..].iter().position(|&b| b == b'{') {
        let start = pos + rel;
        match balanced_object_end(bytes, start) {
            Some(end) => {
                let candidate = &reply[start..=end];
                if is_numeric_keyed_object(candidate) {
                    found.push(candidate.to_string());
                    pos = end + 1;
                } else {
                    // Rescan inside: a qualifying object may be nested.
                    pos = start + 1;
                }
            }
            None => pos = start + 1,
        }
    }

    if found.is_empty() {
        return Err(PlannerError::NoPlanJson);
    }
    Ok(found)
}

// Byte index of the brace closing the object opened at `start`, honoring
// strings and escapes.
fn balanced_object_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn is_numeric_keyed_object(candidate: &str) -> bool {
    match serde_json::from_str::<serde_json::Value>(candidate) {
        Ok(serde_json::Value::Object(map)) => {
            !map.is_empty() && map.keys().all(|k| k.trim().parse::<u32>().is_ok())
        }
        _ => false,
    }
}

/// Outcome of a planning session.
#[derive(Debug)]
pub struct PlannerResult {
    /// Plans that passed validation, in extraction order.
    pub plans: Vec<FormPlan>,
    pub raw_transcript: ChatTranscript,
    /// Extracted candidates still invalid when retries ran out, with their
    /// violations.
    pub rejected: Vec<(String, Vec<String>)>,
}

fn send_with_retries(
    client: &dyn ChatClient,
    transcript: &[ChatMessage],
    max_retries: usize,
) -> Result<String, PlannerError> {
    let mut last = String::new();
    for _ in 0..=max_retries {
        match client.complete(transcript) {
            Ok(reply) => return Ok(reply),
            Err(e) => last = e.to_string(),
        }
    }
    Err(PlannerError::Transport {
        attempts: max_retries + 1,
        last,
    })
}

// Parse + validate one extracted candidate.
fn check_candidate(raw: &str, constraints: &PlanConstraints) -> Result<FormPlan, Vec<String>> {
    match parse_plan(raw) {
        Ok(plan) => {
            let violations = validate_plan(&plan, constraints);
            if violations.is_empty() {
                Ok(plan)
            } else {
                Err(violations)
            }
        }
        Err(e) => Err(vec![e.to_string()]),
    }
}

/// Runs the two-request protocol and corrective retries against a client.
///
/// Every plan in the result passes [`validate_plan`] under the config's
/// constraints; invalid candidates trigger a follow-up naming the
/// violations, up to `max_retries` times.
pub fn request_plans(
    client: &dyn ChatClient,
    config: &PlannerConfig,
) -> Result<PlannerResult, PlannerError> {
    config.validate()?;

    let mut transcript: Vec<ChatMessage> = Vec::new();
    transcript.push(ChatMessage::user(build_instruction_prompt(config)));
    let reply1 = send_with_retries(client, &transcript, config.max_retries)?;
    transcript.push(ChatMessage::assistant(reply1));

    transcript.push(ChatMessage::user(build_followup_prompt(config)));
    let reply2 = send_with_retries(client, &transcript, config.max_retries)?;
    transcript.push(ChatMessage::assistant(reply2.clone()));

    let mut plans: Vec<FormPlan> = Vec::new();
    let mut pending: Vec<(String, Vec<String>)> = Vec::new();

    let ingest = |reply: &str, plans: &mut Vec<FormPlan>| -> Vec<(String, Vec<String>)> {
        let mut invalid = Vec::new();
        match extract_plan_json(reply) {
            Ok(candidates) => {
                for raw in candidates {
                    match check_candidate(&raw, &config.constraints) {
                        Ok(plan) => plans.push(plan),
                        Err(violations) => invalid.push((raw, violations)),
                    }
                }
            }
            Err(PlannerError::NoPlanJson) => {
                invalid.push((reply.to_string(), vec!["no plan JSON found".to_string()]));
            }
            Err(_) => unreachable!("extract_plan_json only fails with NoPlanJson"),
        }
        invalid
    };

    pending.extend(ingest(&reply2, &mut plans));

    let mut retries = 0;
    while !pending.is_empty() && retries < config.max_retries {
        let mut correction = String::from("Some pieces were invalid:\n");
        for (i, (_, violations)) in pending.iter().enumerate() {
            correction.push_str(&format!("Piece {}: {}\n", i + 1, violations.join("; ")));
        }
        correction.push_str(
            "Resend corrected JSON for each invalid piece, one object per piece, in the same \
             format.",
        );
        transcript.push(ChatMessage::user(correction));
        let reply = send_with_retries(client, &transcript, config.max_retries)?;
        transcript.push(ChatMessage::assistant(reply.clone()));

        pending = ingest(&reply, &mut plans);
        retries += 1;
    }

    if plans.is_empty() {
        return Err(PlannerError::NoValidPlans(retries));
    }

    Ok(PlannerResult {
        plans,
        raw_transcript: ChatTranscript(transcript),
        rejected: pending,
    })
}
