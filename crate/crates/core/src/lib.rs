//! Form-structured music generation toolkit.
//!
//! The pipeline has three legs:
//!
//! 1. **Planning** — an LLM is prompted (in-context, multishot) to design song
//!    forms and emit a JSON breakdown of parts ([`planner`], [`form_plan`]).
//! 2. **Generation** — a plan compiles to a per-step conditioning schedule
//!    that drives an autoregressive token sampler with classifier-free
//!    guidance, temperature sampling, cross-part distribution blending and
//!    decaying audio-prompt conditioning ([`form_plan`], [`sampler`]).
//!    Tokens render to audio through a toy additive synthesizer, or the same
//!    schedule can drive a remote text-to-music server ([`synth`]).
//! 3. **Evaluation** — fused self-similarity matrices quantify musical
//!    structure, and a Fréchet distance over their downsampled upper
//!    triangles compares corpora ([`structure_eval`]).

pub mod form_plan;
pub mod planner;
pub mod sampler;
pub mod structure_eval;
pub mod synth;

pub use form_plan::{
    compile_schedule, parse_plan, serialize_plan, validate_plan, ConditioningSchedule, FormPlan,
    Part, PlanConstraints, ScheduleStep,
};
pub use sampler::{SamplerParams, TokenSequence, ToyTokenModel};
pub use synth::AudioBuffer;
