//! Self-training for generative dialogue state tracking with
//! purpose-preserving augmentation, runnable end to end on deterministic toy
//! model backends.
//!
//! The crate covers the full loop: few-shot corpus splitting, pseudo-labeling
//! with per-token confidence, top-k% selection, augmentation that never masks
//! belief-state tokens, the student pre-train/fine-tune schedule, and the
//! experiment CLI with sweeps over every knob of interest.

pub mod belief;
pub mod cli;
pub mod confidence;
pub mod config;
pub mod data;
pub mod metrics;
pub mod model;
pub mod ppaug;
pub mod rundir;
pub mod selftrain;
pub mod sweep;
pub mod synth;
pub mod toy;
pub mod util;

pub use belief::{BeliefParse, BeliefState, ParseIssue, SlotValue};
pub use data::{Dialogue, Example, Label, Speaker, Token, Turn, Utterance};
pub use metrics::EvalResult;
pub use model::{GenerationResult, GenerativeModel, ModelFactory, TrainHistory, TrainSchedule};
