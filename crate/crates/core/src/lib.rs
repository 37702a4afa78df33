//! Shared-trunk, multi-paradigm transformer pre-training at desk scale.
//!
//! A universal Transformer-XL trunk feeds two task-specific stacks: a
//! bidirectional one for understanding objectives and a causal one, with
//! segment recurrence, for generation. Around the model sit the corpus
//! pipeline, the five pre-training objectives, the progressive schedule,
//! and a zero-shot evaluation harness.

pub mod backbone;
pub mod datapipe;
pub mod error;
pub mod framework;
pub mod numerics;
pub mod run;
pub mod schedule;
pub mod tasks;
pub mod zeroshot;

pub use error::{Error, Result};
