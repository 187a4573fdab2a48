//! A desk-scale laboratory for keyed green-list text watermarks and the
//! attacks that live below them, in the sampler's entropy stream.
//!
//! The pieces: a deterministic synthetic token model with known per-step
//! statistics, pluggable entropy sources (an honest PRNG, an
//! attacker-controlled clone of it, and an OS-entropy stand-in for a
//! hardware generator), three keyed watermarking schemes, a PRNG-layer
//! attack with key-aware, key-blind, and draw-steering variants plus a
//! token-editing baseline, a six-detector stealth suite, and an experiment
//! harness that drives the full comparison grids.
//!
//! Everything except the OS-entropy source is bit-reproducible from seeds.

pub mod attack;
pub mod config;
pub mod detect;
pub mod entropy;
pub mod error;
pub mod experiment;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod verify;
pub mod watermark;

pub use attack::{AttackConfig, AttackMode, DefenseScope};
pub use detect::{DetectorReport, ReferenceStats};
pub use entropy::{EntropySource, SourceKind};
pub use error::{Error, Result};
pub use model::{TokenModel, Vocabulary};
pub use pipeline::{PipelineConfig, SequenceRecord};
pub use watermark::{WatermarkConfig, WatermarkScheme};
