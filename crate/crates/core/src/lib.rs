//! Polyphonic piano transcription with an onset stack, a frame stack and
//! local additive attention over time.
//!
//! The pieces, in pipeline order:
//!
//! - [`dataio`]: audio and MIDI I/O, label rolls, the synthetic piano
//!   renderer and dataset manifests.
//! - [`frontend`]: log-mel spectrograms.
//! - [`model`]: the full network, its ablations and the linear and
//!   convolutional probes, on top of the `oaf-autograd` tape.
//! - [`training`]: batching, BCE losses, Adam and resumable runs.
//! - [`inference`]: thresholding, rule-based note decoding, MIDI export.
//! - [`evaluation`]: frame, note and note-with-offset scores, the
//!   signed-rank test and attention heatmaps.
//! - [`experiment`]: ablation tables, window sweeps and attention-target
//!   comparisons driven by one TOML file.
//!
//! The `examples/` directory has one runnable program per capability.

pub mod arrays;
pub mod corpus;
pub mod dataio;
pub mod evaluation;
pub mod experiment;
pub mod error;
pub mod frontend;
pub mod inference;
pub mod model;
pub mod training;

pub use error::{Error, Result};
