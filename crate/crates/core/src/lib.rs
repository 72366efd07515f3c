//! Unsupervised rhythm and voice conversion in self-supervised feature space.
//!
//! The crate works on frame sequences produced by an external speech encoder
//! (stored as RNVF files, see [`featstore`]):
//!
//! * [`segmenter`] learns silence / sonorant / obstruent codewords from a
//!   target speaker and splits utterances into runs of those types;
//! * [`rhythm`] models a speaker's speaking rate and per-type segment
//!   durations and re-times utterances toward a target speaker;
//! * [`knnvc`] replaces each frame with an average of its nearest
//!   target-speaker frames;
//! * [`pipeline`] ties these together over corpus manifests and scores
//!   recognizer output with WER.

pub mod error;
pub mod featstore;
pub mod knnvc;
pub mod pipeline;
pub mod rhythm;
pub mod segmenter;
pub mod signals;

pub use error::{Error, Result};
pub use featstore::{read_manifest, read_rnvf, write_rnvf, FeatureSequence, FrameFlags, Severity, UtteranceRecord};
pub use knnvc::{build_pool, convert_sequence, MatchingPool};
pub use pipeline::{run_conversion, score_wer, ConversionModels, ConversionSetup};
pub use rhythm::{convert_fine, convert_global, GammaParams, RhythmModel};
pub use segmenter::{SegmenterModel, Segmentation, SpeechType};
