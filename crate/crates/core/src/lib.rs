//! Per-frame expression recognition post-processing for video.
//!
//! The crate consumes per-frame logit streams emitted by one or more
//! classifiers and turns them into one expression label per frame:
//!
//! ```text
//! logit streams -> temporal smoothing -> softmax-sum fusion -> coarse/negative routing -> labels
//! ```
//!
//! * [`taxonomy`] holds the fine (8), coarse (5) and negative (4) label spaces.
//! * [`smoothing`] adds a centered windowed mean to every frame, in batch and
//!   streaming form.
//! * [`fusion`] sums per-model softmax outputs and decides by argmax.
//! * [`cascade`] routes frames through the coarse stage and, when the coarse
//!   decision is `Negative`, through the negative stage.
//! * [`metrics`] provides confusion matrices, macro-F1 and label flip rate.
//! * [`dataio`] reads and writes logit, annotation and prediction files.
//! * [`synthgen`] generates deterministic synthetic corpora and implements
//!   repeat-factor oversampling.
//! * [`corpus`] evaluates whole corpora and runs window/ensemble sweeps.
//! * [`exec`] dispatches per-video work onto rayon, or sequentially when the
//!   `parallel` feature is disabled.

pub mod cascade;
pub mod cli;
pub mod corpus;
pub mod dataio;
pub mod error;
pub mod exec;
pub mod fusion;
mod kv;
pub mod metrics;
pub mod smoothing;
pub mod synthgen;
pub mod taxonomy;

pub use cascade::{predict_video, CascadeConfig, DecidedBy, PipelineConfig, PredictionRecord, SmoothingStage};
pub use error::{Error, Result};
pub use exec::Execution;
pub use fusion::{decide, fuse, softmax, FusedScores, LogitFrame};
pub use metrics::{confusion, f1_report, flip_rate, ConfusionMatrix, F1Report};
pub use smoothing::{smooth_batch, SmoothingConfig, StreamingSmoother, VideoLogitStream};
pub use taxonomy::{CoarseLabel, ExpressionLabel, LabelScheme, NegativeLabel};
