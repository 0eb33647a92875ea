//! Assessment engine for isometric exercises recorded as 2D pose keypoints.
//!
//! The pipeline: [`segment`] finds repetitions in a keypoint stream,
//! [`features`] turns each rep into dominant joint-angle bins,
//! [`classifier`] labels the rep as correct or a known mistake, and
//! [`metrics`] scores a classifier with weighted F1 and the three-part
//! confidence-aware metric. [`service`] and [`protocol`] run the same steps
//! live, one rep at a time.

pub mod classifier;
pub mod dataset;
pub mod exec;
pub mod exercise;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod protocol;
pub mod segment;
pub mod service;
pub mod synth;

pub use classifier::{ClassPrediction, GradeLevel, MlpModel};
pub use exec::Execution;
pub use exercise::ExerciseConfig;
pub use pose::{ClipSequence, KeypointFrame, SkeletonProfile};
pub use segment::{RepSegment, SegmenterConfig, SignalSource};
pub use synth::Archetype;
