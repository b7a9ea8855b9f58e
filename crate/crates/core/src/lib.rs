//! Video quality-of-experience estimation from encrypted video-call traffic.
//!
//! The pipeline runs packet traces through a size-threshold media
//! classifier, aggregates per-slot traffic features, derives per-slot
//! ground truth from capture logs and image-quality scores, and fits
//! random forests that predict frame rate and spatial quality from traffic
//! alone. A synthetic session generator provides ground truth at desk
//! scale.

pub mod classify;
pub mod eval;
pub mod features;
pub mod ground_truth;
pub mod ingest;
pub mod num;
pub mod pipeline;
pub mod session;
pub mod stats;
pub mod synth;

pub use num::Real;

pub mod model;

pub type Forest = model::RandomForest<f64>;
pub type ForestF32 = model::RandomForest<f32>;
