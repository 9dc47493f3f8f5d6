//! Model-compression toolkit for real-time stereo matching.
//!
//! Implements a lightweight disparity network (siamese feature pyramid,
//! channel-to-disparity cost volume, hourglass regression, soft-argmax)
//! together with its distill-then-prune training framework: logits-based
//! knowledge distillation with a temperature schedule, dependency-graph
//! structured channel pruning with L2 group importance, dataset ingestion,
//! EPE/D1 metrics, and parameter/FLOP accounting — all driven by one
//! declarative model description.

pub mod accounting;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;

pub use error::{Error, Result};
