//! Test-time scaling engine for multi-view spatial reasoning.
//!
//! Given a single image and a multiple-choice spatial question, the engine
//! imagines egocentric camera trajectories through a pluggable world model,
//! scores the imagined frames with an interchangeable verifier, keeps the
//! best frames in a global evidence buffer, and answers the question from
//! that evidence. A deterministic symbolic scene oracle stands in for the
//! world model and the VLM in tests, making every stage exactly checkable.

pub mod analytics;
pub mod calibration;
pub mod client;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod oracle;
pub mod pose;
pub mod prompts;
pub mod scene;
pub mod search;
pub mod store;
pub mod transcript;
pub mod util;
pub mod verifiers;
pub mod world;

pub use error::{Error, Result};
