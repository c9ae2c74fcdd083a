//! Implicit-feedback recommenders with continuous-time factors.
//!
//! The crate covers the full pipeline: event-log ingestion and temporal
//! splits ([`dataset`]), dense numerics ([`linalg`], [`legendre`]), the
//! model family trained by alternating least squares ([`models`]),
//! prediction-time adaptations ([`adaptations`]), leave-one-out evaluation
//! ([`evaluation`]) and a synthetic event generator ([`synth`]).

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptations;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod legendre;
pub mod linalg;
pub mod models;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};
