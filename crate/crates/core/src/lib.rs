//! Anomaly detection for step-wise sensor traces.
//!
//! The pipeline turns a raw multivariate trace into per-step scalogram
//! images (min-max scaling, penalized least-squares baseline removal,
//! peak detection, windowing, Mexican-hat CWT), classifies those images
//! with a compact CNN trained from scratch, and scores reference/query
//! window pairs with a weight-shared Siamese head whose similarity is
//! the dot product of the two class-probability vectors.

pub mod config;
pub mod cwt;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pentadiag;
pub mod preprocess;
pub mod siamese;
pub mod synth;
pub mod trace;
pub mod viz;

pub use error::{Error, Result};
