//! Core algorithms for joint album event recognition and image curation.
//!
//! The crate is organized around the data flow of the joint system:
//!
//! - [`dataset`]: album records, multi-label vote aggregation, and the
//!   split-half consistency analysis.
//! - [`predictors`]: the three trainable reference predictors (per-image
//!   event classifier, LSTM sequence classifier, event-conditioned
//!   importance scorer) plus PCA preprocessing, all with handwritten
//!   gradients.
//! - [`fusion`]: the iterative curation-recognition procedure that
//!   alternately re-estimates the album event distribution and the
//!   per-image importance scores.
//! - [`metrics`]: curation metrics (MAP@t%, P@t%), recognition metrics
//!   (top-1 accuracy, macro F1), and cross-dataset confusion remapping.
//! - [`synth`]: a ground-truth-known synthetic album generator and vote
//!   simulator used as the evaluation oracle.
//!
//! Everything here is pure and deterministic given explicit seeds; file
//! formats, reports, and the CLI live in the companion `eventcure` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dataset;
pub mod fusion;
pub mod linalg;
pub mod metrics;
pub mod predictors;
pub mod rng;
pub mod synth;
