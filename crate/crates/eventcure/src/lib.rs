//! File formats, the test-split evaluation pipeline, and the plumbing behind
//! the `eventcure` binary. All algorithms live in [`eventcure_core`]; this
//! crate only moves data between disk and those algorithms.

pub use eventcure_core as core;

pub mod io;
pub mod pipeline;
