//! Soft-threshold factorized attention encoder.
//!
//! The crate provides, bottom-up:
//!
//! * [`tensor`] — a small deterministic f64 tensor core with reverse-mode
//!   differentiation and finite-difference gradient checking;
//! * [`attention`] — softmax and factorized token-mixing kernels, learned
//!   soft-threshold denoising, and exact FLOP accounting for both;
//! * [`encoder`] — the multi-level encoder: pooled positional encoding,
//!   attention/feed-forward blocks per level, and top-down aggregation;
//! * [`metrics`] — detection matching, average precision, and an error
//!   taxonomy over matched detections;
//! * [`bench`] — wall-clock microbenchmarks of the attention mechanisms;
//! * [`verify`] — a named-invariant self-check suite with deterministic
//!   reports;
//! * [`cli`] — the `stattn` command-line front end over all of the above.
//!
//! Every numeric routine is bit-reproducible: reductions run in a fixed
//! order, randomness comes only from caller-provided seeds, and reports of
//! the same seed are byte-identical across runs.

pub mod attention;
pub mod bench;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
