//! Self-supervised video pretraining on space-time tubes, desk scale.
//!
//! The pipeline: deterministic synthetic clips of moving shapes, tube
//! tokenization with high-ratio random masking, a small encoder-decoder
//! video model trained against either masked pixels, raw projection
//! features, or Sinkhorn-clustered assignment targets, and frozen-feature
//! evaluation by linear probing and unsupervised object segmentation.
//!
//! See the `book/` guide for a narrative walk-through of each component.

pub mod data_io;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod nets;
pub mod objectives;
pub mod optim;
pub mod prototypes;
pub mod rng;
pub mod sinkhorn;
pub mod synthetic;
pub mod tokenize;
pub mod tape;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};

// Keep the book's code in lockstep with the library: every fenced Rust
// snippet in these chapters runs under `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/synthetic-video.md")]
    mod synthetic_video {}
    #[doc = include_str!("../../../book/src/tubes-and-masking.md")]
    mod tubes_and_masking {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/sinkhorn.md")]
    mod sinkhorn {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
