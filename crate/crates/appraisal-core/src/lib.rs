//! Building blocks for predicting binary appraisal concepts (agency,
//! sociality) from short "happy moment" texts.
//!
//! The crate covers the full pipeline:
//!
//! - [`corpus`]: CSV loading, label validation, seeded train/dev splits.
//! - [`features`]: word n-gram bag-of-words and TF-IDF sparse vectors.
//! - [`linear`]: multinomial Naive Bayes, hinge/logistic linear trainers,
//!   and a majority-vote ensemble.
//! - [`embeddings`]: GloVe-format tables and pre-exported contextual
//!   vector files.
//! - [`tensor`]: a small dense-tensor engine with reverse-mode autodiff.
//! - [`neural`]: LSTM / BiLSTM encoders with optional additive
//!   self-attention, the training loop, and the layers/hidden grid.
//! - [`metrics`]: exact accuracy, positive-class F1, and rank-based AUC.
//! - [`report`]: attention heatmap HTML and word-importance rankings.
//!
//! Everything downstream of a seed is deterministic: equal seeds give
//! byte-identical splits, training trajectories, and reports.
//!
//! With the `parallel` feature (on by default) independent work such as
//! document vectorization, batch inference, and grid cells runs on a
//! rayon pool; without it the same entry points run sequentially.

pub mod container;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod linear;
pub mod metrics;
pub mod neural;
pub mod par;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};

/// Version string stamped into output directories.
pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
