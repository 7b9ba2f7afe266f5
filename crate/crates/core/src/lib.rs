//! Hierarchical sexism classification toolkit.
//!
//! Corpus handling, text cleaning, augmentation, a word-vector baseline,
//! pooled encoders with a trainable head, blending and macro-F1 evaluation.

pub mod augment;
pub mod baseline;
pub mod corpus;
pub mod encoders;
pub mod eval;
pub mod head;
pub mod math;
pub mod pipeline;
pub mod textclean;
pub mod train;
