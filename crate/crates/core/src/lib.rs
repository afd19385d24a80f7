//! Span-based named-entity recognition.
//!
//! Token vectors (contextual, static and character-CNN) feed a BiLSTM; two
//! FFNNs project every token into start and end representations, and a
//! biaffine scorer gives each `(start, end)` span a score per category. The
//! decoder picks the top-ranked non-clashing spans, with an extra
//! no-containment rule for flat annotation.
//!
//! Everything runs on [`autodiff`], a small reverse-mode tape over dense
//! `f64` tensors.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod scorer;
pub mod scores;
pub mod session;
pub mod span;
pub mod tensor;
pub mod train;
