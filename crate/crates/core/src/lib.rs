//! Multimodal neural machine translation at desk scale.
//!
//! The crate provides a small reverse-mode differentiation engine, the
//! recurrent building blocks of an attentive encoder-decoder (GRU cells,
//! bidirectional encoders, additive attention, conditional GRU decoding with
//! flat or hierarchical combination of text and image contexts), model
//! assemblies, beam search with length penalty, evaluation metrics, data
//! selection with a character-level language model, and training with Adam
//! and self-critical sequence training.

pub mod data;
pub mod decoding;
pub mod error;
pub mod exec;
pub mod layers;
pub mod metrics;
pub mod models;
pub mod selection;
pub mod tensor;
pub mod training;

pub use error::{Error, FormatError, Result};
pub use tensor::{GradientMap, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
