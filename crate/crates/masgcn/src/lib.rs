//! Multi-view attention syntactic graph convolutional network for
//! aspect-based sentiment analysis.
//!
//! The crate is organized as a pipeline: [`corpus`] loads annotated
//! sentences and builds vocabularies, [`syntax`] derives dependency-tree
//! distance and type structure, [`encoder`] produces contextual token
//! encodings, [`views`] assembles the per-view attention matrices and runs
//! graph convolution, [`objective`] computes the training losses, and
//! [`harness`] ties everything into train/eval/ablate/sweep entry points.

pub mod autodiff;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod model;
pub mod objective;
pub mod syntax;
pub mod synth;
pub mod views;

pub use error::{Error, Result};
