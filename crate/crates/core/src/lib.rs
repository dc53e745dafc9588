//! Bag-of-local-feature transformer for face-manipulation detection.
//!
//! An image is cut into a bag of non-overlapping patches, each patch is
//! embedded by a shared linear projection, and a stack of pre-norm
//! multi-head self-attention units relates the patches to each other before
//! a class token is read out by a linear classifier. The crate carries its own
//! small reverse-mode autodiff engine, a seeded synthetic forgery generator,
//! the training loop, ROC-AUC metrics and attention rollout.

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
