//! Few-shot multi-hop reasoning over knowledge graphs.
//!
//! A MINERVA-style walking policy is trained with REINFORCE. Its
//! query-relation input comes from a meta-encoder (neighbor or path) that
//! reads a handful of support triples, and the whole model is meta-trained
//! with first-order MAML so it adapts to unseen relations in a few steps.
//!
//! Module map:
//!
//! - [`kg`]: triple loading and the background graph
//! - [`autodiff`]: reverse-mode engine, LSTM cell, optimizers, checkpoints
//! - [`reasoner`]: the walking MDP, policy and REINFORCE loss
//! - [`encoder`]: neighbor and path meta-encoders
//! - [`meta`]: task sampling, adaptation and the meta-update
//! - [`eval`]: beam decoding, ranking metrics and the fine-tuning protocol
//! - [`dataset`]: triple files plus relation splits
//! - [`synthetic`]: compositional toy graphs
//! - [`workbench`]: experiment config and the CLI commands

pub mod autodiff;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kg;
pub mod meta;
pub mod model;
pub mod reasoner;
pub mod synthetic;
pub mod workbench;

pub use error::{Error, Result};
