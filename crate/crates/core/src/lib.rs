//! Semi-supervised long-tailed recognition by alternate sampling.
//!
//! The crate is organised bottom-up:
//!
//! * [`netcore`] – a small dense network (feature embedding plus two linear
//!   softmax heads), hand-written backpropagation and SGD.
//! * [`datagen`] – long-tailed class profiles, synthetic Gaussian tasks,
//!   CIFAR-10 binary ingestion and many/medium/few split bookkeeping.
//! * [`sampling`] – random, class-balanced and mixed-union batch plans.
//! * [`losses`] – cross-entropy, temporal-consistency KL and the
//!   prediction memory holding last epoch's class probabilities.
//! * [`trainer`] – decoupled initialization, the three-stage alternate
//!   learning loop, the Pseudo-Label baseline and ablation variants.
//! * [`evalreport`] – accuracy metrics and report files.
//! * [`checkpoint`] – model serialization.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod evalreport;
pub mod fsutil;
pub mod losses;
pub mod netcore;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
