//! Learned and classical landscape features for continuous single- and
//! multi-objective black-box optimization.
//!
//! The pipeline: random problems ([`randgen`]) are sampled ([`sampling`]),
//! turned into kNN token sets ([`tokenizer`]) and fed to a set transformer
//! ([`model`]) that is pretrained with a contrastive student/teacher
//! objective ([`pretrain`]). The resulting features are evaluated against
//! classical ELA ([`ela`]) on property prediction and algorithm selection
//! ([`downstream`]).

pub mod benchmarks;
pub mod cli;
pub mod downstream;
pub mod ela;
pub mod error;
pub mod linalg;
pub mod model;
pub mod pretrain;
pub mod problem;
pub mod randgen;
pub mod sampling;
pub mod tensor;
pub mod tokenizer;
pub mod util;

pub use error::{Error, Result};
pub use problem::{Bounds, Objective, Origin, ProblemInstance, Sample};
pub use util::Rng;
