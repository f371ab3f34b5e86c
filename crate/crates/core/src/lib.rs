//! Sparse causal intervention lab.
//!
//! Exact backdoor adjustment on small discrete causal models, prototype
//! de-confounding modules (logit-space and feature-space), a toy sequential
//! driving planner built on a small autodiff engine, and the experiment
//! harness that compares baseline and de-confounded planners.

pub mod causal;
pub mod dictionary;
pub mod error;
pub mod harness;
pub mod intervention;
pub mod params;
pub mod planner;
pub mod seeding;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
