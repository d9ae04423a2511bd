//! Differentially private optimizers for approximate stationary points.
//!
//! The crate is `no_std` with `alloc`. All floating-point math goes through
//! `libm`, and every random draw comes from a caller-supplied generator, so
//! a run is a pure function of its inputs and seed.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod jl;
pub mod linalg;
pub mod loss;
pub mod math;
pub mod privacy;
pub mod recursive;
pub mod sampling;
pub mod spiderboost;
pub mod tree;

pub use dataset::{Cursor, Dataset, FiniteDistribution, Sample};
pub use error::{Error, Result};
pub use loss::{Loss, LossConstants};
pub use privacy::{NoiseLedger, PrivacyBudget};
