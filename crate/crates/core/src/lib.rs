// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Simulator for federated training of a differentially private GAN used to
//! augment a minority class, followed by federated classification under IID
//! and label-skewed client data.

pub mod classifier;
pub mod data;
pub mod dp;
pub mod error;
pub mod fed;
pub mod gan;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
