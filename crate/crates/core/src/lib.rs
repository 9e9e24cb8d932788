//! Feature selection by searching a permutation-invariant embedding space of
//! feature subsets.

pub mod codec;
pub mod collector;
pub mod data;
pub mod diff;
pub mod error;
pub mod forest;
pub mod pipeline;
pub mod rng;
pub mod search;
pub mod subset;
pub mod synth;

pub use error::{CapsError, Result};
pub use subset::FeatureSubset;
