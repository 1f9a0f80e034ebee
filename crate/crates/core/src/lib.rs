//! Weakly-supervised sequence summarisation.
//!
//! A frozen sequence classifier scores partial summaries; a dueling double
//! deep Q-network learns to keep or discard frames one at a time, rewarded for
//! keeping the summary recognisable (globally at the end of an episode and
//! densely through changes in the true category's rank) and, optionally, for
//! diversity and representativeness. Summaries are evaluated against reference
//! frame sets with pairwise F-scores under k-fold cross-validation.

pub mod classifier;
pub mod dataset;
pub mod env;
pub mod error;
pub mod neural;
pub mod qnet;
pub mod rewards;
pub mod seed;
pub mod summary;
pub mod trainer;

pub use error::{Error, Result};
