//! Desk-scale laboratory for gender-bias mitigation in image captioning.
//!
//! The crate generates biased synthetic caption corpora with person masks,
//! trains a small convolutional encoder / GRU decoder captioner under the
//! Appearance Confusion and Confident losses (plus the usual baselines), and
//! scores the results with gender error, ratio, outcome-divergence, bias
//! amplification and pointing-game metrics.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod saliency;
pub mod training;

pub use error::{Error, Result};
