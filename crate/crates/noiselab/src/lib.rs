//! Label-noise laboratory for Gaussian mixtures under domain shift.
//!
//! - [`domain`]: shifted two-component mixtures, Bayes scores, mislabeling rates
//! - [`noise`]: source-model, margin-flip and symmetric noise; the region R
//! - [`losses`]: CE, MAE, RCE, GCE, SL, GJS, normalized losses, SR, ELR
//! - [`etp`]: gradient-descent dynamics on margin-flipped data
//! - [`bench`]: multiclass softmax training bench
//! - [`harness`]: configs, runners, CSV/JSON output, acceptance suite

pub mod bench;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod etp;
pub mod harness;
pub mod losses;
pub mod noise;
pub mod rng;
pub mod special;

pub use dataset::NoisyDataset;
pub use domain::{DomainSpec, McEstimate, Which};
pub use error::{Error, Result};
pub use losses::{ElrState, LossKind, LossSpec};
pub use noise::RegionRSpec;
