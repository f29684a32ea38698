//! Discovery of high-bias intersectional subgroups over binary sensitive
//! attributes.
//!
//! A bias-guided generative network is pretrained as a VAE over observed
//! attribute vectors and then fine-tuned with a score-function estimator so
//! that its samples concentrate on groups where the audited model's loss is
//! high. Enumeration and regression-tree search serve as baselines, and
//! [`metrics`] scores any generated or discovered set against a reference
//! table.

pub mod attrspace;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod search;
pub mod stats;

pub use error::{Error, Result};
