//! Cluster-based dense retrieval with annealed cluster sampling, plus a
//! multi-round retrieve/think/answer loop with redundancy control, learned
//! local/web routing and curriculum reward utilities.

pub mod config;
pub mod curriculum;
pub mod dynamic_sampler;
pub mod embed;
pub mod harness;
pub mod error;
pub mod kmeans;
pub mod pipeline;
pub mod retrieval;
pub mod routing;
pub mod stie;
pub mod text;
pub mod transcript;
pub mod vector_index;

pub use error::{Error, Result};
