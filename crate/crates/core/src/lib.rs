//! Pooling-invariant dictionary learning.
//!
//! A large patch dictionary is learned with spherical K-means, images are
//! threshold-encoded and spatially pooled, and a compact sub-dictionary is
//! chosen by affinity propagation over the covariance of pooled responses.
//! The selected features can be rescaled with a Nyström-derived `K × K`
//! transform; PCA on the full pooled features serves as a reference bound.

pub mod bench;
pub mod classifier;
pub mod cli;
pub mod datasets;
pub mod dictionary;
pub mod encoder;
pub mod error;
pub mod linalg;
pub mod model;
pub mod nystrom;
pub mod patches;
pub mod selection;
pub mod viz;

pub use error::{PdlError, Result};
