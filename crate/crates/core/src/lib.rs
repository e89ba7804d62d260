//! Unsupervised outlier detection for partial multi-view data.
//!
//! Each view gets its own autoencoder. Training combines reconstruction,
//! an outlier-aware cross-view contrastive loss with a memory bank of
//! suspected outliers, a neighbor-alignment contrastive loss and a
//! spreading regularizer. Missing views are imputed in latent space from
//! cross-view neighbor relations, and instances are scored by reconstruction
//! error plus cross-view inconsistency.

pub mod autoencoder;
pub mod datakit;
pub mod detection;
pub mod error;
pub mod imputation;
pub mod neighbors;
pub mod numeric;
pub mod objectives;
pub mod training;

pub use error::{Error, Result};
pub use numeric::{Matrix, RngStream};
