//! Time-domain two-path speech separation: a learned encoder/decoder around a
//! masking network of SE-Conformer (intra-chunk) and Transformer (inter-chunk)
//! blocks, fused across blocks with an exponentially weighted moving average,
//! trained with SI-SNR plus a speaker-similarity discriminative loss.

pub mod data;
pub mod error;
pub mod frontend;
pub mod nn;
pub mod objectives;
pub mod separator;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
