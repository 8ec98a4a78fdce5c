//! Differentiable numeric building blocks.

mod attention;
mod conv;
pub mod gradcheck;
mod graph;
mod norm;
pub mod params;
mod pointwise;
mod reduce;
pub mod shape;

pub use gradcheck::{compare_gradients, grad_check, grad_check_with, GradCheckOptions, GradReport};
pub use graph::{Gradients, Graph, NodeId, Unary};
pub use params::{init, ModelParams, ParamTensor};
pub use reduce::{SI_SNR_CAP_DB, SI_SNR_EPS};
pub use shape::ChunkGeometry;

pub(crate) use reduce::si_snr_parts;
