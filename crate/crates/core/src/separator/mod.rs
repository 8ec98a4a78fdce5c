//! The masking network between the encoder and decoder.

pub mod block;
pub mod config;
pub mod fusion;
pub mod layers;
pub mod model;

pub use config::{Fusion, LayerType, SeparatorConfig};
pub use fusion::{mbfa, mbfa_closed_form};
pub use model::{forward_graph, init_params, param_count, separate_forward, ForwardNodes};
