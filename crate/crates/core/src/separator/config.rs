use serde::{Deserialize, Serialize};

use crate::frontend::{FrontendConfig, DEFAULT_SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Exponentially weighted moving average over block outputs.
    Mbfa,
    Sum,
    /// Channel concatenation followed by a pointwise projection back to N.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerType {
    SeConformer,
    Transformer,
}

/// Architecture hyperparameters of the masking network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
/// Absent fields deserialize to the [`SeparatorConfig::desk`] values.
#[serde(default, deny_unknown_fields)]
pub struct SeparatorConfig {
    /// N, encoder filters and model width.
    pub channels: usize,
    /// K, frames per chunk (even).
    pub chunk_size: usize,
    /// P, number of dual-path blocks.
    pub num_blocks: usize,
    /// m, intra-chunk layers per block.
    pub intra_layers: usize,
    /// n, inter-chunk layers per block.
    pub inter_layers: usize,
    pub heads: usize,
    /// Depthwise kernel of intra layer `l`; restarts in every block.
    pub kernel_ladder: Vec<usize>,
    pub se_reduction: usize,
    pub beta: f64,
    pub num_speakers: usize,
    pub fusion: Fusion,
    pub intra_type: LayerType,
    pub inter_type: LayerType,
    pub use_se_block: bool,
    pub ffn_mult: usize,
    pub encoder_kernel: usize,
    pub encoder_stride: usize,
    pub sample_rate: u32,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SeparatorConfig {
    /// Full-size model (m=4, n=6, N=256, K=250, P=3).
    pub fn paper() -> Self {
        Self {
            channels: 256,
            chunk_size: 250,
            num_blocks: 3,
            intra_layers: 4,
            inter_layers: 6,
            heads: 8,
            kernel_ladder: vec![13, 15, 17, 19],
            se_reduction: 4,
            beta: 0.6,
            num_speakers: 2,
            fusion: Fusion::Mbfa,
            intra_type: LayerType::SeConformer,
            inter_type: LayerType::Transformer,
            use_se_block: true,
            ffn_mult: 4,
            encoder_kernel: 16,
            encoder_stride: 8,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }

    /// The large variant (m = n = 8).
    pub fn paper_large() -> Self {
        Self {
            intra_layers: 8,
            inter_layers: 8,
            kernel_ladder: vec![13, 15, 17, 19, 21, 23, 25, 27],
            ..Self::paper()
        }
    }

    /// Scaled-down model that trains on one CPU core.
    pub fn desk() -> Self {
        Self {
            channels: 32,
            chunk_size: 20,
            num_blocks: 2,
            intra_layers: 2,
            inter_layers: 2,
            heads: 4,
            kernel_ladder: vec![3, 5],
            ..Self::paper()
        }
    }

    /// Smallest configuration used for whole-network gradient checks.
    pub fn tiny() -> Self {
        Self { channels: 8, chunk_size: 10, heads: 2, ..Self::desk() }
    }

    pub fn frontend(&self) -> FrontendConfig {
        FrontendConfig { channels: self.channels, kernel: self.encoder_kernel, stride: self.encoder_stride }
    }

    /// Kernel for inter layer `l` when inter layers are SE-Conformers.
    pub fn inter_kernel(&self, layer: usize) -> usize {
        self.kernel_ladder[layer.min(self.kernel_ladder.len() - 1)]
    }

    /// Every violated invariant, one message per field.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        check(self.channels > 0, "model.channels must be > 0".into());
        check(
            self.chunk_size >= 2 && self.chunk_size % 2 == 0,
            format!("model.chunk_size must be even and >= 2, got {}", self.chunk_size),
        );
        check(self.num_blocks >= 1, "model.num_blocks must be >= 1".into());
        check(self.intra_layers >= 1, "model.intra_layers must be >= 1".into());
        check(self.inter_layers >= 1, "model.inter_layers must be >= 1".into());
        check(
            self.heads >= 1 && self.channels % self.heads.max(1) == 0,
            format!("model.heads ({}) must divide model.channels ({})", self.heads, self.channels),
        );
        check(
            self.kernel_ladder.len() == self.intra_layers,
            format!(
                "model.kernel_ladder has {} entries, expected intra_layers = {}",
                self.kernel_ladder.len(),
                self.intra_layers
            ),
        );
        check(
            self.kernel_ladder.iter().all(|k| k % 2 == 1),
            format!("model.kernel_ladder entries must be odd, got {:?}", self.kernel_ladder),
        );
        check(
            self.kernel_ladder.windows(2).all(|w| w[0] < w[1]),
            format!("model.kernel_ladder must be strictly increasing, got {:?}", self.kernel_ladder),
        );
        check(
            self.se_reduction >= 1 && self.channels % self.se_reduction.max(1) == 0,
            format!("model.se_reduction ({}) must divide model.channels ({})", self.se_reduction, self.channels),
        );
        check(self.beta > 0.0 && self.beta <= 1.0, format!("model.beta must lie in (0, 1], got {}", self.beta));
        check(self.num_speakers >= 1, "model.num_speakers must be >= 1".into());
        check(self.ffn_mult >= 1, "model.ffn_mult must be >= 1".into());
        check(self.encoder_kernel >= 1, "model.encoder_kernel must be >= 1".into());
        check(self.encoder_stride >= 1, "model.encoder_stride must be >= 1".into());
        check(self.sample_rate > 0, "model.sample_rate must be > 0".into());
        errs
    }
}
