//! Separation metrics, permutation-invariant SI-SNR, speaker embedders and
//! the combined training loss.

pub mod embedder;
pub mod loss;
pub mod metrics;
pub mod pit;

pub use embedder::{MelStatConfig, MelStatEmbedder, PrecomputedEmbedder, SpeakerEmbedder};
pub use loss::{l_spk, l_spk_embeddings, total_loss, total_loss_node, LossBreakdown, LossNodes};
pub use metrics::{sdr, sdri, si_snr, si_snri};
pub use pit::{pit_si_snr, PitResult};
