//! Synthetic speakers and mixtures, wav files and manifests.

pub mod corpus;
pub mod manifest;
pub mod mix;
pub mod synth;
pub mod wav;

pub use corpus::{speaker_split, split_example, split_set, write_corpus, DataConfig, Split};
pub use manifest::{manifest_read, manifest_read_checked, manifest_write, MixtureRecord};
pub use mix::{dynamic_mix, mix, MixConfig, MixExample, Mixture, NoiseKind, NoiseSpec, Pairing};
pub use synth::{family_group, speaker_pool, synth_utterance, Family, SyntheticSpeaker};
pub use wav::{wav_read, wav_write};

/// Combines seed components with the SplitMix64 finalizer.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z = (z ^ p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
