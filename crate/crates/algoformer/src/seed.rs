//! Hierarchical, label-derived RNG streams.
//!
//! Every stream is a ChaCha8 generator keyed by
//! `SHA-256("algoformer-rng-v1" || master_le || label || index_le)`.
//! The derivation is stateless, so stream (master, label, index) is the
//! same no matter when or in what order it is drawn — per-prompt streams
//! split by prompt index are order-independent by construction, and
//! resuming a run needs only the master seed plus the step counter.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"algoformer-rng-v1";

/// Stream labels used by the harness.
pub mod labels {
    pub const INIT: &str = "init";
    pub const DATA: &str = "data";
    pub const EVAL: &str = "eval";
    pub const PHI: &str = "phi";
}

pub fn stream(master: u64, label: &str) -> ChaCha8Rng {
    stream_indexed(master, label, 0)
}

pub fn stream_indexed(master: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Stream for one prompt of one training/eval step.
pub fn prompt_stream(master: u64, label: &str, step: u64, prompt: u64) -> ChaCha8Rng {
    stream_indexed(master, label, step.wrapping_mul(0x1_0000_0000) | prompt)
}
