//! Per-realization random streams.
//!
//! Every stream is keyed by `(master seed, realization index, label)` and
//! hashed with SHA-256 into a ChaCha seed, so adding realizations or streams
//! never perturbs existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// The random streams consumed by one realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Training,
    Validation,
    Features,
    Filter,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::Training, Stream::Validation, Stream::Features, Stream::Filter];

    pub fn label(self) -> &'static str {
        match self {
            Stream::Training => "training",
            Stream::Validation => "validation",
            Stream::Features => "features",
            Stream::Filter => "filter",
        }
    }
}

/// 32-byte seed for `(master, index, label)`.
pub fn derive_seed(master: u64, index: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"rafda-stream-v1");
    h.update(master.to_le_bytes());
    h.update(index.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

pub fn stream_rng(master: u64, index: u64, stream: Stream) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(derive_seed(master, index, stream.label()))
}

/// Short public identifier of a realization, recorded in result files.
pub fn realization_seed(master: u64, index: u64) -> u64 {
    let bytes = derive_seed(master, index, "realization");
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}
