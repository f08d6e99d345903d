//! Seed derivation.
//!
//! Every random stream in the toolkit is a ChaCha8 generator keyed by
//! `sha256(master_seed_le || purpose || index_le)`. Streams for different
//! purposes (latents, label smoothing, flips, shuffles, ...) never share
//! state, so adding draws to one stream cannot perturb another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives an independent stream for `(master, purpose, index)`.
pub fn derive(master: u64, purpose: &str, index: u64) -> Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Derives a child master seed, for handing a sub-stage its own seed space.
pub fn derive_seed(master: u64, purpose: &str, index: u64) -> u64 {
    use rand::RngCore;
    derive(master, purpose, index).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = derive(7, "latent", 3).next_u64();
        assert_eq!(a, derive(7, "latent", 3).next_u64());
        assert_ne!(a, derive(7, "latent", 4).next_u64());
        assert_ne!(a, derive(7, "flip", 3).next_u64());
        assert_ne!(a, derive(8, "latent", 3).next_u64());
    }
}
