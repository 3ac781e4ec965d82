//! Reproducible random streams.
//!
//! Every replication owns one [`RngStream`]. Streams are ChaCha8 generators
//! keyed by `(master_seed, condition_id)` with the replication index as the
//! ChaCha stream number, so a draw depends only on its seed path and never on
//! scheduling order. Normal variates use the `rand_distr` ziggurat sampler;
//! changing that sampler changes every generated sample bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const DOMAIN_TAG: &[u8; 16] = b"rmlab/stream/v1\0";

/// Anything that yields standard normal variates.
pub trait NormalSource {
    fn next_normal(&mut self) -> f64;
}

#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    master_seed: u64,
    condition_id: u64,
    rep_index: u64,
}

impl RngStream {
    pub fn seed_path(&self) -> (u64, u64, u64) {
        (self.master_seed, self.condition_id, self.rep_index)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

impl NormalSource for RngStream {
    fn next_normal(&mut self) -> f64 {
        std_normal(self)
    }
}

/// Builds the stream for one replication of one condition.
pub fn derive_stream(master_seed: u64, condition_id: u64, rep_index: u64) -> RngStream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&condition_id.to_le_bytes());
    key[16..].copy_from_slice(DOMAIN_TAG);
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(rep_index);
    RngStream {
        rng,
        master_seed,
        condition_id,
        rep_index,
    }
}

pub fn std_normal(rng: &mut RngStream) -> f64 {
    rng.rng.sample(StandardNormal)
}
