//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by a [`StreamKey`]; the same
//! key always yields the same ChaCha8 stream regardless of which worker
//! consumes it or in which order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose of a stream, so that e.g. the noise of path 3 and the bootstrap
/// resample 3 never share bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Noise = 1,
    Bootstrap = 2,
    Ellipticity = 3,
    Sampling = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub master: u64,
    pub domain: Domain,
    pub path: u64,
    pub step: u64,
    pub channel: u64,
}

impl StreamKey {
    pub fn new(master: u64, domain: Domain, path: u64) -> Self {
        Self { master, domain, path, step: 0, channel: 0 }
    }

    pub fn noise(master: u64, path: u64, step: usize, channel: usize) -> Self {
        Self { master, domain: Domain::Noise, path, step: step as u64, channel: channel as u64 }
    }

    pub fn at(self, step: usize, channel: usize) -> Self {
        Self { step: step as u64, channel: channel as u64, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.master.to_le_bytes());
        seed[8..16].copy_from_slice(&self.path.to_le_bytes());
        seed[16..24].copy_from_slice(&(self.domain as u64).to_le_bytes());
        seed[24..32].copy_from_slice(&self.channel.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.step);
        rng
    }
}
