//! Deterministic random-number streams.
//!
//! Every stochastic routine in this crate takes an explicit [`RngStream`].
//! Streams are keyed by a 64-bit seed plus a 64-bit stream id, so a master
//! seed can be split into independent per-replica (or per-index) streams
//! without any shared mutable state. Two streams with the same `(seed,
//! domain, id)` always produce the same draws, on any thread schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Domain tags keep stream families (thermal noise, disorder, phases, ...)
/// on disjoint keys even when the user passes the same seed everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    Thermal,
    Disorder,
    Moments,
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::Thermal => 0x7468_6572_6d61_6c00,
            StreamDomain::Disorder => 0x6469_736f_7264_6572,
            StreamDomain::Moments => 0x6d6f_6d65_6e74_7300,
        }
    }
}

/// SplitMix64 step; used only to derive well-separated ChaCha keys.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A caller-owned random stream. Cheap to create; never shared.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    /// Stream `id` within the `domain` family derived from `seed`.
    pub fn new(seed: u64, domain: StreamDomain, id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ domain.tag()));
        rng.set_stream(id);
        RngStream { rng }
    }

    pub fn gen_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn gen_range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.gen::<f64>()
    }

    pub fn gen_normal(&mut self) -> f64 {
        use rand_distr::StandardNormal;
        self.rng.sample(StandardNormal)
    }

    pub fn gen_u64(&mut self) -> u64 {
        self.rng.gen::<u64>()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
