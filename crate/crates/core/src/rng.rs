//! Counter-based random values.
//!
//! Every random number is a pure function of a seed and integer coordinates,
//! hashed with the SplitMix64 finalizer. Fields therefore come out identical
//! regardless of generation order or thread count.

use crate::lattice::Site;

/// Stream tags keep independent uses of the same coordinates apart.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stream {
    Conductance = 1,
    Correlation = 2,
    Boundary = 3,
    Source = 4,
    Polynomial = 5,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// 64 random bits for `(seed, stream, site, extra)`.
pub fn hash(seed: u64, stream: Stream, site: Site, extra: u64) -> u64 {
    let mut h = mix(seed.wrapping_add(GOLDEN));
    h = mix(h ^ (stream as u64).wrapping_mul(GOLDEN));
    for c in site.0 {
        h = mix(h.wrapping_add(c as u64).wrapping_add(GOLDEN));
    }
    mix(h ^ extra.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

/// Uniform value in `[0, 1)` with 53 random bits.
pub fn uniform(seed: u64, stream: Stream, site: Site, extra: u64) -> f64 {
    (hash(seed, stream, site, extra) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal value via Box–Muller on two hashed uniforms.
pub fn normal(seed: u64, stream: Stream, site: Site, extra: u64) -> f64 {
    let u1 = uniform(seed, stream, site, extra.wrapping_mul(2));
    let u2 = uniform(seed, stream, site, extra.wrapping_mul(2).wrapping_add(1));
    let r = (-2.0 * (1.0 - u1).ln()).sqrt();
    r * (2.0 * std::f64::consts::PI * u2).cos()
}
