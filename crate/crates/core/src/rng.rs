//! Deterministic splittable random streams.
//!
//! Every random decision in the crate draws from a [`Stream`] identified by a
//! seed plus a chain of labels: drafting draws from a stream keyed by
//! `(round, depth, node index)`, verification from a per-round stream, and
//! the benchmark harness derives per-run seeds from
//! `(master, prompt_idx, rep, strategy_idx)`. Deriving a child stream does
//! not mutate the parent, so results are independent of traversal or
//! parallelization order.
//!
//! The generator is a SplitMix64 counter stream: child derivation mixes the
//! parent id with the label, and each output applies the SplitMix64
//! finalizer to `id ^ counter`. This is fully specified here so other
//! implementations can reproduce the same draws bit-for-bit.

/// An independent pseudo-random sequence with cheap deterministic splitting.
///
/// The upper 64 bits of `state` hold the stream id, the lower 64 bits the
/// rolling output counter.
#[derive(Clone, Debug)]
pub struct Stream {
    state: u128,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl Stream {
    /// Root stream for `(seed, label)`.
    pub fn named(seed: u64, label: &str) -> Self {
        let id = mix64(mix64(seed ^ GOLDEN) ^ fnv1a64(label.as_bytes()));
        Self::from_id(id)
    }

    /// Child stream identified by a string label. Does not advance `self`.
    pub fn derive(&self, label: &str) -> Self {
        let parent = (self.state >> 64) as u64;
        Self::from_id(mix64(parent ^ fnv1a64(label.as_bytes())))
    }

    /// Child stream identified by a numeric key. Does not advance `self`.
    pub fn derive_u64(&self, key: u64) -> Self {
        let parent = (self.state >> 64) as u64;
        Self::from_id(mix64(parent ^ mix64(key ^ GOLDEN)))
    }

    fn from_id(id: u64) -> Self {
        let counter = mix64(id ^ 0xD134_2543_DE82_EF95);
        Self {
            state: (u128::from(id) << 64) | u128::from(counter),
        }
    }

    /// Advance the stream and return the next `u64` sample.
    pub fn next_u64(&mut self) -> u64 {
        let id = (self.state >> 64) as u64;
        let counter = (self.state as u64).wrapping_add(GOLDEN);
        self.state = (u128::from(id) << 64) | u128::from(counter);
        mix64(id ^ counter)
    }

    /// Uniform `f64` in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform integer in `[0, bound)` via 128-bit multiply reduction.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((u128::from(self.next_u64()) * u128::from(bound)) >> 64) as u64
    }

    /// Standard normal draw (Box-Muller; consumes two uniforms).
    pub fn next_gaussian(&mut self) -> f64 {
        // Guard against ln(0): shift u1 into (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// A source of uniform variates in `[0, 1)`.
///
/// Verification is generic over this so tests can drive it with scripted
/// values when enumerating outcome intervals exactly.
pub trait Randomness {
    fn next_unit(&mut self) -> f64;
}

impl Randomness for Stream {
    #[inline]
    fn next_unit(&mut self) -> f64 {
        self.next_f64()
    }
}
