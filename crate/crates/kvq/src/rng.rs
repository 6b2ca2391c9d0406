//! Deterministic pseudo-random number generation.
//!
//! Every randomized input in this crate (test matrices, probe queries) comes
//! from [`SplitMix64`], a tiny fixed-constant mixing generator. The generator
//! is implemented here rather than pulled from a crate because the exact
//! output stream is part of this library's compatibility contract: the same
//! seed must produce bit-identical matrices on every platform and under every
//! future dependency upgrade. Golden output vectors are pinned in the tests
//! below.

/// SplitMix64 pseudo-random generator.
///
/// A 64-bit state advanced by a Weyl constant and scrambled by two
/// multiply-xorshift rounds. Passes BigCrush, has period 2^64, and is fully
/// defined by three constants — ideal as a reproducibility anchor.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    /// Creates a generator from a seed. Equal seeds yield equal streams.
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Returns the next 64-bit value in the stream.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Returns a float in `[0, 1)` with 24 bits of precision.
    ///
    /// The top 24 bits of the stream are used so the value is exactly
    /// representable in an `f32`; the multiply by 2^-24 is an exact exponent
    /// shift, making this mapping platform-independent.
    pub fn next_unit_f32(&mut self) -> f32 {
        ((self.next_u64() >> 40) as f32) * (1.0 / (1u64 << 24) as f32)
    }

    /// Returns a float uniform over the half-open interval `[low, high)`.
    ///
    /// Computed as `low + u * (high - low)` in f32 arithmetic. For extreme
    /// ranges the final rounding could land on `high` itself; that case is
    /// clamped to the largest float below `high` to preserve half-openness.
    pub fn next_in_range(&mut self, low: f32, high: f32) -> f32 {
        debug_assert!(low < high && low.is_finite() && high.is_finite());
        let x = low + self.next_unit_f32() * (high - low);
        if x >= high {
            next_below(high)
        } else {
            x
        }
    }
}

/// Largest f32 strictly below `x` (for finite nonzero `x`).
fn next_below(x: f32) -> f32 {
    if x > 0.0 {
        f32::from_bits(x.to_bits() - 1)
    } else {
        f32::from_bits(x.to_bits() + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Golden vectors frozen from an independent implementation of the
    /// published algorithm. These must never change.
    #[test]
    fn golden_stream_seed_zero() {
        let mut g = SplitMix64::new(0);
        assert_eq!(g.next_u64(), 0xE220A8397B1DCDAF);
        assert_eq!(g.next_u64(), 0x6E789E6AA1B965F4);
        assert_eq!(g.next_u64(), 0x06C45D188009454F);
        assert_eq!(g.next_u64(), 0xF88BB8A8724C81EC);
        assert_eq!(g.next_u64(), 0x1B39896A51A8749B);
    }

    #[test]
    fn golden_stream_seed_42() {
        let mut g = SplitMix64::new(42);
        assert_eq!(g.next_u64(), 0xBDD732262FEB6E95);
        assert_eq!(g.next_u64(), 0x28EFE333B266F103);
        assert_eq!(g.next_u64(), 0x47526757130F9F52);
        assert_eq!(g.next_u64(), 0x581CE1FF0E4AE394);
        assert_eq!(g.next_u64(), 0x09BC585A244823F2);
    }

    /// The float mapping is part of the contract too: pin the first values
    /// of the symmetric unit range for seed 42.
    #[test]
    fn golden_floats_seed_42() {
        let mut g = SplitMix64::new(42);
        let want_bits = [0x3EF75CC8u32, 0xBF2E203A, 0xBEE2B664, 0xBE9F8C7C];
        for &bits in &want_bits {
            let x = g.next_in_range(-1.0, 1.0);
            assert_eq!(x.to_bits(), bits, "value {x} has wrong bit pattern");
        }
    }

    #[test]
    fn unit_floats_are_half_open() {
        let mut g = SplitMix64::new(7);
        for _ in 0..100_000 {
            let u = g.next_unit_f32();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn ranges_are_half_open() {
        for (low, high) in [(-1.0f32, 1.0f32), (-3.0, 5.0), (0.0, 0.25), (1e-3, 2e-3)] {
            let mut g = SplitMix64::new(99);
            for _ in 0..50_000 {
                let x = g.next_in_range(low, high);
                assert!(x >= low && x < high, "{x} outside [{low}, {high})");
            }
        }
    }

    #[test]
    fn equal_seeds_equal_streams() {
        let mut a = SplitMix64::new(12345);
        let mut b = SplitMix64::new(12345);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let mut a = SplitMix64::new(1);
        let mut b = SplitMix64::new(2);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn next_below_is_adjacent() {
        assert!(next_below(1.0) < 1.0);
        assert_eq!(next_below(1.0), f32::from_bits(1.0f32.to_bits() - 1));
        assert!(next_below(-1.0) < -1.0);
    }
}
