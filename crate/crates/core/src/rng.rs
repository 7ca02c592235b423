//! Deterministic random numbers for the whole artifact.
//!
//! A single fixed generator (xoshiro256** seeded through SplitMix64) is used
//! everywhere so that a seed fully determines every downstream artifact on
//! every platform. Only integer arithmetic and exact float conversions are
//! involved, so streams are bit-identical across OS/libm combinations.

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string; used to derive stream tags from names.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Seeded xoshiro256** generator.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    s: [u64; 4],
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng {
            seed,
            s,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive an independent stream from the *original* seed and a tag.
    /// Forking does not consume state, so forks are stable no matter how much
    /// of the parent stream has been used — handy for per-pulse noise streams
    /// generated from parallel workers.
    pub fn fork(&self, tag: u64) -> Rng {
        let mut sm = self.seed ^ tag.wrapping_mul(GOLDEN);
        let mixed = splitmix64(&mut sm);
        Rng::new(mixed)
    }

    pub fn fork_named(&self, name: &str) -> Rng {
        self.fork(fnv1a(name.as_bytes()))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n) without modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal via the Marsaglia polar method.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let k = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * k);
                return u * k;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.below((i + 1) as u64) as usize;
            slice.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_matches_reference_vector() {
        // Published SplitMix64 outputs for seed 0.
        let mut st = 0u64;
        assert_eq!(splitmix64(&mut st), 0xe220a8397b1dcdaf);
        assert_eq!(splitmix64(&mut st), 0x6e789e6aa1b965f4);
        assert_eq!(splitmix64(&mut st), 0x06c45d188009454f);
        assert_eq!(splitmix64(&mut st), 0xf88bb8a8724c81ec);
    }

    #[test]
    fn xoshiro_stream_is_frozen() {
        // First outputs for a state expanded from seed 42; computed once with
        // an independent big-integer implementation and pinned here.
        let mut rng = Rng::new(42);
        assert_eq!(rng.next_u64(), 0x15780b2e0c2ec716);
        assert_eq!(rng.next_u64(), 0x6104d9866d113a7e);
        assert_eq!(rng.next_u64(), 0xae17533239e499a1);
        assert_eq!(rng.next_u64(), 0xecb8ad4703b360a1);
        assert_eq!(rng.next_u64(), 0xfde6dc7fe2ec5e64);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn forks_are_stable_and_distinct() {
        let mut parent = Rng::new(9);
        let f1 = parent.fork(1);
        // Consuming the parent must not change what a fork produces.
        for _ in 0..100 {
            parent.next_u64();
        }
        let mut f1b = parent.fork(1);
        let mut f1a = f1;
        for _ in 0..100 {
            assert_eq!(f1a.next_u64(), f1b.next_u64());
        }
        let mut f2 = parent.fork(2);
        assert_ne!(parent.fork(1).next_u64(), f2.next_u64());
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = Rng::new(3);
        for _ in 0..10_000 {
            let v = rng.range(2.0, 5.0);
            assert!((2.0..5.0).contains(&v));
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut rng = Rng::new(11);
        let n = 50_000;
        let samples: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn below_is_unbiased_enough() {
        let mut rng = Rng::new(5);
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[rng.below(4) as usize] += 1;
        }
        for c in counts {
            assert!((c as i64 - 10_000).abs() < 600, "counts {counts:?}");
        }
    }
}
