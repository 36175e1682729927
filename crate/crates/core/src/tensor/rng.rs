use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded, counter-based random stream.
///
/// ChaCha is a counter-mode generator, so the stream for a given
/// `(seed, stream)` pair is the same on every platform. Independent streams
/// for epochs, batches, or layers are obtained with [`RngState::derive`]
/// rather than by sharing one generator.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `path`, unaffected by draws already made
    /// from `self`.
    pub fn derive(&self, path: &[u64]) -> Self {
        let mut key = self.seed ^ 0x9E37_79B9_7F4A_7C15;
        for &p in path {
            key = splitmix(key ^ splitmix(p.wrapping_add(0xD1B5_4A32_D192_ED03)));
        }
        Self {
            seed: key,
            rng: ChaCha8Rng::seed_from_u64(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        mean + std * z
    }

    /// Normal draw resampled until it falls within `bound` standard
    /// deviations of the mean.
    pub fn truncated_normal(&mut self, std: f64, bound: f64) -> f64 {
        loop {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            if z.abs() <= bound {
                return std * z;
            }
        }
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n as u64) as usize
    }

    /// Fisher-Yates.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
