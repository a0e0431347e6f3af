use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, Uniform};

use super::Tensor;

/// Seeded random stream whose position can be saved and restored exactly.
#[derive(Clone, Debug)]
pub struct SeedStream {
    seed: u64,
    rng: ChaCha8Rng,
}

/// Snapshot of a [`SeedStream`]: seed, stream id and word position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent sub-stream derived from `seed` and a label.
    pub fn derived(seed: u64, label: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label);
        Self { seed, rng }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn state(&self) -> StreamState {
        StreamState {
            seed: self.seed,
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn restore(state: StreamState) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
        rng.set_stream(state.stream);
        rng.set_word_pos(state.word_pos);
        Self {
            seed: state.seed,
            rng,
        }
    }

    pub fn gen_range(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.rng.random_range(lo..hi)
    }

    pub fn gen_index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn gen_gaussian(&mut self, mean: f64, std: f64) -> f64 {
        if std == 0.0 {
            return mean;
        }
        Normal::new(mean, std)
            .expect("std validated")
            .sample(&mut self.rng)
    }

    /// Fisher–Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.rng.random_range(0..=i);
            idx.swap(i, j);
        }
        idx
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    Gaussian { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

/// Tensor of independent draws. Panics on a negative std or an empty
/// uniform interval.
pub fn rng_tensor(stream: &mut SeedStream, shape: &[usize], dist: Distribution) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = match dist {
        Distribution::Gaussian { mean, std } => {
            assert!(std >= 0.0, "negative std {std}");
            if std == 0.0 {
                vec![mean; n]
            } else {
                let normal = Normal::new(mean, std).unwrap();
                (0..n).map(|_| normal.sample(&mut stream.rng)).collect()
            }
        }
        Distribution::Uniform { low, high } => {
            assert!(high > low, "empty interval [{low}, {high})");
            let u = Uniform::new(low, high).unwrap();
            (0..n).map(|_| u.sample(&mut stream.rng)).collect()
        }
    };
    Tensor::from_parts(shape.to_vec(), data)
}
