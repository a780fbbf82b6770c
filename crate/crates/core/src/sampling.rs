//! Counter-based random streams and batched Monte Carlo reduction.
//!
//! Every batch of [`BATCH`] samples draws from its own ChaCha8 stream keyed by
//! `(seed, stream)`. Results therefore do not depend on how batches are spread
//! across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const BATCH: usize = 1 << 14;
pub const DEFAULT_SAMPLES: usize = 1 << 20;

/// Stream offsets keep independent uses of the same seed apart.
pub const TRAINING_STREAM: u64 = 1 << 40;
pub const PROFILE_STREAM: u64 = 2 << 40;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Run `f(batch_index, batch_len)` over all batches covering `samples`, in order.
pub fn map_batches<T, F>(samples: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, usize) -> T + Sync + Send,
{
    let batches = samples.div_ceil(BATCH);
    let len = |b: usize| BATCH.min(samples - b * BATCH);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..batches).into_par_iter().map(|b| f(b as u64, len(b))).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..batches).map(|b| f(b as u64, len(b))).collect()
    }
}

/// Ordered parallel map over a slice of indices.
pub fn map_indices<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Count, mean and centered second moment of a sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, other: Self) -> Self {
        if self.count == 0.0 {
            return other;
        }
        if other.count == 0.0 {
            return self;
        }
        let count = self.count + other.count;
        let d = other.mean - self.mean;
        Self {
            count,
            mean: self.mean + d * other.count / count,
            m2: self.m2 + other.m2 + d * d * self.count * other.count / count,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count > 1.0 {
            self.m2 / (self.count - 1.0)
        } else {
            0.0
        }
    }

    /// Pairwise reduction in slice order, so the result is reproducible.
    pub fn reduce(parts: &[Moments]) -> Moments {
        match parts.len() {
            0 => Moments::default(),
            1 => parts[0],
            n => Self::reduce(&parts[..n / 2]).merge(Self::reduce(&parts[n / 2..])),
        }
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    /// Combine per-batch moments. With at least eight batches the standard
    /// error comes from the spread of batch means, otherwise from the pooled
    /// sample variance.
    pub fn from_batches(batches: &[Moments]) -> Self {
        let all = Moments::reduce(batches);
        let stderr = if batches.len() >= 8 {
            let mut means = Moments::default();
            for b in batches {
                means.push(b.mean);
            }
            (means.variance() / means.count).sqrt()
        } else if all.count > 0.0 {
            (all.variance() / all.count).sqrt()
        } else {
            f64::NAN
        };
        Self { mean: all.mean, stderr, samples: all.count as usize }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: f64 = stream_rng(7, 3).random();
        let b: f64 = stream_rng(7, 3).random();
        let c: f64 = stream_rng(7, 4).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn merged_moments_match_direct() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut direct = Moments::default();
        xs.iter().for_each(|&x| direct.push(x));
        let parts: Vec<Moments> = xs
            .chunks(77)
            .map(|c| {
                let mut m = Moments::default();
                c.iter().for_each(|&x| m.push(x));
                m
            })
            .collect();
        let merged = Moments::reduce(&parts);
        assert!((merged.mean - direct.mean).abs() < 1e-12);
        assert!((merged.m2 - direct.m2).abs() < 1e-8 * direct.m2);
    }

    #[test]
    fn batches_cover_all_samples() {
        let lens = map_batches(3 * BATCH + 5, |_, n| n);
        assert_eq!(lens, vec![BATCH, BATCH, BATCH, 5]);
    }
}
