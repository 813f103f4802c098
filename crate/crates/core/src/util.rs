//! Small numerical helpers shared by the model modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Deterministic RNG for stream `stream` of a seeded family. Streams are
/// independent and do not depend on scheduling order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes two integers into a child seed (splitmix64 finaliser).
pub fn child_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (divisor n).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor n - 1).
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Linear interpolation between order statistics (Hyndman–Fan type 7).
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

pub fn quantile(xs: &[f64], p: f64) -> f64 {
    quantile_sorted(&sorted_copy(xs), p)
}

/// Empirical CDF with Hazen plotting positions `(i - 0.5) / n`, linearly
/// interpolated between order statistics so that it is continuous and
/// strictly increasing on the sample range.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HazenCdf {
    sorted: Vec<f64>,
}

impl HazenCdf {
    pub fn new(sample: &[f64]) -> Self {
        Self {
            sorted: sorted_copy(sample),
        }
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    fn position(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.sorted.len() as f64
    }

    /// Smallest representable probability, `1 / (2n)`.
    pub fn p_min(&self) -> f64 {
        0.5 / self.sorted.len() as f64
    }

    pub fn p_max(&self) -> f64 {
        1.0 - self.p_min()
    }

    /// Probability at `x`, clamped to `[1/(2n), 1 - 1/(2n)]` outside the sample range.
    pub fn cdf(&self, x: f64) -> f64 {
        let s = &self.sorted;
        let n = s.len();
        if x <= s[0] {
            return self.p_min();
        }
        if x >= s[n - 1] {
            return self.p_max();
        }
        // first index with s[idx] > x
        let idx = s.partition_point(|v| *v <= x);
        let (lo, hi) = (idx - 1, idx);
        let (x0, x1) = (s[lo], s[hi]);
        let (p0, p1) = (self.position(lo), self.position(hi));
        if x1 <= x0 {
            return p1;
        }
        p0 + (x - x0) / (x1 - x0) * (p1 - p0)
    }

    /// Inverse of [`cdf`](Self::cdf); probabilities outside the representable
    /// range map to the sample extremes.
    pub fn quantile(&self, p: f64) -> f64 {
        let s = &self.sorted;
        let n = s.len();
        if p <= self.p_min() {
            return s[0];
        }
        if p >= self.p_max() {
            return s[n - 1];
        }
        let h = p * n as f64 - 0.5;
        let lo = (h.floor() as usize).min(n - 2);
        let frac = h - lo as f64;
        s[lo] + frac * (s[lo + 1] - s[lo])
    }
}

/// Percentile interval of `values` at coverage `level`.
pub fn percentile_interval(values: &[f64], level: f64) -> (f64, f64) {
    let s = sorted_copy(values);
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail))
}
