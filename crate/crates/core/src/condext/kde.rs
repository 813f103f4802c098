use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{sample_sd, LN_SQRT_2PI};

pub const MIN_RESIDUALS: usize = 30;

/// Smallest bandwidth used when a residual coordinate has no spread.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

/// Below this log-weight every linear kernel weight is zero in f64.
const UNDERFLOW_LOG: f64 = -745.0;

/// Residual vectors with a product-Gaussian kernel density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSample {
    pub dim: usize,
    /// Row-major `n x dim`.
    pub data: Vec<f64>,
    pub bandwidths: Vec<f64>,
    /// Some coordinate had zero spread and its bandwidth was floored.
    pub degenerate: bool,
}

/// Univariate normal-reference bandwidth for a coordinate with spread `sd`
/// and `n` observations.
///
/// Applied to each coordinate on its own. The multivariate rule widens with
/// the dimension (about 0.6 sd for a 13-coordinate peak period), and a draw
/// from the smoothed density then overstates every residual variance.
pub fn normal_reference_bandwidth(sd: f64, n: usize) -> f64 {
    sd * (4.0 / (3.0 * n as f64)).powf(0.2)
}

impl ResidualSample {
    /// Strict constructor: at least 30 rows and non-degenerate coordinates.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let s = Self::lenient(rows)?;
        if rows.len() < MIN_RESIDUALS {
            return Err(Error::insufficient(format!(
                "residual sample needs {MIN_RESIDUALS} rows, got {}",
                rows.len()
            )));
        }
        if s.degenerate {
            return Err(Error::invalid("a residual coordinate has zero spread"));
        }
        Ok(s)
    }

    /// Accepts any non-empty sample; zero-spread coordinates get a floored
    /// bandwidth and set the `degenerate` flag.
    pub fn lenient(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::insufficient("empty residual sample"));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("residual rows differ in length"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("residuals must be finite"));
        }
        let data: Vec<f64> = rows.iter().flatten().cloned().collect();
        let mut degenerate = false;
        let bandwidths = (0..dim)
            .map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                let h = normal_reference_bandwidth(sample_sd(&col), n);
                if h > BANDWIDTH_FLOOR {
                    h
                } else {
                    degenerate = true;
                    BANDWIDTH_FLOOR
                }
            })
            .collect();
        Ok(Self {
            dim,
            data,
            bandwidths,
            degenerate,
        })
    }

    /// Fixed bandwidths; any sample size of at least one row.
    pub fn with_bandwidths(rows: &[Vec<f64>], bandwidths: Vec<f64>) -> Result<Self> {
        let mut s = Self::lenient(rows)?;
        if bandwidths.len() != s.dim || bandwidths.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::invalid("bandwidths must be finite, positive and one per coordinate"));
        }
        s.bandwidths = bandwidths;
        s.degenerate = false;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        (0..self.len()).map(|i| self.row(i)[j]).sum::<f64>() / self.len() as f64
    }

    /// Log kernel weight of row `i` over the leading `point.len()` coordinates.
    fn log_kernel(&self, i: usize, point: &[f64]) -> f64 {
        let r = self.row(i);
        let mut s = 0.0;
        for (j, x) in point.iter().enumerate() {
            let h = self.bandwidths[j];
            let z = (x - r[j]) / h;
            s -= 0.5 * z * z + LN_SQRT_2PI + h.ln();
        }
        s
    }

    /// Density of the leading `point.len()` coordinates (the full density when
    /// `point.len() == dim`).
    pub fn density(&self, point: &[f64]) -> f64 {
        assert!(point.len() <= self.dim, "point has more coordinates than the sample");
        let n = self.len();
        (0..n).map(|i| self.log_kernel(i, point).exp()).sum::<f64>() / n as f64
    }

    /// One draw from the full kernel density.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let i = rng.random_range(0..self.len());
        self.jitter(i, 0, rng)
    }

    fn jitter<R: Rng + ?Sized>(&self, i: usize, from: usize, rng: &mut R) -> Vec<f64> {
        let r = self.row(i);
        (from..self.dim)
            .map(|j| r[j] + self.bandwidths[j] * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Draws the trailing coordinates given the leading block `given`, from
    /// the ratio of the full density to the leading-block marginal. Returns
    /// the draw and whether the nearest-neighbour fallback was used.
    pub fn conditional_sample<R: Rng + ?Sized>(&self, given: &[f64], rng: &mut R) -> (Vec<f64>, bool) {
        assert!(given.len() < self.dim, "conditioning block must leave at least one coordinate");
        if given.is_empty() {
            return (self.sample(rng), false);
        }
        let n = self.len();
        let logw: Vec<f64> = (0..n).map(|i| self.log_kernel(i, given)).collect();
        let (imax, &lmax) = logw
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty sample");
        if lmax < UNDERFLOW_LOG {
            return (self.jitter(imax, given.len(), rng), true);
        }
        let w: Vec<f64> = logw.iter().map(|l| (l - lmax).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, wi) in w.iter().enumerate() {
            if target < *wi {
                pick = i;
                break;
            }
            target -= wi;
        }
        (self.jitter(pick, given.len(), rng), false)
    }
}
