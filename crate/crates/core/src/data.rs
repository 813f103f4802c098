//! Met-ocean series: CSV ingestion and a synthetic ground-truth generator.
//!
//! The generator is a bivariate Gaussian-copula AR(1) for wave height and
//! wind speed, mapped to Weibull bodies with generalized Pareto upper tails.
//! Wave direction is a wrapped random walk whose step spread shrinks as wave
//! height grows; wind direction is wave direction plus an AR(1) offset.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{normal_cdf, stream_rng};

pub const CSV_HEADER: [&str; 5] = ["t", "hs", "ws", "theta_h", "theta_w"];

/// Aligned three-hourly wave height, wind speed and their directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetOceanSeries {
    pub t: Vec<i64>,
    pub hs: Vec<f64>,
    pub ws: Vec<f64>,
    pub theta_h: Vec<f64>,
    pub theta_w: Vec<f64>,
}

impl MetOceanSeries {
    /// Builds a series and checks every invariant.
    pub fn new(t: Vec<i64>, hs: Vec<f64>, ws: Vec<f64>, theta_h: Vec<f64>, theta_w: Vec<f64>) -> Result<Self> {
        let s = Self { t, hs, ws, theta_h, theta_w };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if [self.hs.len(), self.ws.len(), self.theta_h.len(), self.theta_w.len()]
            .iter()
            .any(|&m| m != n)
        {
            return Err(Error::invalid("series columns have different lengths"));
        }
        for i in 0..n {
            if i > 0 && self.t[i] != self.t[i - 1] + 1 {
                return Err(Error::invalid(format!(
                    "non-contiguous time index: t = {} follows t = {}",
                    self.t[i],
                    self.t[i - 1]
                )));
            }
            for (name, v) in [("hs", self.hs[i]), ("ws", self.ws[i])] {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::invalid(format!("{name}[{i}] = {v} is not a finite non-negative value")));
                }
            }
            for (name, v) in [("theta_h", self.theta_h[i]), ("theta_w", self.theta_w[i])] {
                if !(0.0..360.0).contains(&v) {
                    return Err(Error::invalid(format!("{name}[{i}] = {v} is outside [0, 360)")));
                }
            }
        }
        Ok(())
    }
}

/// Reads a series from a CSV file with header `t,hs,ws,theta_h,theta_w`.
pub fn read_csv(path: impl AsRef<Path>) -> Result<MetOceanSeries> {
    let file = std::fs::File::open(path)?;
    read_csv_from(file)
}

pub fn read_csv_from<R: Read>(reader: R) -> Result<MetOceanSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 5];
    for (k, name) in CSV_HEADER.iter().enumerate() {
        idx[k] = headers.iter().position(|h| h == *name).ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_string(),
            message: "missing column".into(),
        })?;
    }

    let mut t = Vec::new();
    let mut cols: [Vec<f64>; 4] = Default::default();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 2;
        let record = record?;
        let cell = |k: usize| -> Result<&str> {
            record.get(idx[k]).ok_or_else(|| Error::Parse {
                row,
                column: CSV_HEADER[k].into(),
                message: "missing cell".into(),
            })
        };
        let tv = cell(0)?;
        let tv: i64 = tv.parse().map_err(|_| Error::Parse {
            row,
            column: "t".into(),
            message: format!("`{tv}` is not an integer"),
        })?;
        if let Some(prev) = t.last() {
            if tv != prev + 1 {
                return Err(Error::Parse {
                    row,
                    column: "t".into(),
                    message: format!("non-contiguous time index: {tv} follows {prev}"),
                });
            }
        }
        t.push(tv);
        for k in 1..5 {
            let raw = cell(k)?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: CSV_HEADER[k].into(),
                message: format!("`{raw}` is not a number"),
            })?;
            let ok = match k {
                1 | 2 => v.is_finite() && v >= 0.0,
                _ => (0.0..360.0).contains(&v),
            };
            if !ok {
                let expected = if k <= 2 { "a finite non-negative value" } else { "a direction in [0, 360)" };
                return Err(Error::Parse {
                    row,
                    column: CSV_HEADER[k].into(),
                    message: format!("{v} is not {expected}"),
                });
            }
            cols[k - 1].push(v);
        }
    }
    let [hs, ws, theta_h, theta_w] = cols;
    MetOceanSeries::new(t, hs, ws, theta_h, theta_w)
}

pub fn write_csv(series: &MetOceanSeries, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(series, file)
}

pub fn write_csv_to<W: Write>(series: &MetOceanSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for i in 0..series.len() {
        w.write_record(&[
            series.t[i].to_string(),
            series.hs[i].to_string(),
            series.ws[i].to_string(),
            series.theta_h[i].to_string(),
            series.theta_w[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Marginal law of one synthetic variable: Weibull body below the
/// `1 - tail_prob` quantile, generalized Pareto excesses above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMargin {
    pub weibull_scale: f64,
    pub weibull_shape: f64,
    /// Probability mass of the GPD tail.
    pub tail_prob: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl TailMargin {
    pub fn threshold(&self) -> f64 {
        self.weibull_scale * (-self.tail_prob.ln()).powf(1.0 / self.weibull_shape)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let body_p = 1.0 - self.tail_prob;
        if p <= body_p {
            self.weibull_scale * (-(1.0 - p).ln()).powf(1.0 / self.weibull_shape)
        } else {
            let q = (p - body_p) / self.tail_prob;
            let excess = if self.xi.abs() < 1e-8 {
                -self.sigma * (1.0 - q).ln()
            } else {
                self.sigma / self.xi * ((1.0 - q).powf(-self.xi) - 1.0)
            };
            self.threshold() + excess
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Lag-1 correlation of the latent Gaussian, per variable (hs, ws).
    pub lag1_rho: [f64; 2],
    /// Contemporaneous latent correlation between hs and ws.
    pub cross_rho: f64,
    pub gpd_tail: [TailMargin; 2],
    /// Wave-direction step spread in calm seas (degrees).
    pub dir_drift_sd: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 154_880,
            lag1_rho: [0.95, 0.9],
            cross_rho: 0.7,
            gpd_tail: [
                TailMargin {
                    weibull_scale: 2.2,
                    weibull_shape: 1.4,
                    tail_prob: 0.05,
                    sigma: 1.0,
                    xi: -0.05,
                },
                TailMargin {
                    weibull_scale: 10.0,
                    weibull_shape: 2.0,
                    tail_prob: 0.05,
                    sigma: 2.5,
                    xi: -0.1,
                },
            ],
            dir_drift_sd: 15.0,
            seed: 1,
        }
    }
}

/// Steps per 53 years of three-hourly records.
pub const FIFTY_THREE_YEARS: usize = 53 * 2922;

impl SyntheticSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_len(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    /// Correlation of the AR innovations that yields `cross_rho` at stationarity.
    pub fn innovation_correlation(&self) -> f64 {
        let [r1, r2] = self.lag1_rho;
        self.cross_rho * (1.0 - r1 * r2) / ((1.0 - r1 * r1) * (1.0 - r2 * r2)).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(Error::invalid("synthetic series needs n >= 100"));
        }
        for r in self.lag1_rho.iter().chain(std::iter::once(&self.cross_rho)) {
            if !(r.abs() < 1.0) {
                return Err(Error::invalid(format!("correlation {r} outside (-1, 1)")));
            }
        }
        if !(self.innovation_correlation().abs() < 1.0) {
            return Err(Error::invalid(
                "cross_rho is not attainable with these lag-1 correlations",
            ));
        }
        for m in &self.gpd_tail {
            if !(m.sigma > 0.0 && m.weibull_scale > 0.0 && m.weibull_shape > 0.0) {
                return Err(Error::invalid("margin scales and shapes must be positive"));
            }
            if !(m.tail_prob > 0.0 && m.tail_prob < 1.0) {
                return Err(Error::invalid("tail_prob must lie in (0, 1)"));
            }
        }
        if !(self.dir_drift_sd >= 0.0 && self.dir_drift_sd.is_finite()) {
            return Err(Error::invalid("dir_drift_sd must be finite and non-negative"));
        }
        Ok(())
    }

    /// The latent stationary Gaussian pair behind [`generate_synthetic`].
    pub fn latent(&self) -> Result<Vec<[f64; 2]>> {
        self.validate()?;
        let mut rng = stream_rng(self.seed, 0);
        Ok(self.latent_with(&mut rng))
    }

    fn latent_with<R: Rng>(&self, rng: &mut R) -> Vec<[f64; 2]> {
        let [r1, r2] = self.lag1_rho;
        let c = self.innovation_correlation();
        let cc = (1.0 - c * c).sqrt();
        let (s1, s2) = ((1.0 - r1 * r1).sqrt(), (1.0 - r2 * r2).sqrt());
        let mut out = Vec::with_capacity(self.n);
        let z1: f64 = rng.sample(StandardNormal);
        let e: f64 = rng.sample(StandardNormal);
        let k = self.cross_rho;
        let mut z = [z1, k * z1 + (1.0 - k * k).sqrt() * e];
        out.push(z);
        for _ in 1..self.n {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            z = [r1 * z[0] + s1 * a, r2 * z[1] + s2 * (c * a + cc * b)];
            out.push(z);
        }
        out
    }
}

/// Wave-direction step spread (degrees) at wave height `h`.
fn direction_spread(base: f64, h: f64) -> f64 {
    base * (0.2 + 0.8 * (-0.4 * h).exp()).sqrt()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MetOceanSeries> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, 0);
    let latent = spec.latent_with(&mut rng);
    let n = spec.n;

    let mut hs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    for z in &latent {
        hs.push(spec.gpd_tail[0].quantile(normal_cdf(z[0])));
        ws.push(spec.gpd_tail[1].quantile(normal_cdf(z[1])));
    }

    let mut dir_rng = stream_rng(spec.seed, 1);
    let mut theta_h = Vec::with_capacity(n);
    let mut theta_w = Vec::with_capacity(n);
    let mut th: f64 = dir_rng.random_range(0.0..360.0);
    let mut step = 0.0;
    let mut gamma = 0.0;
    for _ in 0..50 {
        gamma = 0.7 * gamma + 10.0 * dir_rng.sample::<f64, _>(StandardNormal);
    }
    for &h in &hs {
        theta_h.push(wrap_degrees(th));
        theta_w.push(wrap_degrees(th + gamma));
        let e: f64 = dir_rng.sample(StandardNormal);
        step = 0.3 * step + direction_spread(spec.dir_drift_sd, h) * e;
        th = wrap_degrees(th + step);
        gamma = 0.7 * gamma + 10.0 * dir_rng.sample::<f64, _>(StandardNormal);
    }

    let t = (0..n as i64).collect();
    MetOceanSeries::new(t, hs, ws, theta_h, theta_w)
}

/// Maps any angle onto [0, 360).
pub fn wrap_degrees(x: f64) -> f64 {
    let w = x.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}
