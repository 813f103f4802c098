//! Generalized Pareto tails, semi-parametric directional margins and the
//! standard Laplace transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{minimize, OptimOptions};
use crate::util::{sample_sd, HazenCdf};

const XI_LO: f64 = -0.5;
const XI_HI: f64 = 1.0;
const EXP_LIMIT: f64 = 1e-8;

/// Standard Laplace distribution function.
pub fn laplace_cdf(y: f64) -> f64 {
    if y < 0.0 {
        0.5 * y.exp()
    } else {
        1.0 - 0.5 * (-y).exp()
    }
}

pub fn laplace_survival(y: f64) -> f64 {
    if y < 0.0 {
        1.0 - 0.5 * y.exp()
    } else {
        0.5 * (-y).exp()
    }
}

pub fn laplace_quantile(p: f64) -> f64 {
    if p < 0.5 {
        (2.0 * p).ln()
    } else {
        -(2.0 * (1.0 - p)).ln()
    }
}

/// Generalized Pareto law of threshold excesses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gpd {
    pub sigma: f64,
    pub xi: f64,
}

impl Gpd {
    pub fn new(sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && xi.is_finite()) {
            return Err(Error::invalid(format!("GPD needs sigma > 0, got sigma = {sigma}, xi = {xi}")));
        }
        Ok(Self { sigma, xi })
    }

    /// Upper end of the support, infinite unless `xi < 0`.
    pub fn upper_endpoint(&self) -> f64 {
        if self.xi < 0.0 {
            -self.sigma / self.xi
        } else {
            f64::INFINITY
        }
    }

    /// Survival function, saturating to 0 beyond the upper endpoint.
    pub fn survival(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        if self.xi.abs() < EXP_LIMIT {
            return (-x / self.sigma).exp();
        }
        let z = 1.0 + self.xi * x / self.sigma;
        if z <= 0.0 {
            0.0
        } else {
            z.powf(-1.0 / self.xi)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.survival(x)
    }

    /// Excess with survival probability `s`.
    pub fn quantile_survival(&self, s: f64) -> f64 {
        if self.xi.abs() < EXP_LIMIT {
            -self.sigma * s.ln()
        } else {
            self.sigma / self.xi * (s.powf(-self.xi) - 1.0)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.quantile_survival(1.0 - p)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        if self.xi.abs() < EXP_LIMIT {
            return -self.sigma.ln() - x / self.sigma;
        }
        let z = 1.0 + self.xi * x / self.sigma;
        if z <= 0.0 {
            return f64::NEG_INFINITY;
        }
        -self.sigma.ln() - (1.0 + 1.0 / self.xi) * z.ln()
    }
}

/// Distribution function of a GPD excess, checked against the support.
pub fn gpd_cdf(x: f64, p: &Gpd) -> Result<f64> {
    if x < 0.0 || x > p.upper_endpoint() || x.is_nan() {
        return Err(Error::Domain {
            value: x,
            message: format!("GPD support is [0, {}]", p.upper_endpoint()),
        });
    }
    Ok(p.cdf(x))
}

pub fn gpd_neg_log_likelihood(excesses: &[f64], g: &Gpd) -> f64 {
    let mut s = 0.0;
    for &x in excesses {
        let l = g.log_density(x);
        if !l.is_finite() {
            return f64::INFINITY;
        }
        s -= l;
    }
    s
}

fn xi_from(t: f64) -> f64 {
    XI_LO + (XI_HI - XI_LO) / (1.0 + (-t).exp())
}

fn xi_to(xi: f64) -> f64 {
    let q = ((xi - XI_LO) / (XI_HI - XI_LO)).clamp(1e-6, 1.0 - 1e-6);
    (q / (1.0 - q)).ln()
}

/// Maximum-likelihood GPD fit with `xi` kept inside (-0.5, 1).
pub fn fit_gpd(excesses: &[f64]) -> Result<Gpd> {
    if excesses.len() < 30 {
        return Err(Error::insufficient(format!(
            "GPD fit needs at least 30 excesses, got {}",
            excesses.len()
        )));
    }
    if let Some(bad) = excesses.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::Domain {
            value: *bad,
            message: "excesses must be positive and finite".into(),
        });
    }
    let m = excesses.iter().sum::<f64>() / excesses.len() as f64;
    let sd = sample_sd(excesses);
    if !(sd > 1e-12 * m.max(1.0)) {
        return Err(Error::Fit {
            message: "degenerate sample: excesses have zero spread".into(),
            best: vec![m, 0.0],
            grad_norm: f64::NAN,
        });
    }
    // method-of-moments start
    let xi0 = (0.5 * (1.0 - m * m / (sd * sd))).clamp(-0.4, 0.9);
    let sigma0 = (m * (1.0 - xi0)).max(1e-6);
    let max_x = excesses.iter().cloned().fold(0.0, f64::max);
    let sigma0 = if xi0 < 0.0 { sigma0.max(-xi0 * max_x * 1.01) } else { sigma0 };

    let f = |v: &[f64]| {
        let g = Gpd {
            sigma: v[0].exp(),
            xi: xi_from(v[1]),
        };
        gpd_neg_log_likelihood(excesses, &g)
    };
    let opts = OptimOptions::default();
    let best = minimize(&f, &[sigma0.ln(), xi_to(xi0)], &opts);
    if !best.value.is_finite() {
        return Err(Error::Fit {
            message: "GPD likelihood is not finite anywhere visited".into(),
            best: best.x,
            grad_norm: best.grad_norm,
        });
    }
    Gpd::new(best.x[0].exp(), xi_from(best.x[1]))
}

/// Tail model of one bin: the GPD above the physical threshold `u_x`,
/// which is exceeded with probability `zeta_u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdParams {
    pub sigma: f64,
    pub xi: f64,
    pub u_x: f64,
    pub zeta_u: f64,
}

impl GpdParams {
    pub fn gpd(&self) -> Gpd {
        Gpd {
            sigma: self.sigma,
            xi: self.xi,
        }
    }

    /// Physical upper endpoint `u_x - sigma/xi` for `xi < 0`.
    pub fn upper_endpoint(&self) -> f64 {
        self.u_x + self.gpd().upper_endpoint()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Hs,
    Ws,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    pub n_bins: usize,
    pub zeta_u: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        Self { n_bins: 8, zeta_u: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginBin {
    /// Sector `[lo, hi)` in degrees.
    pub lo: f64,
    pub hi: f64,
    pub body: HazenCdf,
    pub tail: GpdParams,
    /// The bin had too few exceedances and borrows the pooled fit.
    pub pooled: bool,
}

impl MarginBin {
    fn fit(sample: &[f64], zeta_u: f64, lo: f64, hi: f64, pooled: bool) -> Result<Self> {
        let body = HazenCdf::new(sample);
        let u_x = body.quantile(1.0 - zeta_u);
        let excesses: Vec<f64> = sample.iter().filter(|x| **x > u_x).map(|x| x - u_x).collect();
        let g = fit_gpd(&excesses)?;
        Ok(Self {
            lo,
            hi,
            body,
            tail: GpdParams {
                sigma: g.sigma,
                xi: g.xi,
                u_x,
                zeta_u,
            },
            pooled,
        })
    }

    /// Non-exceedance probability before clamping.
    pub fn cdf_raw(&self, x: f64) -> f64 {
        let t = &self.tail;
        if x <= t.u_x {
            self.body.cdf(x)
        } else {
            1.0 - t.zeta_u * t.gpd().survival(x - t.u_x)
        }
    }

    fn survival_raw(&self, x: f64) -> f64 {
        let t = &self.tail;
        if x <= t.u_x {
            1.0 - self.body.cdf(x)
        } else {
            t.zeta_u * t.gpd().survival(x - t.u_x)
        }
    }

    /// Laplace-scale value and whether the probability had to be clamped.
    pub fn to_laplace(&self, x: f64) -> (f64, bool) {
        let eps = self.body.p_min();
        let s = self.survival_raw(x);
        if s >= 0.5 {
            let p = self.cdf_raw(x).max(eps);
            (laplace_quantile(p), x < self.body.sorted()[0])
        } else if s < eps {
            (-(2.0 * eps).ln(), true)
        } else {
            (-(2.0 * s).ln(), false)
        }
    }

    pub fn from_laplace(&self, y: f64) -> f64 {
        let t = &self.tail;
        let s = laplace_survival(y);
        if s < t.zeta_u {
            t.u_x + t.gpd().quantile_survival(s / t.zeta_u)
        } else {
            self.body.quantile(laplace_cdf(y))
        }
    }
}

/// Empirical body and GPD tail per directional sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiParametricMarginal {
    pub variable: Variable,
    pub bins: Vec<MarginBin>,
}

/// Minimum tail sample per bin before falling back to the pooled sample.
pub const MIN_BIN_EXCESSES: usize = 30;

impl SemiParametricMarginal {
    pub fn fit(values: &[f64], directions: &[f64], variable: Variable, cfg: &MarginConfig) -> Result<Self> {
        if values.len() != directions.len() {
            return Err(Error::invalid("values and directions differ in length"));
        }
        if cfg.n_bins == 0 || !(cfg.zeta_u > 0.0 && cfg.zeta_u < 1.0) {
            return Err(Error::invalid("need at least one bin and zeta_u in (0, 1)"));
        }
        let width = 360.0 / cfg.n_bins as f64;
        let mut groups = vec![Vec::new(); cfg.n_bins];
        for (&x, &th) in values.iter().zip(directions) {
            groups[bin_of(th, cfg.n_bins)].push(x);
        }
        let mut pooled: Option<MarginBin> = None;
        let mut bins = Vec::with_capacity(cfg.n_bins);
        for (b, g) in groups.iter().enumerate() {
            let lo = b as f64 * width;
            let hi = if b + 1 == cfg.n_bins { 360.0 } else { (b + 1) as f64 * width };
            let enough = (g.len() as f64 * cfg.zeta_u).floor() as usize >= MIN_BIN_EXCESSES;
            let fitted = if enough {
                MarginBin::fit(g, cfg.zeta_u, lo, hi, false).ok()
            } else {
                None
            };
            let bin = match fitted {
                Some(bin) => bin,
                None => {
                    if pooled.is_none() {
                        pooled = Some(MarginBin::fit(values, cfg.zeta_u, 0.0, 360.0, true)?);
                    }
                    let mut p = pooled.clone().expect("pooled fit");
                    p.lo = lo;
                    p.hi = hi;
                    p
                }
            };
            bins.push(bin);
        }
        Ok(Self { variable, bins })
    }

    pub fn bin(&self, theta: f64) -> &MarginBin {
        &self.bins[bin_of(theta, self.bins.len())]
    }

    pub fn to_laplace(&self, x: f64, theta: f64) -> f64 {
        self.bin(theta).to_laplace(x).0
    }

    /// As [`to_laplace`](Self::to_laplace) with the clamping flag.
    pub fn to_laplace_flagged(&self, x: f64, theta: f64) -> (f64, bool) {
        self.bin(theta).to_laplace(x)
    }

    pub fn from_laplace(&self, y: f64, theta: f64) -> f64 {
        self.bin(theta).from_laplace(y)
    }
}

/// Sector index of a direction for `n` equal sectors starting at 0°.
pub fn bin_of(theta: f64, n: usize) -> usize {
    let w = theta.rem_euclid(360.0);
    ((w / (360.0 / n as f64)).floor() as usize).min(n - 1)
}

/// Fitted hs and ws margins, conditioned on wave and wind direction respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginPair {
    pub hs: SemiParametricMarginal,
    pub ws: SemiParametricMarginal,
}

impl MarginPair {
    pub fn fit(series: &crate::data::MetOceanSeries, cfg: &MarginConfig) -> Result<Self> {
        Ok(Self {
            hs: SemiParametricMarginal::fit(&series.hs, &series.theta_h, Variable::Hs, cfg)?,
            ws: SemiParametricMarginal::fit(&series.ws, &series.theta_w, Variable::Ws, cfg)?,
        })
    }

    pub fn to_laplace(&self, series: &crate::data::MetOceanSeries) -> Vec<[f64; 2]> {
        (0..series.len())
            .map(|i| {
                [
                    self.hs.to_laplace(series.hs[i], series.theta_h[i]),
                    self.ws.to_laplace(series.ws[i], series.theta_w[i]),
                ]
            })
            .collect()
    }

    pub fn from_laplace(&self, y: [f64; 2], theta_h: f64, theta_w: f64) -> [f64; 2] {
        [self.hs.from_laplace(y[0], theta_h), self.ws.from_laplace(y[1], theta_w)]
    }
}
