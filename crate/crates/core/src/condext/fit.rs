use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{minimize, numerical_gradient, OptimOptions};
use crate::util::LN_SQRT_2PI;

use super::kde::ResidualSample;

/// Observations of `W | W_1 > u`: the conditioning exceedance, optional
/// covariates (e.g. a lagged history) and the response columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalData {
    pub anchor: Vec<f64>,
    /// Row-major `n x n_cov`.
    pub covariates: Vec<f64>,
    pub n_cov: usize,
    /// Row-major `n x n_resp`.
    pub responses: Vec<f64>,
    pub n_resp: usize,
}

impl ConditionalData {
    pub fn new(anchor: Vec<f64>, covariates: Vec<f64>, n_cov: usize, responses: Vec<f64>, n_resp: usize) -> Result<Self> {
        let n = anchor.len();
        if covariates.len() != n * n_cov || responses.len() != n * n_resp || n_resp == 0 {
            return Err(Error::invalid("conditional data blocks have inconsistent sizes"));
        }
        Ok(Self {
            anchor,
            covariates,
            n_cov,
            responses,
            n_resp,
        })
    }

    /// Single response column with no covariates.
    pub fn pairs(anchor: Vec<f64>, response: Vec<f64>) -> Result<Self> {
        Self::new(anchor, Vec::new(), 0, response, 1)
    }

    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }

    pub fn cov(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.n_cov..(i + 1) * self.n_cov]
    }

    pub fn resp(&self, i: usize) -> &[f64] {
        &self.responses[i * self.n_resp..(i + 1) * self.n_resp]
    }
}

/// A parametric location/scale family `W_j = g1_j + g2_j * eps_j`.
pub trait Family {
    fn n_params(&self) -> usize;
    /// `(g1_j, g2_j)` for response `j` of one observation.
    fn location_scale(&self, theta: &[f64], anchor: f64, cov: &[f64], j: usize) -> (f64, f64);
    /// Map from optimizer coordinates to natural parameters.
    fn natural(&self, v: &[f64]) -> Vec<f64>;
    fn unconstrained(&self, theta: &[f64]) -> Vec<f64>;
    /// Natural parameters sit on (or numerically at) a constraint boundary.
    fn at_boundary(&self, theta: &[f64]) -> bool;
}

/// Largest magnitude of an unconstrained coordinate; past it the bounded
/// maps saturate in double precision.
pub const UNCONSTRAINED_LIMIT: f64 = 30.0;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// `beta = 1 - softplus(b)` keeps beta below 1.
pub fn beta_from(b: f64) -> f64 {
    1.0 - softplus(b)
}

pub fn beta_to(beta: f64) -> f64 {
    softplus_inv((1.0 - beta).max(1e-12))
}

/// `alpha = tanh(a)` keeps alpha in [-1, 1].
pub fn alpha_from(a: f64) -> f64 {
    a.tanh()
}

pub fn alpha_to(alpha: f64) -> f64 {
    alpha.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh()
}

/// The conditional-extremes pair `g1 = alpha * y`, `g2 = y^beta` for one response.
#[derive(Debug, Clone, Copy, Default)]
pub struct HtFamily;

impl Family for HtFamily {
    fn n_params(&self) -> usize {
        2
    }

    fn location_scale(&self, theta: &[f64], anchor: f64, _cov: &[f64], _j: usize) -> (f64, f64) {
        (theta[0] * anchor, anchor.powf(theta[1]))
    }

    fn natural(&self, v: &[f64]) -> Vec<f64> {
        vec![alpha_from(v[0]), beta_from(v[1])]
    }

    fn unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        vec![alpha_to(theta[0]), beta_to(theta[1])]
    }

    fn at_boundary(&self, theta: &[f64]) -> bool {
        theta[0].abs() > 1.0 - 1e-6 || theta[1] > 1.0 - 1e-6
    }
}

/// Residuals `(w - g1)/g2`, row-major `n x n_resp`.
pub fn residuals<F: Family + ?Sized>(family: &F, data: &ConditionalData, theta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.responses.len());
    for i in 0..data.len() {
        let (y, cov, w) = (data.anchor[i], data.cov(i), data.resp(i));
        for (j, wj) in w.iter().enumerate() {
            let (g1, g2) = family.location_scale(theta, y, cov, j);
            out.push((wj - g1) / g2);
        }
    }
    out
}

/// Negative log of the Gaussian pseudo-likelihood with explicit nuisance
/// mean `mu` and variance `sigma2` per response.
pub fn neg_log_pseudo_likelihood<F: Family + ?Sized>(
    family: &F,
    data: &ConditionalData,
    theta: &[f64],
    mu: &[f64],
    sigma2: &[f64],
) -> f64 {
    let mut s = 0.0;
    for i in 0..data.len() {
        let (y, cov, w) = (data.anchor[i], data.cov(i), data.resp(i));
        for (j, wj) in w.iter().enumerate() {
            let (g1, g2) = family.location_scale(theta, y, cov, j);
            if !(g2 > 0.0) {
                return f64::INFINITY;
            }
            let z = (wj - g1 - mu[j] * g2) / g2;
            s += LN_SQRT_2PI + 0.5 * sigma2[j].ln() + g2.ln() + 0.5 * z * z / sigma2[j];
        }
    }
    s
}

/// Variance floor keeping the profile finite when residuals collapse.
const SIGMA2_FLOOR: f64 = 1e-300;

/// Closed-form nuisance maximizers: residual mean and (divisor n) variance.
pub fn profile_nuisance(res: &[f64], n_resp: usize) -> (Vec<f64>, Vec<f64>) {
    let n = res.len() / n_resp;
    let mut mu = vec![0.0; n_resp];
    let mut s2 = vec![0.0; n_resp];
    for i in 0..n {
        for j in 0..n_resp {
            mu[j] += res[i * n_resp + j];
        }
    }
    for m in mu.iter_mut() {
        *m /= n as f64;
    }
    for i in 0..n {
        for j in 0..n_resp {
            let d = res[i * n_resp + j] - mu[j];
            s2[j] += d * d;
        }
    }
    for v in s2.iter_mut() {
        *v = (*v / n as f64).max(SIGMA2_FLOOR);
    }
    (mu, s2)
}

/// The pseudo-likelihood maximized over the nuisance parameters.
pub fn profile_objective<F: Family + ?Sized>(family: &F, data: &ConditionalData, theta: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mut log_scale = 0.0;
    let mut res = Vec::with_capacity(data.responses.len());
    for i in 0..data.len() {
        let (y, cov, w) = (data.anchor[i], data.cov(i), data.resp(i));
        for (j, wj) in w.iter().enumerate() {
            let (g1, g2) = family.location_scale(theta, y, cov, j);
            if !(g2 > 0.0 && g2.is_finite()) {
                return f64::INFINITY;
            }
            log_scale += g2.ln();
            res.push((wj - g1) / g2);
        }
    }
    let (_, s2) = profile_nuisance(&res, data.n_resp);
    log_scale + s2.iter().map(|v| 0.5 * n * (v.ln() + 1.0) + n * LN_SQRT_2PI).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalFit {
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    /// Row-major `n x n_resp` residuals at `theta`.
    pub residuals: Vec<f64>,
    pub n_resp: usize,
    pub neg_log_lik: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub boundary: bool,
}

pub const MIN_CONDITIONAL_OBS: usize = 30;

fn clamp_unconstrained(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.clamp(-UNCONSTRAINED_LIMIT, UNCONSTRAINED_LIMIT)).collect()
}

/// Maximizes the Gaussian pseudo-likelihood over the family parameters, with
/// the nuisance mean and variance profiled out, then records the empirical
/// residuals.
pub fn fit_conditional<F: Family + ?Sized>(
    family: &F,
    data: &ConditionalData,
    init: &[f64],
    opts: &OptimOptions,
) -> Result<ConditionalFit> {
    if data.len() < MIN_CONDITIONAL_OBS {
        return Err(Error::insufficient(format!(
            "conditional fit needs {MIN_CONDITIONAL_OBS} observations, got {}",
            data.len()
        )));
    }
    if init.len() != family.n_params() {
        return Err(Error::invalid("initial parameter vector has the wrong length"));
    }
    let obj = |v: &[f64]| profile_objective(family, data, &family.natural(&clamp_unconstrained(v)));
    let v0 = clamp_unconstrained(&family.unconstrained(init));
    let best = minimize(&obj, &v0, opts);
    if !best.value.is_finite() {
        return Err(Error::Fit {
            message: "pseudo-likelihood is not finite at any visited point".into(),
            best: family.natural(&clamp_unconstrained(&best.x)),
            grad_norm: best.grad_norm,
        });
    }
    let v = clamp_unconstrained(&best.x);
    let theta = family.natural(&v);
    let clamped = v.iter().any(|x| x.abs() >= UNCONSTRAINED_LIMIT);
    let boundary = clamped || family.at_boundary(&theta);
    if !best.converged && !boundary && best.grad_norm > 1e-3 * (1.0 + best.value.abs()) {
        return Err(Error::Fit {
            message: "optimizer did not converge after restarts".into(),
            best: theta,
            grad_norm: best.grad_norm,
        });
    }
    let res = residuals(family, data, &theta);
    let (mu, sigma2) = profile_nuisance(&res, data.n_resp);
    Ok(ConditionalFit {
        theta,
        mu,
        sigma2,
        residuals: res,
        n_resp: data.n_resp,
        neg_log_lik: best.value,
        grad_norm: best.grad_norm,
        converged: best.converged,
        boundary,
    })
}

impl ConditionalFit {
    pub fn residual_rows(&self) -> Vec<Vec<f64>> {
        self.residuals.chunks(self.n_resp).map(|c| c.to_vec()).collect()
    }

    pub fn residual_sample(&self) -> Result<ResidualSample> {
        ResidualSample::lenient(&self.residual_rows())
    }

    /// Gradient of the profiled objective in natural coordinates.
    pub fn natural_gradient<F: Family + ?Sized>(&self, family: &F, data: &ConditionalData) -> Vec<f64> {
        numerical_gradient(&|t: &[f64]| profile_objective(family, data, t), &self.theta)
    }
}

/// Fits the conditional-extremes pair to one response column.
pub fn fit_ht(anchor: &[f64], response: &[f64], opts: &OptimOptions) -> Result<ConditionalFit> {
    let data = ConditionalData::pairs(anchor.to_vec(), response.to_vec())?;
    fit_conditional(&HtFamily, &data, &ht_start(anchor, response), opts)
}

/// Least-squares slope through the origin as a starting alpha, beta = 0.3.
fn ht_start(anchor: &[f64], response: &[f64]) -> Vec<f64> {
    let sxy: f64 = anchor.iter().zip(response).map(|(x, y)| x * y).sum();
    let sxx: f64 = anchor.iter().map(|x| x * x).sum();
    let a = if sxx > 0.0 { (sxy / sxx).clamp(-0.95, 0.95) } else { 0.0 };
    vec![a, 0.3]
}
