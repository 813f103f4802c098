//! Extremal vector autoregression: `Y_{t+k} = sum_i Phi^(i) Y_{t+k-i} + y^B eps`
//! with `y = Y_{t,1}` the window's anchoring exceedance, plus the
//! reparameterization that decorrelates the `Phi` estimators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::condext::{beta_from, beta_to, fit_conditional, fit_ht, ConditionalData, ConditionalFit, Family, ResidualSample};
use crate::error::{Error, Result};
use crate::excursions::Excursion;
use crate::mmem::{chain_windows, Direction};
use crate::optim::OptimOptions;

/// `phi[i - 1][out][in]` is the coefficient of input variable `in` at lag `i`.
pub type PhiMatrices = Vec<Vec<Vec<f64>>>;

/// Dependence of `Y_{t+m, j}` on the anchor `Y_{t, 1}`, for `m = 0..=k`;
/// `alpha[0][0] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReparamMap {
    pub alpha: Vec<Vec<f64>>,
}

impl ReparamMap {
    pub fn new(alpha: Vec<Vec<f64>>) -> Result<Self> {
        if alpha.len() < 2 || alpha[0].is_empty() || alpha.iter().any(|r| r.len() != alpha[0].len()) {
            return Err(Error::invalid("reparameterization map needs k + 1 rows of equal width"));
        }
        if alpha[0][0] != 1.0 {
            return Err(Error::invalid("the anchor's own coefficient must be 1"));
        }
        if let Some(a) = alpha.iter().flatten().find(|a| !(a.abs() <= 1.0)) {
            return Err(Error::invalid(format!("coefficient {a} outside [-1, 1]")));
        }
        Ok(Self { alpha })
    }

    pub fn k(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn d(&self) -> usize {
        self.alpha[0].len()
    }

    /// Multipliers in history order `s = m * d + j`, `m = 0..k`.
    fn history_alphas(&self) -> Vec<f64> {
        self.alpha[..self.k()].iter().flatten().cloned().collect()
    }

    /// Per-lag conditional-extremes fits on the chain windows.
    pub fn estimate(windows: &[Vec<[f64; 2]>], k: usize, opts: &OptimOptions) -> Result<Self> {
        let anchor: Vec<f64> = windows.iter().map(|w| w[0][0]).collect();
        let mut alpha = vec![vec![0.0; 2]; k + 1];
        alpha[0][0] = 1.0;
        for (m, row) in alpha.iter_mut().enumerate() {
            for (j, a) in row.iter_mut().enumerate() {
                if m == 0 && j == 0 {
                    continue;
                }
                let resp: Vec<f64> = windows.iter().map(|w| w[m][j]).collect();
                *a = fit_ht(&anchor, &resp, opts)?.theta[0];
            }
        }
        Self::new(alpha)
    }
}

/// Coefficients of one output row in history order `s = m * d + j`, where
/// entry `s` multiplies `Y_{t+m, j}` (so it is `Phi^(k-m)[out][j]`).
pub fn phi_row_sequence(phi: &PhiMatrices, out: usize) -> Vec<f64> {
    let k = phi.len();
    let d = phi[0].len();
    let mut s = Vec::with_capacity(k * d);
    for m in 0..k {
        for j in 0..d {
            s.push(phi[k - m - 1][out][j]);
        }
    }
    s
}

fn set_phi_row_sequence(phi: &mut PhiMatrices, out: usize, seq: &[f64]) {
    let k = phi.len();
    let d = phi[0].len();
    for m in 0..k {
        for j in 0..d {
            phi[k - m - 1][out][j] = seq[m * d + j];
        }
    }
}

fn check_divisors(a: &[f64], d: usize) -> Result<()> {
    for (s, v) in a.iter().enumerate().skip(1) {
        if *v == 0.0 {
            return Err(Error::ReparamUndefined { lag: s / d, column: s % d });
        }
    }
    Ok(())
}

/// Raw coefficients of one output row to decorrelated coordinates.
pub fn reparameterize_sequence(raw: &[f64], a: &[f64], target: f64, d: usize) -> Result<Vec<f64>> {
    check_divisors(a, d)?;
    let mut t = Vec::with_capacity(raw.len());
    t.push(raw[0] - target);
    for s in 1..raw.len() {
        t.push(raw[s] + t[s - 1] * a[s - 1] / a[s]);
    }
    Ok(t)
}

/// Inverse of [`reparameterize_sequence`].
pub fn unreparameterize_sequence(tilde: &[f64], a: &[f64], target: f64, d: usize) -> Result<Vec<f64>> {
    check_divisors(a, d)?;
    let mut r = Vec::with_capacity(tilde.len());
    r.push(target + tilde[0]);
    for s in 1..tilde.len() {
        r.push(-tilde[s - 1] * a[s - 1] / a[s] + tilde[s]);
    }
    Ok(r)
}

fn check_shape(phi: &PhiMatrices, m: &ReparamMap) -> Result<()> {
    let d = m.d();
    if phi.len() != m.k() || phi.iter().any(|p| p.len() != d || p.iter().any(|r| r.len() != d)) {
        return Err(Error::invalid("Phi shape does not match the reparameterization map"));
    }
    Ok(())
}

pub fn reparameterize(phi: &PhiMatrices, m: &ReparamMap) -> Result<PhiMatrices> {
    check_shape(phi, m)?;
    let a = m.history_alphas();
    let mut out = phi.clone();
    for l in 0..m.d() {
        let t = reparameterize_sequence(&phi_row_sequence(phi, l), &a, m.alpha[m.k()][l], m.d())?;
        set_phi_row_sequence(&mut out, l, &t);
    }
    Ok(out)
}

pub fn unreparameterize(tilde: &PhiMatrices, m: &ReparamMap) -> Result<PhiMatrices> {
    check_shape(tilde, m)?;
    let a = m.history_alphas();
    let mut out = tilde.clone();
    for l in 0..m.d() {
        let r = unreparameterize_sequence(&phi_row_sequence(tilde, l), &a, m.alpha[m.k()][l], m.d())?;
        set_phi_row_sequence(&mut out, l, &r);
    }
    Ok(out)
}

/// One output row of the EVAR transition. Parameters are the row's
/// coefficients in history order, followed by `B` unless it is pinned at 0.
#[derive(Debug, Clone)]
pub struct EvarRowFamily {
    pub k: usize,
    pub out: usize,
    pub free_b: bool,
    /// Optimize in decorrelated coordinates: (multipliers, target).
    pub reparam: Option<(Vec<f64>, f64)>,
}

impl Family for EvarRowFamily {
    fn n_params(&self) -> usize {
        2 * self.k + usize::from(self.free_b)
    }

    fn location_scale(&self, theta: &[f64], anchor: f64, cov: &[f64], _j: usize) -> (f64, f64) {
        let n = 2 * self.k;
        let loc = theta[..n].iter().zip(cov).map(|(p, x)| p * x).sum();
        let scale = if self.free_b { anchor.powf(theta[n]) } else { 1.0 };
        (loc, scale)
    }

    fn natural(&self, v: &[f64]) -> Vec<f64> {
        let n = 2 * self.k;
        let mut theta = match &self.reparam {
            Some((a, target)) => unreparameterize_sequence(&v[..n], a, *target, 2).expect("divisors checked"),
            None => v[..n].to_vec(),
        };
        if self.free_b {
            theta.push(beta_from(v[n]));
        }
        theta
    }

    fn unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        let n = 2 * self.k;
        let mut v = match &self.reparam {
            Some((a, target)) => reparameterize_sequence(&theta[..n], a, *target, 2).expect("divisors checked"),
            None => theta[..n].to_vec(),
        };
        if self.free_b {
            v.push(beta_to(theta[n]));
        }
        v
    }

    fn at_boundary(&self, theta: &[f64]) -> bool {
        self.free_b && theta[2 * self.k] > 1.0 - 1e-6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvarParams {
    pub k: usize,
    pub direction: Direction,
    pub u: f64,
    pub phi: PhiMatrices,
    pub b: Vec<f64>,
    pub residuals: ResidualSample,
    pub reparam: Option<ReparamMap>,
    /// The map had a zero divisor and the fit ran in raw coordinates.
    pub raw_fallback: bool,
    pub boundary: bool,
    pub n_windows: usize,
    pub neg_log_lik: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinates {
    Raw,
    Reparameterized,
}

pub fn fit_evar(
    excursions: &[Excursion],
    k: usize,
    dir: Direction,
    u: f64,
    force_b_zero: bool,
    opts: &OptimOptions,
) -> Result<EvarParams> {
    if k == 0 {
        return Err(Error::invalid("order k must be at least 1"));
    }
    let windows = chain_windows(excursions, k, dir);
    fit_evar_windows(&windows, k, dir, u, force_b_zero, Coordinates::Reparameterized, opts)
}

/// Regression data for output row `out`: covariates are the history rows in
/// order `m * 2 + j`, the response is row `k`.
pub fn evar_data(windows: &[Vec<[f64; 2]>], k: usize, out: usize) -> Result<ConditionalData> {
    let anchor = windows.iter().map(|w| w[0][0]).collect();
    let cov = windows.iter().flat_map(|w| w[..k].iter().flatten().cloned()).collect();
    let resp = windows.iter().map(|w| w[k][out]).collect();
    ConditionalData::new(anchor, cov, 2 * k, resp, 1)
}

/// Ordinary least squares without intercept (normal equations by Gaussian
/// elimination with partial pivoting).
fn least_squares(data: &ConditionalData) -> Vec<f64> {
    let p = data.n_cov;
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..data.len() {
        let x = data.cov(i);
        let y = data.resp(i)[0];
        for r in 0..p {
            for c in 0..p {
                a[r][c] += x[r] * x[c];
            }
            a[r][p] += x[r] * y;
        }
    }
    for r in 0..p {
        a[r][r] += 1e-9 * (1.0 + a[r][r]);
    }
    for col in 0..p {
        let piv = (col..p).max_by(|x, y| a[*x][col].abs().total_cmp(&a[*y][col].abs())).expect("rows");
        a.swap(col, piv);
        for r in 0..p {
            if r != col && a[col][col] != 0.0 {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..p).map(|r| if a[r][r] != 0.0 { a[r][p] / a[r][r] } else { 0.0 }).collect()
}

pub fn fit_evar_windows(
    windows: &[Vec<[f64; 2]>],
    k: usize,
    dir: Direction,
    u: f64,
    force_b_zero: bool,
    coords: Coordinates,
    opts: &OptimOptions,
) -> Result<EvarParams> {
    if windows.iter().any(|w| w.len() != k + 1 || !(w[0][0] > u)) {
        return Err(Error::invalid("windows must have k + 1 rows and start at an exceedance"));
    }
    let mut map = None;
    let mut raw_fallback = false;
    if coords == Coordinates::Reparameterized {
        let m = ReparamMap::estimate(windows, k, opts)?;
        match check_divisors(&m.history_alphas(), 2) {
            Ok(()) => map = Some(m),
            Err(e) => {
                log::warn!("{e}; fitting EVAR in raw coordinates");
                raw_fallback = true;
            }
        }
    }
    let mut phi = vec![vec![vec![0.0; 2]; 2]; k];
    let mut b = vec![0.0; 2];
    let mut fits: Vec<ConditionalFit> = Vec::with_capacity(2);
    let mut boundary = false;
    let mut nll = 0.0;
    for out in 0..2 {
        let data = evar_data(windows, k, out)?;
        let family = EvarRowFamily {
            k,
            out,
            free_b: !force_b_zero,
            reparam: map.as_ref().map(|m| (m.history_alphas(), m.alpha[k][out])),
        };
        let mut init = least_squares(&data);
        if !force_b_zero {
            init.push(0.3);
        }
        let fit = fit_conditional(&family, &data, &init, opts)?;
        set_phi_row_sequence(&mut phi, out, &fit.theta[..2 * k]);
        if !force_b_zero {
            b[out] = fit.theta[2 * k];
        }
        boundary |= fit.boundary;
        nll += fit.neg_log_lik;
        fits.push(fit);
    }
    let rows: Vec<Vec<f64>> = (0..windows.len())
        .map(|i| vec![fits[0].residuals[i], fits[1].residuals[i]])
        .collect();
    Ok(EvarParams {
        k,
        direction: dir,
        u,
        phi,
        b,
        residuals: ResidualSample::lenient(&rows)?,
        reparam: map,
        raw_fallback,
        boundary,
        n_windows: windows.len(),
        neg_log_lik: nll,
    })
}

impl EvarParams {
    /// Deterministic part `sum_i Phi^(i) Y_{t+k-i}` for a history in chain order.
    pub fn mean_part(&self, history: &[[f64; 2]]) -> [f64; 2] {
        let k = self.k;
        let mut out = [0.0; 2];
        for (i, p) in self.phi.iter().enumerate() {
            let row = history[k - 1 - i];
            for (l, o) in out.iter_mut().enumerate() {
                *o += p[l][0] * row[0] + p[l][1] * row[1];
            }
        }
        out
    }
}

/// Next row given the last `k` rows (chain order, anchor in row 0).
pub fn evar_step<R: Rng + ?Sized>(history: &[[f64; 2]], p: &EvarParams, rng: &mut R) -> Result<[f64; 2]> {
    if history.len() != p.k {
        return Err(Error::invalid(format!("EVAR({}) needs {} history rows", p.k, p.k)));
    }
    let y = history[0][0];
    if !(y > p.u) {
        return Err(Error::Domain {
            value: y,
            message: format!("window anchor must exceed the threshold {}", p.u),
        });
    }
    let eps = p.residuals.sample(rng);
    let m = p.mean_part(history);
    Ok([m[0] + y.powf(p.b[0]) * eps[0], m[1] + y.powf(p.b[1]) * eps[1]])
}
