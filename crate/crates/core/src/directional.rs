//! Wave direction as a heteroscedastic AR process on probit-transformed
//! changes, and wind direction as wave direction plus an AR offset.
//!
//! Every model comes in two variants fitted separately: one running forward
//! in time from the storm peak and one running backward.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::condext::ResidualSample;
use crate::data::wrap_degrees;
use crate::error::{Error, Result};
use crate::excursions::Excursion;
use crate::mmem::Direction;
use crate::optim::{minimize, OptimOptions};
use crate::util::{normal_cdf, normal_quantile, quantile_sorted, sorted_copy, HazenCdf};

pub const MIN_DIRECTION_CHANGES: usize = 100;

/// Largest number of order statistics kept for the change distribution.
const CDF_GRID: usize = 2000;

/// Signed circular difference `a - b` in degrees, in `[-180, 180)`.
pub fn circular_difference(a: f64, b: f64) -> f64 {
    let d = (a - b + 180.0).rem_euclid(360.0) - 180.0;
    if d >= 180.0 {
        -180.0
    } else {
        d
    }
}

/// Innovation standard deviation at wave height `h`.
pub fn zeta(h: f64, lambda: [f64; 3]) -> f64 {
    (lambda[0] + lambda[1] * (-lambda[2] * h).exp()).sqrt()
}

/// Empirical distribution of direction changes, kept as a grid of order
/// statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeCdf {
    cdf: HazenCdf,
}

impl ChangeCdf {
    pub fn new(changes: &[f64]) -> Self {
        if changes.len() <= CDF_GRID {
            return Self { cdf: HazenCdf::new(changes) };
        }
        let s = sorted_copy(changes);
        let grid: Vec<f64> = (0..CDF_GRID)
            .map(|i| quantile_sorted(&s, (i as f64 + 0.5) / CDF_GRID as f64))
            .collect();
        Self { cdf: HazenCdf::new(&grid) }
    }

    pub fn to_gaussian(&self, d: f64) -> f64 {
        normal_quantile(self.cdf.cdf(d))
    }

    pub fn from_gaussian(&self, z: f64) -> f64 {
        self.cdf.quantile(normal_cdf(z))
    }

    pub fn grid(&self) -> &[f64] {
        self.cdf.sorted()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveDirModel {
    pub phi: Vec<f64>,
    pub lambda: [f64; 3],
    pub changes: ChangeCdf,
}

impl WaveDirModel {
    pub fn order(&self) -> usize {
        self.phi.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindOffsetModel {
    pub phi: Vec<f64>,
    pub residuals: ResidualSample,
}

/// Both variables, both directions, plus the observed storm-peak
/// (wave direction, wind offset) pairs used as anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionModel {
    pub wave_forward: WaveDirModel,
    pub wave_backward: WaveDirModel,
    pub wind_forward: WindOffsetModel,
    pub wind_backward: WindOffsetModel,
    pub anchors: Vec<[f64; 2]>,
}

/// Stationarity of an AR polynomial `1 - sum phi_j z^j`, via the step-down
/// recursion to partial autocorrelations (all must lie strictly inside (-1, 1)).
pub fn is_stationary(phi: &[f64]) -> bool {
    let mut a = phi.to_vec();
    while let Some(&k) = a.last() {
        if !(k.abs() < 1.0) {
            return false;
        }
        let p = a.len();
        let den = 1.0 - k * k;
        a = (0..p - 1).map(|j| (a[j] + k * a[p - 2 - j]) / den).collect();
    }
    true
}

/// One excursion side read outward from the peak: direction changes, the
/// wave height where each change starts, and the wind offsets (which have
/// one more entry, starting at the peak).
#[derive(Debug, Clone, PartialEq)]
pub struct OutwardRun {
    pub changes: Vec<f64>,
    pub h: Vec<f64>,
    pub gamma: Vec<f64>,
}

pub fn outward_runs(excursions: &[Excursion], dir: Direction) -> Vec<OutwardRun> {
    excursions
        .iter()
        .filter_map(|e| e.physical_core())
        .map(|p| {
            let n = p.hs.len();
            let idx: Vec<usize> = match dir {
                Direction::Forward => (p.i_star..n).collect(),
                Direction::Backward => (0..=p.i_star).rev().collect(),
            };
            let changes = idx.windows(2).map(|w| circular_difference(p.theta_h[w[1]], p.theta_h[w[0]])).collect();
            let h = idx.windows(2).map(|w| p.hs[w[0]]).collect();
            let gamma = idx.iter().map(|&i| circular_difference(p.theta_w[i], p.theta_h[i])).collect();
            OutwardRun { changes, h, gamma }
        })
        .collect()
}

fn hetero_nll(phi: &[f64], lambda: [f64; 3], runs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let p = phi.len();
    let mut nll = 0.0;
    for (d, h) in runs {
        for t in p..d.len() {
            let m: f64 = (1..=p).map(|j| phi[j - 1] * d[t - j]).sum();
            let v = lambda[0] + lambda[1] * (-lambda[2] * h[t]).exp();
            let r = d[t] - m;
            nll += 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + r * r / v);
        }
    }
    nll
}

/// Least squares of each value on its `p` predecessors within runs.
fn ar_least_squares(runs: &[&[f64]], p: usize) -> Vec<f64> {
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for d in runs {
        for t in p..d.len() {
            for i in 0..p {
                xty[i] += d[t - 1 - i] * d[t];
                for j in 0..p {
                    xtx[i][j] += d[t - 1 - i] * d[t - 1 - j];
                }
            }
        }
    }
    solve(xtx, xty)
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let p = b.len();
    for c in 0..p {
        let piv = (c..p).max_by(|x, y| a[*x][c].abs().total_cmp(&a[*y][c].abs())).expect("rows");
        a.swap(c, piv);
        b.swap(c, piv);
        if a[c][c].abs() < 1e-300 {
            continue;
        }
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..p {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..p).map(|i| if a[i][i].abs() < 1e-300 { 0.0 } else { b[i] / a[i][i] }).collect()
}

/// Maximum likelihood for `delta_t = sum phi_j delta_{t-j} + zeta(h_t) eps_t`,
/// conditioning on the first `p` values of each run.
pub fn fit_hetero_ar(runs: &[(Vec<f64>, Vec<f64>)], p: usize, opts: &OptimOptions) -> Result<(Vec<f64>, [f64; 3])> {
    let n_obs: usize = runs.iter().map(|(d, _)| d.len().saturating_sub(p)).sum();
    if n_obs < MIN_DIRECTION_CHANGES {
        return Err(Error::insufficient(format!(
            "direction model needs {MIN_DIRECTION_CHANGES} changes, got {n_obs}"
        )));
    }
    let views: Vec<&[f64]> = runs.iter().map(|(d, _)| d.as_slice()).collect();
    let phi0 = ar_least_squares(&views, p);
    let mut ss = 0.0;
    for d in &views {
        for t in p..d.len() {
            let m: f64 = (1..=p).map(|j| phi0[j - 1] * d[t - j]).sum();
            ss += (d[t] - m).powi(2);
        }
    }
    let v0 = (ss / n_obs as f64).max(1e-8);
    let mut x0 = phi0;
    x0.extend([(0.5 * v0).ln(), (0.5 * v0).ln(), 0.3f64.ln()]);
    let unpack = |x: &[f64]| -> [f64; 3] { [x[p].exp(), x[p + 1].exp(), x[p + 2].exp()] };
    let f = |x: &[f64]| {
        if x[p..].iter().any(|v| v.abs() > 30.0) {
            return f64::INFINITY;
        }
        hetero_nll(&x[..p], unpack(x), runs)
    };
    let m = minimize(&f, &x0, opts);
    if !m.value.is_finite() {
        return Err(Error::Fit {
            message: "direction model likelihood is not finite".into(),
            best: m.x,
            grad_norm: m.grad_norm,
        });
    }
    Ok((m.x[..p].to_vec(), unpack(&m.x)))
}

pub fn fit_wave_direction(excursions: &[Excursion], dir: Direction, p: usize, opts: &OptimOptions) -> Result<WaveDirModel> {
    let runs = outward_runs(excursions, dir);
    let all: Vec<f64> = runs.iter().flat_map(|r| r.changes.iter().cloned()).collect();
    if all.len() < MIN_DIRECTION_CHANGES {
        return Err(Error::insufficient(format!(
            "direction model needs {MIN_DIRECTION_CHANGES} changes, got {}",
            all.len()
        )));
    }
    if all.iter().all(|d| *d == all[0]) {
        return Err(Error::invalid("direction changes are all equal; the change distribution is degenerate"));
    }
    let changes = ChangeCdf::new(&all);
    let gaussian: Vec<(Vec<f64>, Vec<f64>)> = runs
        .iter()
        .map(|r| (r.changes.iter().map(|d| changes.to_gaussian(*d)).collect(), r.h.clone()))
        .collect();
    let (phi, lambda) = fit_hetero_ar(&gaussian, p, opts)?;
    Ok(WaveDirModel { phi, lambda, changes })
}

pub fn fit_wind_offset(excursions: &[Excursion], dir: Direction, p: usize) -> Result<WindOffsetModel> {
    let runs = outward_runs(excursions, dir);
    let views: Vec<&[f64]> = runs.iter().map(|r| r.gamma.as_slice()).collect();
    let n_obs: usize = views.iter().map(|g| g.len().saturating_sub(p)).sum();
    if n_obs < MIN_DIRECTION_CHANGES {
        return Err(Error::insufficient(format!(
            "wind offset model needs {MIN_DIRECTION_CHANGES} transitions, got {n_obs}"
        )));
    }
    let phi = ar_least_squares(&views, p);
    if !is_stationary(&phi) {
        return Err(Error::Fit {
            message: format!("wind offset AR coefficients {phi:?} are not stationary"),
            best: phi.clone(),
            grad_norm: f64::NAN,
        });
    }
    let mut res = Vec::with_capacity(n_obs);
    for g in &views {
        for t in p..g.len() {
            let m: f64 = (1..=p).map(|j| phi[j - 1] * g[t - j]).sum();
            res.push(vec![g[t] - m]);
        }
    }
    Ok(WindOffsetModel {
        phi,
        residuals: ResidualSample::lenient(&res)?,
    })
}

pub fn fit_directions(excursions: &[Excursion], p1: usize, p2: usize, opts: &OptimOptions) -> Result<DirectionModel> {
    let anchors: Vec<[f64; 2]> = excursions
        .iter()
        .filter(|e| !e.censored)
        .filter_map(|e| e.physical_core())
        .map(|p| {
            let i = p.i_star;
            [p.theta_h[i], circular_difference(p.theta_w[i], p.theta_h[i])]
        })
        .collect();
    if anchors.is_empty() {
        return Err(Error::insufficient("no excursions with physical directions"));
    }
    Ok(DirectionModel {
        wave_forward: fit_wave_direction(excursions, Direction::Forward, p1, opts)?,
        wave_backward: fit_wave_direction(excursions, Direction::Backward, p1, opts)?,
        wind_forward: fit_wind_offset(excursions, Direction::Forward, p2)?,
        wind_backward: fit_wind_offset(excursions, Direction::Backward, p2)?,
        anchors,
    })
}

/// Wave directions at times `idx` (read outward, `idx[0]` the peak); the wave
/// height at each time is looked up from its own direction.
fn wave_outward<R: Rng + ?Sized, H: FnMut(usize, f64) -> f64>(
    m: &WaveDirModel,
    idx: &[usize],
    theta0: f64,
    hs_at: &mut H,
    rng: &mut R,
) -> Vec<f64> {
    let p = m.order();
    let mut lags = vec![0.0; p];
    let mut theta = vec![theta0];
    for &i in &idx[..idx.len() - 1] {
        let last = *theta.last().expect("non-empty");
        let h = hs_at(i, last);
        let mean: f64 = m.phi.iter().zip(&lags).map(|(a, b)| a * b).sum();
        let delta = mean + zeta(h, m.lambda) * rng.sample::<f64, _>(StandardNormal);
        if p > 0 {
            lags.rotate_right(1);
            lags[0] = delta;
        }
        theta.push(wrap_degrees(last + m.changes.from_gaussian(delta)));
    }
    theta
}

fn offset_outward<R: Rng + ?Sized>(m: &WindOffsetModel, len: usize, gamma0: f64, rng: &mut R) -> Vec<f64> {
    let p = m.phi.len();
    let mut g = vec![gamma0];
    while g.len() < len {
        let t = g.len();
        let mean: f64 = (1..=p.min(t)).map(|j| m.phi[j - 1] * g[t - j]).sum();
        g.push(mean + m.residuals.sample(rng)[0]);
    }
    g
}

/// Wave and wind directions over `n` time steps with the storm peak at
/// `i_star`, anchored there by `(theta_h, gamma)`. `hs_at(i, theta_h)` gives
/// the wave height at time `i` when the wave direction there is `theta_h`.
pub fn simulate_directions_with<R: Rng + ?Sized, H: FnMut(usize, f64) -> f64>(
    m: &DirectionModel,
    n: usize,
    i_star: usize,
    anchor: [f64; 2],
    mut hs_at: H,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let fwd: Vec<usize> = (i_star..n).collect();
    let bwd: Vec<usize> = (0..=i_star).rev().collect();
    let th0 = wrap_degrees(anchor[0]);
    let wave_f = wave_outward(&m.wave_forward, &fwd, th0, &mut hs_at, rng);
    let wave_b = wave_outward(&m.wave_backward, &bwd, th0, &mut hs_at, rng);
    let gam_f = offset_outward(&m.wind_forward, fwd.len(), anchor[1], rng);
    let gam_b = offset_outward(&m.wind_backward, bwd.len(), anchor[1], rng);
    let mut theta_h = vec![0.0; n];
    let mut theta_w = vec![0.0; n];
    for (s, &i) in bwd.iter().enumerate() {
        theta_h[i] = wave_b[s];
        theta_w[i] = wrap_degrees(wave_b[s] + gam_b[s]);
    }
    for (s, &i) in fwd.iter().enumerate() {
        theta_h[i] = wave_f[s];
        theta_w[i] = wrap_degrees(wave_f[s] + gam_f[s]);
    }
    (theta_h, theta_w)
}

/// As [`simulate_directions_with`] for a known wave-height path.
pub fn simulate_directions<R: Rng + ?Sized>(
    m: &DirectionModel,
    hs: &[f64],
    i_star: usize,
    anchor: [f64; 2],
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    simulate_directions_with(m, hs.len(), i_star, anchor, |i, _| hs[i], rng)
}

/// Draws a storm-peak anchor uniformly from the observed ones.
pub fn sample_anchor<R: Rng + ?Sized>(m: &DirectionModel, rng: &mut R) -> [f64; 2] {
    m.anchors[rng.random_range(0..m.anchors.len())]
}
