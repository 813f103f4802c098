//! Excursions above a Laplace-scale threshold, their peak/pre/post split,
//! and empirical extremal diagnostics (chi and survival curves).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::MetOceanSeries;
use crate::error::{Error, Result};
use crate::util::{percentile_interval, stream_rng};

/// Rows of context kept on each side of an observed excursion; enough for
/// chain orders up to 6.
pub const DEFAULT_PAD: usize = 6;

/// A maximal run of first-component exceedances, stored together with a few
/// neighbouring rows on either side.
///
/// All indices (`a`, `b`, `i_star`, `start`) share one time frame; row `r`
/// of the stored columns is time `start + r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub a: usize,
    pub b: usize,
    pub i_star: usize,
    /// The run touches the edge of the series, so its true extent is unknown.
    pub censored: bool,
    pub start: usize,
    /// Laplace-scale (hs, ws).
    pub y: Vec<[f64; 2]>,
    /// Physical columns; empty when only Laplace values are known.
    pub hs: Vec<f64>,
    pub ws: Vec<f64>,
    pub theta_h: Vec<f64>,
    pub theta_w: Vec<f64>,
}

impl Excursion {
    pub fn len(&self) -> usize {
        self.b - self.a + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn end(&self) -> usize {
        self.start + self.y.len()
    }

    pub fn has_physical(&self) -> bool {
        self.hs.len() == self.y.len()
    }

    /// Laplace row at absolute time `t`, if stored.
    pub fn y_at(&self, t: isize) -> Option<[f64; 2]> {
        if t < self.start as isize {
            return None;
        }
        self.y.get(t as usize - self.start).copied()
    }

    fn rel(&self, t: usize) -> usize {
        t - self.start
    }

    /// Laplace rows `a..=b`.
    pub fn core(&self) -> &[[f64; 2]] {
        &self.y[self.rel(self.a)..=self.rel(self.b)]
    }

    pub fn peak(&self) -> f64 {
        self.y[self.rel(self.i_star)][0]
    }

    /// Physical hs at the peak.
    pub fn peak_hs(&self) -> Option<f64> {
        self.hs.get(self.rel(self.i_star)).copied()
    }

    pub fn peak_theta_h(&self) -> Option<f64> {
        self.theta_h.get(self.rel(self.i_star)).copied()
    }

    /// Physical rows `a..=b` as (hs, ws, theta_h, theta_w).
    pub fn physical_core(&self) -> Option<PhysicalPath> {
        if !self.has_physical() {
            return None;
        }
        let r = self.rel(self.a)..=self.rel(self.b);
        Some(PhysicalPath {
            hs: self.hs[r.clone()].to_vec(),
            ws: self.ws[r.clone()].to_vec(),
            theta_h: self.theta_h[r.clone()].to_vec(),
            theta_w: self.theta_w[r].to_vec(),
            i_star: self.i_star - self.a,
        })
    }
}

/// Physical trajectory of an excursion core, indexed from its first exceedance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalPath {
    pub hs: Vec<f64>,
    pub ws: Vec<f64>,
    pub theta_h: Vec<f64>,
    pub theta_w: Vec<f64>,
    pub i_star: usize,
}

/// Extracts excursions of the first component above `u`, keeping `pad`
/// context rows each side.
pub fn extract_excursions(y: &[[f64; 2]], u: f64, pad: usize) -> Vec<Excursion> {
    extract_impl(y, None, u, pad)
}

/// As [`extract_excursions`], also carrying the physical series.
pub fn extract_with_physical(y: &[[f64; 2]], series: &MetOceanSeries, u: f64, pad: usize) -> Result<Vec<Excursion>> {
    if y.len() != series.len() {
        return Err(Error::invalid("Laplace and physical series differ in length"));
    }
    Ok(extract_impl(y, Some(series), u, pad))
}

fn extract_impl(y: &[[f64; 2]], series: Option<&MetOceanSeries>, u: f64, pad: usize) -> Vec<Excursion> {
    let n = y.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if y[i][0] <= u {
            i += 1;
            continue;
        }
        let a = i;
        while i + 1 < n && y[i + 1][0] > u {
            i += 1;
        }
        let b = i;
        let mut i_star = a;
        for t in a..=b {
            if y[t][0] > y[i_star][0] {
                i_star = t;
            }
        }
        let start = a.saturating_sub(pad);
        let end = (b + pad + 1).min(n);
        let (hs, ws, theta_h, theta_w) = match series {
            Some(s) => (
                s.hs[start..end].to_vec(),
                s.ws[start..end].to_vec(),
                s.theta_h[start..end].to_vec(),
                s.theta_w[start..end].to_vec(),
            ),
            None => Default::default(),
        };
        out.push(Excursion {
            a,
            b,
            i_star,
            censored: a == 0 || b == n - 1,
            start,
            y: y[start..end].to_vec(),
            hs,
            ws,
            theta_h,
            theta_w,
        });
        i += 1;
    }
    out
}

/// The 2k-1 rows centred on the excursion maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakPeriod {
    pub k: usize,
    pub rows: Vec<[f64; 2]>,
}

impl PeakPeriod {
    /// Row at offset `i` from the peak, `-(k-1) <= i <= k-1`.
    pub fn at(&self, i: isize) -> [f64; 2] {
        self.rows[(i + self.k as isize - 1) as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Absolute times `a..=i_star`.
    pub pre: Vec<usize>,
    pub peak: PeakPeriod,
    /// Absolute times `i_star..=b`.
    pub post: Vec<usize>,
}

/// Splits an excursion into its pre-peak, peak and post-peak periods.
pub fn partition(e: &Excursion, k: usize) -> Result<Partition> {
    if k == 0 {
        return Err(Error::invalid("order k must be at least 1"));
    }
    let lo = e.i_star as isize - (k as isize - 1);
    let hi = e.i_star + k - 1;
    if lo < e.start as isize || hi >= e.end() {
        return Err(Error::CensoredPeak { k, i_star: e.i_star });
    }
    let rows = (lo..=hi as isize).map(|t| e.y_at(t).expect("inside stored rows")).collect();
    Ok(Partition {
        pre: (e.a..=e.i_star).collect(),
        peak: PeakPeriod { k, rows },
        post: (e.i_star..=e.b).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChiPair {
    /// hs then hs
    HH,
    /// hs then ws
    HW,
    /// ws then ws
    WW,
}

impl ChiPair {
    fn columns(self) -> (usize, usize) {
        match self {
            ChiPair::HH => (0, 0),
            ChiPair::HW => (0, 1),
            ChiPair::WW => (1, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiEstimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub exceedances: usize,
}

pub const MIN_CHI_EXCEEDANCES: usize = 50;

/// Empirical `P(Y_{t+lag, j2} > u | Y_{t, j1} > u)` with a 95% bootstrap
/// band from resampling whole runs of conditioning exceedances.
pub fn chi_estimate(y: &[[f64; 2]], u: f64, lag: usize, pair: ChiPair, n_boot: usize, seed: u64) -> Result<ChiEstimate> {
    if lag == 0 {
        return Err(Error::invalid("lag must be at least 1"));
    }
    let (c1, c2) = pair.columns();
    let n = y.len();
    // per run of conditioning exceedances: (hits, trials)
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut in_run = false;
    for t in 0..n.saturating_sub(lag) {
        if y[t][c1] > u {
            if !in_run {
                runs.push((0, 0));
                in_run = true;
            }
            let r = runs.last_mut().expect("open run");
            r.1 += 1;
            if y[t + lag][c2] > u {
                r.0 += 1;
            }
        } else {
            in_run = false;
        }
    }
    let trials: usize = runs.iter().map(|r| r.1).sum();
    if trials < MIN_CHI_EXCEEDANCES {
        return Err(Error::insufficient(format!(
            "chi needs at least {MIN_CHI_EXCEEDANCES} exceedances, got {trials}"
        )));
    }
    let hits: usize = runs.iter().map(|r| r.0).sum();
    let value = hits as f64 / trials as f64;
    let (lo, hi) = cluster_bootstrap_band(&runs, n_boot, seed, 0.95).unwrap_or((value, value));
    Ok(ChiEstimate {
        value,
        lo,
        hi,
        exceedances: trials,
    })
}

/// Chi from excursions alone: conditioning exceedances are the rows `a..=b`
/// of each excursion (so only hs-anchored pairs make sense), and rows past
/// the stored context count as non-exceedances. With at least `lag` context
/// rows this equals the full-series estimate for the same exceedances.
pub fn excursion_chi(excursions: &[Excursion], u: f64, lag: usize, pair: ChiPair) -> Result<f64> {
    if pair == ChiPair::WW {
        return Err(Error::invalid("excursions only condition on hs exceedances"));
    }
    let (_, c2) = pair.columns();
    let (mut hits, mut trials) = (0usize, 0usize);
    for e in excursions {
        for t in e.a..=e.b {
            trials += 1;
            if e.y_at((t + lag) as isize).is_some_and(|r| r[c2] > u) {
                hits += 1;
            }
        }
    }
    if trials == 0 {
        return Err(Error::insufficient("no exceedances"));
    }
    Ok(hits as f64 / trials as f64)
}

/// Percentile band of a ratio estimator sum(hits)/sum(trials) under
/// resampling of whole clusters.
pub fn cluster_bootstrap_band(clusters: &[(usize, usize)], n_boot: usize, seed: u64, level: f64) -> Option<(f64, f64)> {
    if n_boot == 0 || clusters.is_empty() {
        return None;
    }
    let mut rng = stream_rng(seed, 0xc4);
    let m = clusters.len();
    let mut stats = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let (mut h, mut t) = (0usize, 0usize);
        for _ in 0..m {
            let c = clusters[rng.random_range(0..m)];
            h += c.0;
            t += c.1;
        }
        if t > 0 {
            stats.push(h as f64 / t as f64);
        }
    }
    Some(percentile_interval(&stats, level))
}

/// Survival probabilities indexed by lag from the peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub taus: Vec<i64>,
    pub prob: Vec<f64>,
    pub count: usize,
}

impl SurvivalCurve {
    pub fn at(&self, tau: i64) -> Option<f64> {
        self.taus.iter().position(|t| *t == tau).map(|i| self.prob[i])
    }
}

pub const MIN_SURVIVAL_EXCURSIONS: usize = 20;

/// Whether the excursion stays above the threshold from its peak out to lag `tau`.
pub fn survives(e: &Excursion, tau: i64) -> bool {
    if tau >= 0 {
        (e.b - e.i_star) as i64 >= tau
    } else {
        (e.i_star - e.a) as i64 >= -tau
    }
}

fn select_by_peak<'a>(excursions: &'a [Excursion], peak_range: (f64, f64)) -> Result<Vec<&'a Excursion>> {
    let mut sel = Vec::new();
    for e in excursions {
        let h = e
            .peak_hs()
            .ok_or_else(|| Error::invalid("survival curve needs physical hs on every excursion"))?;
        if h >= peak_range.0 && h <= peak_range.1 {
            sel.push(e);
        }
    }
    if sel.len() < MIN_SURVIVAL_EXCURSIONS {
        return Err(Error::insufficient(format!(
            "survival curve needs {MIN_SURVIVAL_EXCURSIONS} excursions with peak hs in [{}, {}], got {}",
            peak_range.0,
            peak_range.1,
            sel.len()
        )));
    }
    Ok(sel)
}

fn curve_of(sel: &[&Excursion], max_tau: i64) -> Vec<f64> {
    (-max_tau..=max_tau)
        .map(|tau| sel.iter().filter(|e| survives(e, tau)).count() as f64 / sel.len() as f64)
        .collect()
}

/// Fraction of excursions with physical peak hs inside `peak_range` that stay
/// above the threshold from the peak out to each lag in `-max_tau..=max_tau`.
pub fn survival_curve(excursions: &[Excursion], peak_range: (f64, f64), max_tau: i64) -> Result<SurvivalCurve> {
    let sel = select_by_peak(excursions, peak_range)?;
    Ok(SurvivalCurve {
        taus: (-max_tau..=max_tau).collect(),
        prob: curve_of(&sel, max_tau),
        count: sel.len(),
    })
}

/// Pointwise percentile band of the survival curve from resampling excursions.
pub fn survival_band(
    excursions: &[Excursion],
    peak_range: (f64, f64),
    max_tau: i64,
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sel = select_by_peak(excursions, peak_range)?;
    let mut rng = stream_rng(seed, 0x5a);
    let m = sel.len();
    let width = (2 * max_tau + 1) as usize;
    let mut reps: Vec<Vec<f64>> = vec![Vec::with_capacity(n_boot); width];
    for _ in 0..n_boot {
        let boot: Vec<&Excursion> = (0..m).map(|_| sel[rng.random_range(0..m)]).collect();
        for (j, p) in curve_of(&boot, max_tau).into_iter().enumerate() {
            reps[j].push(p);
        }
    }
    let mut lo = Vec::with_capacity(width);
    let mut hi = Vec::with_capacity(width);
    for r in &reps {
        let (l, h) = percentile_interval(r, level);
        lo.push(l);
        hi.push(h);
    }
    Ok((lo, hi))
}
