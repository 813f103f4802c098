//! Historical matching: draw storm-peak conditions, pick one of the closest
//! observed storms and rescale its trajectory to the drawn peak.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::wrap_degrees;
use crate::directional::circular_difference;
use crate::error::{Error, Result};
use crate::excursions::{Excursion, PhysicalPath};
use crate::margins::{bin_of, fit_gpd, Gpd, SemiParametricMarginal, MIN_BIN_EXCESSES};

/// Number of closest historical storms the match is drawn from.
pub const MATCH_POOL: usize = 20;

/// Metres of wave height per degree of direction in the dissimilarity
/// (5 degrees count as much as 0.5 m).
pub const METRES_PER_DEGREE: f64 = 0.1;

pub const MIN_REGRESSION_STORMS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StormEntry {
    pub hs_max: f64,
    pub theta_max: f64,
    /// Wind speed at the time of the wave-height maximum.
    pub ws_max: f64,
    /// Trajectory with `i_star` at the physical wave-height maximum.
    pub path: PhysicalPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StormCatalog {
    pub storms: Vec<StormEntry>,
}

impl StormCatalog {
    /// One entry per non-censored excursion with physical columns.
    pub fn from_excursions(excursions: &[Excursion]) -> Self {
        let storms = excursions
            .iter()
            .filter(|e| !e.censored)
            .filter_map(|e| e.physical_core())
            .map(|mut path| {
                let i = (0..path.hs.len())
                    .max_by(|a, b| path.hs[*a].total_cmp(&path.hs[*b]).then(b.cmp(a)))
                    .expect("non-empty core");
                path.i_star = i;
                StormEntry {
                    hs_max: path.hs[i],
                    theta_max: path.theta_h[i],
                    ws_max: path.ws[i],
                    path,
                }
            })
            .collect();
        Self { storms }
    }

    pub fn len(&self) -> usize {
        self.storms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storms.is_empty()
    }
}

pub fn hm_dissimilarity(hs1: f64, dir1: f64, hs2: f64, dir2: f64) -> f64 {
    (hs1 - hs2).abs() + METRES_PER_DEGREE * circular_difference(dir1, dir2).abs()
}

/// Indices of the `m` storms closest to `(hs, dir)`, ties broken by index.
pub fn nearest_storms(catalog: &StormCatalog, hs: f64, dir: f64, m: usize) -> Vec<usize> {
    let mut idx: Vec<(f64, usize)> = catalog
        .storms
        .iter()
        .enumerate()
        .map(|(i, s)| (hm_dissimilarity(hs, dir, s.hs_max, s.theta_max), i))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    idx.into_iter().take(m).map(|(_, i)| i).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindSpeedRegression {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma: f64,
    /// Fewer than the recommended number of storms, or an exact fit.
    pub degenerate: bool,
}

pub fn fit_windspeed_regression(catalog: &StormCatalog) -> Result<WindSpeedRegression> {
    let n = catalog.len();
    if n < 2 {
        return Err(Error::insufficient(format!("wind speed regression needs 2 storms, got {n}")));
    }
    let x: Vec<f64> = catalog.storms.iter().map(|s| s.hs_max).collect();
    let y: Vec<f64> = catalog.storms.iter().map(|s| s.ws_max).collect();
    let (mx, my) = (crate::util::mean(&x), crate::util::mean(&y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if !(sxx > 1e-12 * (1.0 + mx * mx) * n as f64) {
        return Err(Error::Fit {
            message: "storm-peak wave heights are constant".into(),
            best: vec![],
            grad_norm: f64::NAN,
        });
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let beta1 = sxy / sxx;
    let beta0 = my - beta1 * mx;
    let sigma = if n > 2 {
        let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - beta0 - beta1 * a).powi(2)).sum();
        (rss / (n - 2) as f64).sqrt()
    } else {
        0.0
    };
    Ok(WindSpeedRegression {
        beta0,
        beta1,
        sigma,
        degenerate: n < MIN_REGRESSION_STORMS || sigma == 0.0,
    })
}

/// Storm-peak wave height above a sector's marginal threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StormPeakBin {
    pub u_x: f64,
    pub gpd: Gpd,
    pub pooled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmModel {
    pub catalog: StormCatalog,
    pub bins: Vec<StormPeakBin>,
    pub regression: WindSpeedRegression,
}

/// Fits the storm-peak GPD of each wave-direction sector of `margin` to the
/// catalog peaks above that sector's threshold; sparse sectors share the fit
/// of all sectors' excesses pooled.
pub fn fit_hm(catalog: StormCatalog, margin: &SemiParametricMarginal) -> Result<HmModel> {
    if catalog.len() < MATCH_POOL {
        return Err(Error::Config(format!(
            "historical matching needs at least {MATCH_POOL} storms, got {}",
            catalog.len()
        )));
    }
    let nb = margin.bins.len();
    let mut per_bin = vec![Vec::new(); nb];
    for s in &catalog.storms {
        let b = bin_of(s.theta_max, nb);
        let u = margin.bins[b].tail.u_x;
        if s.hs_max > u {
            per_bin[b].push(s.hs_max - u);
        }
    }
    let pooled: Vec<f64> = per_bin.iter().flatten().cloned().collect();
    let pooled_fit = fit_gpd(&pooled)?;
    let bins = per_bin
        .iter()
        .zip(&margin.bins)
        .map(|(ex, mb)| {
            let own = if ex.len() >= MIN_BIN_EXCESSES { fit_gpd(ex).ok() } else { None };
            StormPeakBin {
                u_x: mb.tail.u_x,
                gpd: own.unwrap_or(pooled_fit),
                pooled: own.is_none(),
            }
        })
        .collect();
    Ok(HmModel {
        regression: fit_windspeed_regression(&catalog)?,
        catalog,
        bins,
    })
}

/// Rescales storm `hist` to the peak `(hs_max, theta_max, ws_max)`.
pub fn rescale_storm(hist: &StormEntry, hs_max: f64, theta_max: f64, ws_max: f64) -> PhysicalPath {
    let p = &hist.path;
    let f_hs = hs_max / hist.hs_max;
    let rot = circular_difference(theta_max, hist.theta_max);
    let ws = if hist.ws_max > 0.0 {
        let f = ws_max / hist.ws_max;
        p.ws.iter().map(|w| w * f).collect()
    } else {
        // no scale to match; shift instead
        p.ws.iter().map(|w| (w + ws_max - hist.ws_max).max(0.0)).collect()
    };
    PhysicalPath {
        hs: p.hs.iter().map(|h| h * f_hs).collect(),
        ws,
        theta_h: p.theta_h.iter().map(|t| wrap_degrees(t + rot)).collect(),
        theta_w: p.theta_w.iter().map(|t| wrap_degrees(t + rot)).collect(),
        i_star: p.i_star,
    }
}

/// Storm-maximum conditions drawn for one simulated storm and the
/// historical storm matched to them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmDraw {
    pub hs_max: f64,
    pub theta_max: f64,
    pub ws_max: f64,
    /// Index of the matched storm in the catalog.
    pub storm: usize,
}

pub fn hm_draw<R: Rng + ?Sized>(m: &HmModel, rng: &mut R) -> Result<HmDraw> {
    let cat = &m.catalog;
    if cat.len() < MATCH_POOL {
        return Err(Error::Config(format!(
            "historical matching needs at least {MATCH_POOL} storms, got {}",
            cat.len()
        )));
    }
    let theta = cat.storms[rng.random_range(0..cat.len())].theta_max;
    let bin = &m.bins[bin_of(theta, m.bins.len())];
    let hs_max = bin.u_x + bin.gpd.quantile(rng.random::<f64>());
    let pool = nearest_storms(cat, hs_max, theta, MATCH_POOL);
    let storm = pool[rng.random_range(0..pool.len())];
    let r = &m.regression;
    let ws_max = (r.beta0 + r.beta1 * hs_max + r.sigma * rng.sample::<f64, _>(StandardNormal)).max(0.0);
    Ok(HmDraw {
        hs_max,
        theta_max: theta,
        ws_max,
        storm,
    })
}

pub fn hm_simulate<R: Rng + ?Sized>(m: &HmModel, rng: &mut R) -> Result<PhysicalPath> {
    let d = hm_draw(m, rng)?;
    Ok(rescale_storm(&m.catalog.storms[d.storm], d.hs_max, d.theta_max, d.ws_max))
}
