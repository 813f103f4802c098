//! Load proxy of a cube-shaped structure: squared inline wind plus a cubic
//! wave term above an onset height, summarised over an excursion away from
//! its peak.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excursions::PhysicalPath;

/// Time steps within this distance of the storm peak are left out of the
/// excursion summaries.
pub const PEAK_EXCLUSION: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseConfig {
    /// Wind contribution coefficient.
    pub c: f64,
    /// Wave height (m) where waves start to hit the structure.
    pub h: f64,
}

impl ResponseConfig {
    pub fn new(c: f64, h: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("response needs c > 0 and h > 0, got c = {c}, h = {h}")));
        }
        Ok(Self { c, h })
    }

    /// Two settings where the wind and wave terms have upper tails of similar
    /// size on the default synthetic data; see the `response_calibration`
    /// example.
    pub fn defaults() -> [ResponseConfig; 2] {
        [ResponseConfig { c: 0.25, h: 4.0 }, ResponseConfig { c: 0.35, h: 2.5 }]
    }

    pub fn label(&self) -> String {
        format!("c={},h={}", self.c, self.h)
    }
}

/// Relative cross-section of a cube seen from wave direction `theta_h`.
pub fn exposed_area(theta_h: f64) -> f64 {
    let off = (theta_h + 45.0).rem_euclid(90.0) - 45.0;
    1.0 / off.to_radians().cos()
}

/// Wind speed component along the wave direction.
pub fn inline_wind(ws: f64, theta_h: f64, theta_w: f64) -> f64 {
    ws * (theta_h - theta_w).to_radians().cos()
}

pub fn instantaneous_response(hs: f64, ws: f64, theta_h: f64, theta_w: f64, cfg: &ResponseConfig) -> f64 {
    let iw = inline_wind(ws, theta_h, theta_w);
    let wind = cfg.c * iw * iw;
    if hs < cfg.h {
        wind
    } else {
        wind + exposed_area(theta_h) * (hs - cfg.h) * hs * hs
    }
}

/// Responses at the time steps more than [`PEAK_EXCLUSION`] away from the
/// peak.
fn off_peak(p: &PhysicalPath, cfg: &ResponseConfig) -> Vec<f64> {
    (0..p.hs.len())
        .filter(|i| i.abs_diff(p.i_star) > PEAK_EXCLUSION)
        .map(|i| instantaneous_response(p.hs[i], p.ws[i], p.theta_h[i], p.theta_w[i], cfg))
        .collect()
}

/// A summary value and whether it came from an empty index set (then 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub value: f64,
    pub empty: bool,
}

pub fn rmax(p: &PhysicalPath, cfg: &ResponseConfig) -> Summary {
    let r = off_peak(p, cfg);
    Summary {
        value: r.iter().cloned().fold(0.0, f64::max),
        empty: r.is_empty(),
    }
}

pub fn rsum(p: &PhysicalPath, cfg: &ResponseConfig) -> Summary {
    let r = off_peak(p, cfg);
    Summary {
        value: r.iter().fold(0.0, |a, b| a + b),
        empty: r.is_empty(),
    }
}
