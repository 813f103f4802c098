use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excursions::{partition, Excursion, PeakPeriod};
use crate::optim::OptimOptions;

use super::fit::fit_ht;
use super::irregular::{HtParams, IrregularMatrix};
use super::kde::ResidualSample;

pub const MIN_PEAK_EXCURSIONS: usize = 50;

/// Conditional-extremes model of the 2k-1 rows around an excursion maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakModel {
    pub k: usize,
    pub u: f64,
    pub params: HtParams,
    /// Joint residuals over the irregular entries, in storage order.
    pub residuals: ResidualSample,
    /// Irregular entries whose fit ended on a parameter bound.
    pub boundary: Vec<(isize, usize)>,
    pub n_obs: usize,
}

/// Peak periods of the non-censored excursions whose window is fully stored.
pub fn peak_periods(excursions: &[Excursion], k: usize) -> Vec<PeakPeriod> {
    excursions
        .iter()
        .filter(|e| !e.censored)
        .filter_map(|e| partition(e, k).ok().map(|p| p.peak))
        .collect()
}

/// Fits every irregular entry by its own pseudo-likelihood, conditioning on
/// the shared peak value, and keeps the joint residual vectors.
pub fn fit_peak_model(excursions: &[Excursion], k: usize, u: f64, opts: &OptimOptions) -> Result<PeakModel> {
    let periods = peak_periods(excursions, k);
    if periods.len() < MIN_PEAK_EXCURSIONS {
        return Err(Error::insufficient(format!(
            "peak model needs {MIN_PEAK_EXCURSIONS} non-censored excursions, got {}",
            periods.len()
        )));
    }
    let d = 2;
    let mut alpha = IrregularMatrix::filled(k, d, 0.0);
    let mut beta = IrregularMatrix::filled(k, d, 0.0);
    let anchor: Vec<f64> = periods.iter().map(|p| p.at(0)[0]).collect();
    let n = periods.len();
    let mut rows = vec![vec![0.0; alpha.len()]; n];
    let mut boundary = Vec::new();
    for (pos, (i, j)) in alpha.entries().into_iter().enumerate() {
        let resp: Vec<f64> = periods.iter().map(|p| p.at(i)[j]).collect();
        let fit = fit_ht(&anchor, &resp, opts)?;
        alpha.values[pos] = fit.theta[0];
        beta.values[pos] = fit.theta[1];
        if fit.boundary {
            boundary.push((i, j));
        }
        for (r, e) in rows.iter_mut().zip(&fit.residuals) {
            r[pos] = *e;
        }
    }
    Ok(PeakModel {
        k,
        u,
        params: HtParams::new(alpha, beta)?,
        residuals: ResidualSample::lenient(&rows)?,
        boundary,
        n_obs: n,
    })
}

impl PeakModel {
    /// Peak period for a given residual vector (storage order).
    pub fn assemble(&self, y0: f64, eps: &[f64]) -> PeakPeriod {
        let k = self.k;
        let mut rows = vec![[0.0; 2]; 2 * k - 1];
        let a = &self.params.alpha;
        let b = &self.params.beta;
        for (pos, (i, j)) in a.entries().into_iter().enumerate() {
            rows[(i + k as isize - 1) as usize][j] = a.values[pos] * y0 + y0.powf(b.values[pos]) * eps[pos];
        }
        rows[k - 1][0] = y0;
        PeakPeriod { k, rows }
    }
}

/// Draws the peak period given the maximum `y0 > u`.
pub fn simulate_peak<R: Rng + ?Sized>(pm: &PeakModel, y0: f64, rng: &mut R) -> Result<PeakPeriod> {
    if !(y0 > pm.u) {
        return Err(Error::Domain {
            value: y0,
            message: format!("peak value must exceed the threshold {}", pm.u),
        });
    }
    let eps = pm.residuals.sample(rng);
    Ok(pm.assemble(y0, &eps))
}
