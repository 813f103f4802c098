//! Multivariate Markov extremal model: a conditional-extremes transition for
//! the next row given the last k rows, anchored at the first row of the window.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::condext::{fit_ht, ResidualSample};
use crate::error::{Error, Result};
use crate::excursions::Excursion;
use crate::optim::OptimOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Windows of `k + 1` consecutive rows, in chain order, whose first row is a
/// first-component exceedance inside an excursion. Backward windows run
/// against time.
pub fn chain_windows(excursions: &[Excursion], k: usize, dir: Direction) -> Vec<Vec<[f64; 2]>> {
    let mut out = Vec::new();
    for e in excursions {
        for t in e.a..=e.b {
            let rows: Option<Vec<[f64; 2]>> = (0..=k)
                .map(|m| {
                    let s = match dir {
                        Direction::Forward => t as isize + m as isize,
                        Direction::Backward => t as isize - m as isize,
                    };
                    e.y_at(s)
                })
                .collect();
            if let Some(r) = rows {
                out.push(r);
            }
        }
    }
    out
}

/// Window entries in storage order: `(0, 1)`, then `(m, 0), (m, 1)` for
/// `m = 1..=k`.
pub fn window_entries(k: usize) -> Vec<(usize, usize)> {
    let mut v = vec![(0, 1)];
    for m in 1..=k {
        v.push((m, 0));
        v.push((m, 1));
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmemParams {
    pub k: usize,
    pub direction: Direction,
    pub u: f64,
    /// Per window entry, storage order of [`window_entries`].
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Joint residuals of dimension `2k + 1`.
    pub residuals: ResidualSample,
    pub boundary: Vec<(usize, usize)>,
    pub n_windows: usize,
}

impl MmemParams {
    pub fn entry(&self, m: usize, j: usize) -> usize {
        if m == 0 {
            assert_eq!(j, 1, "entry (0, 0) is the anchor");
            0
        } else {
            2 * m - 1 + j
        }
    }

    pub fn alpha_at(&self, m: usize, j: usize) -> f64 {
        self.alpha[self.entry(m, j)]
    }
}

pub fn fit_mmem(excursions: &[Excursion], k: usize, dir: Direction, u: f64, opts: &OptimOptions) -> Result<MmemParams> {
    if k == 0 {
        return Err(Error::invalid("order k must be at least 1"));
    }
    let windows = chain_windows(excursions, k, dir);
    fit_mmem_windows(&windows, k, dir, u, opts)
}

/// Fits from pre-built windows (chain order, anchor in row 0).
pub fn fit_mmem_windows(windows: &[Vec<[f64; 2]>], k: usize, dir: Direction, u: f64, opts: &OptimOptions) -> Result<MmemParams> {
    let anchor: Vec<f64> = windows.iter().map(|w| w[0][0]).collect();
    if anchor.iter().any(|y| !(*y > u)) {
        return Err(Error::invalid("every window must start at an exceedance"));
    }
    let entries = window_entries(k);
    let n = windows.len();
    let mut alpha = Vec::with_capacity(entries.len());
    let mut beta = Vec::with_capacity(entries.len());
    let mut boundary = Vec::new();
    let mut rows = vec![vec![0.0; entries.len()]; n];
    for (pos, &(m, j)) in entries.iter().enumerate() {
        let resp: Vec<f64> = windows.iter().map(|w| w[m][j]).collect();
        let fit = fit_ht(&anchor, &resp, opts)?;
        alpha.push(fit.theta[0]);
        beta.push(fit.theta[1]);
        if fit.boundary {
            boundary.push((m, j));
        }
        for (r, e) in rows.iter_mut().zip(&fit.residuals) {
            r[pos] = *e;
        }
    }
    Ok(MmemParams {
        k,
        direction: dir,
        u,
        alpha,
        beta,
        residuals: ResidualSample::lenient(&rows)?,
        boundary,
        n_windows: n,
    })
}

/// Residuals implied by a history of `k` rows (anchor in row 0), entries
/// `(0, 1)` through `(k - 1, 1)`.
pub fn history_residuals(history: &[[f64; 2]], p: &MmemParams) -> Vec<f64> {
    let y = history[0][0];
    window_entries(p.k)
        .into_iter()
        .take(2 * p.k - 1)
        .enumerate()
        .map(|(pos, (m, j))| (history[m][j] - p.alpha[pos] * y) / y.powf(p.beta[pos]))
        .collect()
}

/// Inverse of [`history_residuals`]: rebuilds rows `1..k` and column 1 of row 0.
pub fn history_from_residuals(y: f64, eps: &[f64], p: &MmemParams) -> Vec<[f64; 2]> {
    let mut h = vec![[0.0; 2]; p.k];
    h[0][0] = y;
    for (pos, (m, j)) in window_entries(p.k).into_iter().take(2 * p.k - 1).enumerate() {
        h[m][j] = p.alpha[pos] * y + y.powf(p.beta[pos]) * eps[pos];
    }
    h
}

/// The next row of the chain. Returns the row and whether the residual
/// density fell back to its nearest stored component.
pub fn mmem_step<R: Rng + ?Sized>(history: &[[f64; 2]], p: &MmemParams, rng: &mut R) -> Result<([f64; 2], bool)> {
    if history.len() != p.k {
        return Err(Error::invalid(format!("MMEM({}) needs {} history rows", p.k, p.k)));
    }
    let y = history[0][0];
    if !(y > p.u) {
        return Err(Error::Domain {
            value: y,
            message: format!("window anchor must exceed the threshold {}", p.u),
        });
    }
    let given = history_residuals(history, p);
    let (tail, fallback) = p.residuals.conditional_sample(&given, rng);
    let (i1, i2) = (2 * p.k - 1, 2 * p.k);
    Ok((
        [
            p.alpha[i1] * y + y.powf(p.beta[i1]) * tail[0],
            p.alpha[i2] * y + y.powf(p.beta[i2]) * tail[1],
        ],
        fallback,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn degenerate(k: usize, alpha: Vec<f64>) -> MmemParams {
        let m = 2 * k + 1;
        MmemParams {
            k,
            direction: Direction::Forward,
            u: 2.0,
            beta: vec![0.0; m],
            alpha,
            residuals: ResidualSample::with_bandwidths(&[vec![0.0; m]], vec![1e-300; m]).unwrap(),
            boundary: vec![],
            n_windows: 1,
        }
    }

    #[test]
    fn noise_free_step() {
        let p = degenerate(1, vec![0.3, 0.8, 0.6]);
        let mut rng = stream_rng(1, 0);
        let (next, _) = mmem_step(&[[4.0, 1.2]], &p, &mut rng).unwrap();
        assert_eq!(next, [0.8 * 4.0, 0.6 * 4.0]);
    }

    #[test]
    fn anchor_just_above_threshold() {
        let p = degenerate(2, vec![0.3, 0.8, 0.6, 0.7, 0.5]);
        let mut rng = stream_rng(1, 0);
        let (next, _) = mmem_step(&[[2.0 + 1e-12, 0.0], [2.1, 1.0]], &p, &mut rng).unwrap();
        assert!(next.iter().all(|v| v.is_finite()));
        assert!(mmem_step(&[[2.0, 0.0], [2.1, 1.0]], &p, &mut rng).is_err());
    }

    #[test]
    fn windows_follow_chain_direction() {
        let y: Vec<[f64; 2]> = [0.0, 3.0, 4.0, 3.5, 0.0, 0.0].iter().enumerate().map(|(i, v)| [*v, i as f64]).collect();
        let ex = crate::excursions::extract_excursions(&y, 2.3, 6);
        let f = chain_windows(&ex, 1, Direction::Forward);
        assert_eq!(f.len(), 3);
        assert_eq!(f[0], vec![[3.0, 1.0], [4.0, 2.0]]);
        let b = chain_windows(&ex, 2, Direction::Backward);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], vec![[3.5, 3.0], [4.0, 2.0], [3.0, 1.0]]);
    }

    fn synthetic_windows(alpha: f64, n: usize, seed: u64) -> Vec<Vec<[f64; 2]>> {
        let mut rng = stream_rng(seed, 0);
        (0..n)
            .map(|_| {
                let e: f64 = rng.random();
                let y = 2.3 - (1.0 - e).ln();
                let mut z = || rng.sample::<f64, _>(StandardNormal);
                vec![[y, 0.8 * y + y.powf(0.3) * z()], [alpha * y + y.powf(0.4) * z(), 0.5 * y + y.powf(0.2) * z()]]
            })
            .collect()
    }

    #[test]
    fn known_model_refit() {
        let w = synthetic_windows(0.7, 4000, 2);
        let p = fit_mmem_windows(&w, 1, Direction::Forward, 2.3, &OptimOptions::default()).unwrap();
        // alpha and the residual mean trade off through y^beta, so the
        // tolerance is wider than the sampling error alone
        assert!((p.alpha_at(0, 1) - 0.8).abs() < 0.1, "{:?}", p.alpha);
        assert!((p.alpha_at(1, 0) - 0.7).abs() < 0.1, "{:?}", p.alpha);
        assert!((p.alpha_at(1, 1) - 0.5).abs() < 0.1, "{:?}", p.alpha);
        assert_eq!(p.residuals.dim, 3);
    }

    #[test]
    fn persistent_series_sits_on_the_bound() {
        let mut rng = stream_rng(3, 0);
        let w: Vec<Vec<[f64; 2]>> = (0..100)
            .map(|_| {
                let e: f64 = rng.random();
                let y = 2.3 - (1.0 - e).ln();
                vec![[y, y]; 3]
            })
            .collect();
        let p = fit_mmem_windows(&w, 2, Direction::Forward, 2.3, &OptimOptions::default()).unwrap();
        assert!(p.alpha.iter().all(|a| (a - 1.0).abs() < 1e-6), "{:?}", p.alpha);
    }

    #[test]
    fn step_mean_matches_brute_force_average() {
        let w = synthetic_windows(0.7, 500, 4);
        let p = fit_mmem_windows(&w, 1, Direction::Forward, 2.3, &OptimOptions::default()).unwrap();
        let history = [[4.0, 3.0]];
        let mut rng = stream_rng(5, 0);
        let draws: Vec<f64> = (0..50_000).map(|_| mmem_step(&history, &p, &mut rng).unwrap().0[0]).collect();
        // oracle: kernel-weighted average of the stored residual for entry (1, 0)
        let y: f64 = 4.0;
        let g = (3.0 - p.alpha[0] * y) / y.powf(p.beta[0]);
        let h = p.residuals.bandwidths[0];
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..p.residuals.len() {
            let r = p.residuals.row(i);
            let w = (-0.5 * ((g - r[0]) / h).powi(2)).exp();
            num += w * r[1];
            den += w;
        }
        let expect = p.alpha[1] * y + y.powf(p.beta[1]) * num / den;
        let sd = crate::util::sample_sd(&draws);
        let got = crate::util::mean(&draws);
        assert!((got - expect).abs() < 3.0 * sd / (draws.len() as f64).sqrt(), "{got} vs {expect}");
    }

    proptest! {
        #[test]
        fn history_residuals_invert(k in 1usize..4, y in 2.5f64..9.0, seed in 0u64..1000) {
            let mut rng = stream_rng(seed, 0);
            let m = 2 * k + 1;
            let mut p = degenerate(k, (0..m).map(|_| rng.random_range(-1.0..1.0)).collect());
            p.beta = (0..m).map(|_| rng.random_range(-1.0..0.9)).collect();
            let mut h: Vec<[f64; 2]> = (0..k).map(|_| [rng.random_range(-3.0..6.0), rng.random_range(-3.0..6.0)]).collect();
            h[0][0] = y;
            let eps = history_residuals(&h, &p);
            let back = history_from_residuals(y, &eps, &p);
            for (a, b) in h.iter().zip(&back) {
                prop_assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            }
        }
    }
}
