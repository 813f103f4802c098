//! Whole-excursion simulation: storm peak, peak period, forward and backward
//! chains until the first dip below the threshold, rejection of excursions
//! that overtop their own peak, then directions and physical margins.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condext::{fit_peak_model, simulate_peak, PeakModel};
use crate::directional::{fit_directions, sample_anchor, simulate_directions_with, DirectionModel};
use crate::error::{Error, Result};
use crate::evar::{evar_step, fit_evar, EvarParams};
use crate::excursions::{Excursion, PhysicalPath};
use crate::hm::{fit_hm, hm_simulate, HmModel, StormCatalog};
use crate::margins::{fit_gpd, Gpd, MarginPair};
use crate::mmem::{fit_mmem, mmem_step, Direction, MmemParams};
use crate::optim::OptimOptions;
use crate::util::stream_rng;

/// Rejections allowed per accepted excursion.
pub const DEFAULT_MAX_REJECTS: usize = 1000;

/// Chain steps on one side before the draw counts as a runaway and is rejected.
pub const MAX_SIDE_STEPS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Mmem,
    Evar,
    Evar0,
    Hm,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Mmem => "mmem",
            ModelFamily::Evar => "evar",
            ModelFamily::Evar0 => "evar0",
            ModelFamily::Hm => "hm",
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mmem" => Ok(ModelFamily::Mmem),
            "evar" => Ok(ModelFamily::Evar),
            "evar0" => Ok(ModelFamily::Evar0),
            "hm" => Ok(ModelFamily::Hm),
            other => Err(Error::Config(format!("unknown model family `{other}`"))),
        }
    }
}

/// A model family and its order (ignored for historical matching).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub k: usize,
}

impl ModelSpec {
    pub fn new(family: ModelFamily, k: usize) -> Self {
        Self { family, k }
    }

    pub fn label(&self) -> String {
        match self.family {
            ModelFamily::Hm => "hm".into(),
            f => format!("{}({})", f.name(), self.k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChainModel {
    Mmem(MmemParams),
    Evar(EvarParams),
}

impl ChainModel {
    pub fn k(&self) -> usize {
        match self {
            ChainModel::Mmem(p) => p.k,
            ChainModel::Evar(p) => p.k,
        }
    }

    /// Next row given the last `k` rows in chain order; the flag reports a
    /// nearest-neighbour residual fallback.
    pub fn step<R: Rng + ?Sized>(&self, history: &[[f64; 2]], rng: &mut R) -> Result<([f64; 2], bool)> {
        match self {
            ChainModel::Mmem(p) => mmem_step(history, p, rng),
            ChainModel::Evar(p) => Ok((evar_step(history, p, rng)?, false)),
        }
    }
}

/// What a rejected draw throws away.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionScope {
    /// Redraw everything, storm maximum included. Accepted maxima are then
    /// tilted towards values that are rarely overtopped.
    Excursion,
    /// Keep the storm maximum and redraw the rest, so accepted maxima follow
    /// the fitted storm-maximum law exactly.
    #[default]
    KeepPeak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionModel {
    pub spec: ModelSpec,
    pub u: f64,
    pub peak: PeakModel,
    pub forward: ChainModel,
    pub backward: ChainModel,
    /// Excess of the excursion maximum over `u`, Laplace scale.
    pub storm_max: Gpd,
    pub directions: DirectionModel,
    pub margins: MarginPair,
    pub max_rejects: usize,
    #[serde(default)]
    pub rejection: RejectionScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum FittedModel {
    Chain(Box<ExcursionModel>),
    Hm(Box<HmModel>),
}

impl FittedModel {
    pub fn spec(&self) -> ModelSpec {
        match self {
            FittedModel::Chain(m) => m.spec,
            FittedModel::Hm(_) => ModelSpec::new(ModelFamily::Hm, 0),
        }
    }
}

fn fit_chain(excursions: &[Excursion], spec: ModelSpec, dir: Direction, u: f64, opts: &OptimOptions) -> Result<ChainModel> {
    Ok(match spec.family {
        ModelFamily::Mmem => ChainModel::Mmem(fit_mmem(excursions, spec.k, dir, u, opts)?),
        ModelFamily::Evar => ChainModel::Evar(fit_evar(excursions, spec.k, dir, u, false, opts)?),
        ModelFamily::Evar0 => ChainModel::Evar(fit_evar(excursions, spec.k, dir, u, true, opts)?),
        ModelFamily::Hm => return Err(Error::Config("historical matching has no chain model".into())),
    })
}

/// Fits every component of the model named by `spec` to the excursions
/// (which must carry physical columns).
pub fn fit_model(spec: ModelSpec, excursions: &[Excursion], margins: &MarginPair, u: f64, opts: &OptimOptions) -> Result<FittedModel> {
    if excursions.iter().any(|e| !e.has_physical()) {
        return Err(Error::invalid("excursions must carry physical columns"));
    }
    if spec.family == ModelFamily::Hm {
        let catalog = StormCatalog::from_excursions(excursions);
        return Ok(FittedModel::Hm(Box::new(fit_hm(catalog, &margins.hs)?)));
    }
    if spec.k == 0 {
        return Err(Error::Config("model order must be at least 1".into()));
    }
    let maxima: Vec<f64> = excursions.iter().filter(|e| !e.censored).map(|e| e.peak() - u).collect();
    Ok(FittedModel::Chain(Box::new(ExcursionModel {
        spec,
        u,
        peak: fit_peak_model(excursions, spec.k, u, opts)?,
        forward: fit_chain(excursions, spec, Direction::Forward, u, opts)?,
        backward: fit_chain(excursions, spec, Direction::Backward, u, opts)?,
        storm_max: fit_gpd(&maxima)?,
        directions: fit_directions(excursions, 1, 1, opts)?,
        margins: margins.clone(),
        max_rejects: DEFAULT_MAX_REJECTS,
        rejection: RejectionScope::default(),
    })))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub accepted: usize,
    /// Draws discarded because a later value overtopped the peak.
    pub rejected: usize,
    /// Draws discarded because a chain never fell below the threshold.
    pub runaway: usize,
    /// Chain steps that used the nearest-neighbour residual fallback.
    pub fallbacks: usize,
}

impl SimStats {
    pub fn rejection_rate(&self) -> f64 {
        let total = self.accepted + self.rejected + self.runaway;
        if total == 0 {
            0.0
        } else {
            (self.rejected + self.runaway) as f64 / total as f64
        }
    }

    fn add(&mut self, o: &SimStats) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.runaway += o.runaway;
        self.fallbacks += o.fallbacks;
    }
}

enum SideEnd {
    /// Outward rows ending with the first dip at or below `u`.
    Done(Vec<[f64; 2]>),
    Runaway,
}

/// Extends one side outward from the peak. `start` holds the peak row and
/// the peak-period rows on that side, in outward order.
fn extend_side<R: Rng + ?Sized>(
    chain: &ChainModel,
    start: Vec<[f64; 2]>,
    u: f64,
    stats: &mut SimStats,
    rng: &mut R,
) -> Result<SideEnd> {
    if let Some(d) = start.iter().skip(1).position(|r| r[0] <= u) {
        let mut rows = start;
        rows.truncate(d + 2);
        return Ok(SideEnd::Done(rows));
    }
    let k = chain.k();
    let mut rows = start;
    for _ in 0..MAX_SIDE_STEPS {
        let (next, fb) = chain.step(&rows[rows.len() - k..], rng)?;
        stats.fallbacks += usize::from(fb);
        rows.push(next);
        if next[0] <= u {
            return Ok(SideEnd::Done(rows));
        }
    }
    Ok(SideEnd::Runaway)
}

/// Laplace rows of one accepted excursion with the index of its peak. The
/// first and last rows are the dips that end it.
pub fn simulate_laplace<R: Rng + ?Sized>(m: &ExcursionModel, stats: &mut SimStats, rng: &mut R) -> Result<(Vec<[f64; 2]>, usize)> {
    let k = m.spec.k;
    let mut attempts = 0usize;
    let mut kept = None;
    loop {
        if attempts > m.max_rejects {
            let rate = stats.rejection_rate();
            return Err(Error::Simulation {
                rejections: stats.rejected + stats.runaway,
                rate,
            });
        }
        attempts += 1;
        let y0 = match kept {
            Some(y) => y,
            None => m.u + m.storm_max.quantile(rng.random::<f64>()),
        };
        if m.rejection == RejectionScope::KeepPeak {
            kept = Some(y0);
        }
        let p = simulate_peak(&m.peak, y0, rng)?;
        let fwd0: Vec<[f64; 2]> = (0..k as isize).map(|i| p.at(i)).collect();
        let bwd0: Vec<[f64; 2]> = (0..k as isize).map(|i| p.at(-i)).collect();
        let fwd = extend_side(&m.forward, fwd0, m.u, stats, rng)?;
        let bwd = extend_side(&m.backward, bwd0, m.u, stats, rng)?;
        let (fwd, bwd) = match (fwd, bwd) {
            (SideEnd::Done(f), SideEnd::Done(b)) => (f, b),
            _ => {
                stats.runaway += 1;
                continue;
            }
        };
        if fwd.iter().chain(&bwd).any(|r| r[0] > y0) {
            stats.rejected += 1;
            continue;
        }
        let i_star = bwd.len() - 1;
        let mut rows: Vec<[f64; 2]> = bwd.into_iter().rev().collect();
        rows.extend_from_slice(&fwd[1..]);
        stats.accepted += 1;
        return Ok((rows, i_star));
    }
}

/// One accepted excursion on both scales. Rows `0` and `len - 1` are the
/// dips below the threshold, so `a = 1` and `b = len - 2`.
pub fn simulate_excursion<R: Rng + ?Sized>(m: &ExcursionModel, stats: &mut SimStats, rng: &mut R) -> Result<Excursion> {
    let (y, i_star) = simulate_laplace(m, stats, rng)?;
    let n = y.len();
    let anchor = sample_anchor(&m.directions, rng);
    let hs_margin = &m.margins.hs;
    let (theta_h, theta_w) = simulate_directions_with(&m.directions, n, i_star, anchor, |i, th| hs_margin.from_laplace(y[i][0], th), rng);
    let hs = (0..n).map(|i| m.margins.hs.from_laplace(y[i][0], theta_h[i])).collect();
    let ws = (0..n).map(|i| m.margins.ws.from_laplace(y[i][1], theta_w[i])).collect();
    Ok(Excursion {
        a: 1,
        b: n - 2,
        i_star,
        censored: false,
        start: 0,
        y,
        hs,
        ws,
        theta_h,
        theta_w,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub excursions: Vec<Excursion>,
    pub stats: SimStats,
}

/// `n` independent excursions; draw `i` uses random stream `i` of `seed`,
/// so the result does not depend on scheduling.
pub fn simulate_ensemble(m: &ExcursionModel, n: usize, seed: u64) -> Result<Ensemble> {
    let draws: Result<Vec<(Excursion, SimStats)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut st = SimStats::default();
            simulate_excursion(m, &mut st, &mut rng).map(|e| (e, st))
        })
        .collect();
    let mut stats = SimStats::default();
    let mut excursions = Vec::with_capacity(n);
    for (e, st) in draws? {
        stats.add(&st);
        excursions.push(e);
    }
    if stats.rejection_rate() > 0.5 {
        log::warn!("rejection rate {:.3} exceeds one half", stats.rejection_rate());
    }
    Ok(Ensemble { excursions, stats })
}

/// Physical trajectories (core rows only) from any fitted model.
pub fn simulate_paths(m: &FittedModel, n: usize, seed: u64) -> Result<(Vec<PhysicalPath>, SimStats)> {
    match m {
        FittedModel::Chain(c) => {
            let e = simulate_ensemble(c, n, seed)?;
            let paths = e.excursions.iter().map(|x| x.physical_core().expect("simulated excursions are physical")).collect();
            Ok((paths, e.stats))
        }
        FittedModel::Hm(h) => {
            let paths: Result<Vec<PhysicalPath>> = (0..n)
                .into_par_iter()
                .map(|i| hm_simulate(h, &mut stream_rng(seed, i as u64)))
                .collect();
            Ok((
                paths?,
                SimStats {
                    accepted: n,
                    ..Default::default()
                },
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::excursions::extract_with_physical;
    use crate::margins::{laplace_quantile, MarginConfig};
    use std::sync::OnceLock;

    struct Fixture {
        excursions: Vec<Excursion>,
        margins: MarginPair,
        u: f64,
    }

    fn fixture() -> &'static Fixture {
        static F: OnceLock<Fixture> = OnceLock::new();
        F.get_or_init(|| {
            let series = generate_synthetic(&SyntheticSpec::default().with_len(60_000)).unwrap();
            let margins = MarginPair::fit(&series, &MarginConfig::default()).unwrap();
            let y = margins.to_laplace(&series);
            let u = laplace_quantile(0.95);
            let excursions = extract_with_physical(&y, &series, u, 6).unwrap();
            Fixture { excursions, margins, u }
        })
    }

    fn chain_model(family: ModelFamily, k: usize) -> ExcursionModel {
        let f = fixture();
        match fit_model(ModelSpec::new(family, k), &f.excursions, &f.margins, f.u, &OptimOptions::default()).unwrap() {
            FittedModel::Chain(m) => *m,
            _ => unreachable!(),
        }
    }

    fn check_contract(e: &Excursion, u: f64) {
        let peak = e.y[e.i_star][0];
        assert!(e.core().iter().all(|r| r[0] > u && r[0] <= peak));
        assert!(e.y[0][0] <= u && e.y[e.y.len() - 1][0] <= u);
        assert_eq!(e.y.len(), e.len() + 2);
    }

    #[test]
    fn excursions_respect_peak_and_threshold() {
        for (fam, k) in [(ModelFamily::Mmem, 2), (ModelFamily::Evar, 1), (ModelFamily::Evar0, 3)] {
            let m = chain_model(fam, k);
            let ens = simulate_ensemble(&m, 300, 11).unwrap();
            assert_eq!(ens.excursions.len(), 300);
            assert!(ens.stats.rejection_rate().is_finite());
            for e in &ens.excursions {
                check_contract(e, m.u);
                for i in 0..e.y.len() {
                    let back = m.margins.from_laplace(e.y[i], e.theta_h[i], e.theta_w[i]);
                    assert!((back[0] - e.hs[i]).abs() < 1e-9 && (back[1] - e.ws[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn ensemble_is_deterministic() {
        let m = chain_model(ModelFamily::Mmem, 1);
        assert!(simulate_ensemble(&m, 0, 1).unwrap().excursions.is_empty());
        let a = simulate_ensemble(&m, 50, 5).unwrap();
        let b = simulate_ensemble(&m, 50, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn peak_period_dip_ends_the_side() {
        let mut m = chain_model(ModelFamily::Evar, 2);
        let mut stats = SimStats::default();
        let mut rng = stream_rng(3, 0);
        // force the peak-period rows far below the threshold
        for a in m.peak.params.alpha.values.iter_mut() {
            *a = -1.0;
        }
        for _ in 0..20 {
            let (y, i_star) = simulate_laplace(&m, &mut stats, &mut rng).unwrap();
            assert_eq!(y.len(), 3);
            assert_eq!(i_star, 1);
        }
    }

    #[test]
    fn hm_paths_peak_at_their_draw() {
        let f = fixture();
        let m = fit_model(ModelSpec::new(ModelFamily::Hm, 0), &f.excursions, &f.margins, f.u, &OptimOptions::default()).unwrap();
        let (paths, _) = simulate_paths(&m, 200, 1).unwrap();
        for p in paths {
            let top = p.hs.iter().cloned().fold(f64::MIN, f64::max);
            assert!((top - p.hs[p.i_star]).abs() < 1e-10);
        }
    }
}
