//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//! Failures are reported but do not fail the run unless
//! `STORMCHAIN_ACCEPTANCE_STRICT` is set.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use stormchain::assess::{bootstrap_ci, cross_validate, distance_d, Competitor, CvConfig, FittedCompetitor, PercentileGrid, PoolCompetitor, Statistic};
use stormchain::cli::competitor_specs;
use stormchain::condext::{fit_ht, fit_peak_model};
use stormchain::data::{generate_synthetic, MetOceanSeries, SyntheticSpec};
use stormchain::engine::{fit_model, simulate_ensemble, FittedModel, ModelFamily, ModelSpec};
use stormchain::evar::{fit_evar_windows, reparameterize, unreparameterize, Coordinates, PhiMatrices, ReparamMap};
use stormchain::excursions::{chi_estimate, excursion_chi, extract_with_physical, survival_band, survival_curve, ChiPair, Excursion, DEFAULT_PAD};
use stormchain::hm::{fit_hm, hm_dissimilarity, hm_draw, hm_simulate, StormCatalog};
use stormchain::margins::{fit_gpd, laplace_cdf, laplace_quantile, Gpd, MarginConfig, MarginPair};
use stormchain::mmem::Direction;
use stormchain::optim::OptimOptions;
use stormchain::util::{quantile, stream_rng};
use stormchain::Result;

const GPD_TOL: f64 = 0.1;
const HT_ALPHA_TOL: f64 = 0.05;
const HT_BETA_TOL: f64 = 0.15;
const EVAR_PHI_TOL: f64 = 0.05;
const ROUND_TRIP_TOL: f64 = 1e-12;
/// Asymptotic 1% critical value of the Kolmogorov statistic times sqrt(n).
const KS_CRIT_1PC: f64 = 1.6276;
const D_RATIO_TOL: f64 = 1e-12;
const HM_PEAK_TOL: f64 = 1e-10;
const HM_CALIB_TOL: f64 = 1e-12;
const COVERAGE_BAND: (f64, f64) = (0.84, 0.96);

/// Seed of every simulation below; fixed before any run of the suite.
const SEED: u64 = 11;
const ENSEMBLE: usize = 20_000;
/// Order of the chain model checked against the data, as in the paper's
/// trajectory and chi comparisons.
const CHECK_ORDER: usize = 4;
const SURVIVAL_TAU: i64 = 12;
const N_BOOT: usize = 500;

struct Suite {
    passed: usize,
    failed: Vec<usize>,
}

impl Suite {
    fn run(&mut self, id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Result<(bool, String)>) {
        let t = Instant::now();
        let out = f();
        let el = t.elapsed();
        let late = limit.is_some_and(|l| el > l);
        let (ok, detail) = match out {
            Ok((ok, d)) => (ok && !late, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let limit_txt = limit.map(|l| format!(" (limit {}s)", l.as_secs())).unwrap_or_default();
        println!(
            "{} {id:>2} {name}: {detail}; {:.1}s{limit_txt}{}",
            if ok { "PASS" } else { "FAIL" },
            el.as_secs_f64(),
            if late { " over time limit" } else { "" }
        );
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(id);
        }
    }
}

struct Data {
    series: MetOceanSeries,
    margins: MarginPair,
    y: Vec<[f64; 2]>,
    u: f64,
    excursions: Vec<Excursion>,
}

fn data() -> Data {
    let series = generate_synthetic(&SyntheticSpec::default()).expect("generator");
    let margins = MarginPair::fit(&series, &MarginConfig::default()).expect("margins");
    let y = margins.to_laplace(&series);
    let u = laplace_quantile(0.95);
    let excursions = extract_with_physical(&y, &series, u, DEFAULT_PAD).expect("excursions");
    Data {
        series,
        margins,
        y,
        u,
        excursions,
    }
}

fn evar1_windows(phi: [[f64; 2]; 2], b: [f64; 2], n: usize, seed: u64) -> Vec<Vec<[f64; 2]>> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| {
            let e: f64 = rng.random();
            let y = 2.3 - (1.0 - e).ln();
            let y2 = 0.6 * y + y.powf(0.3) * rng.sample::<f64, _>(StandardNormal);
            let next = [0, 1].map(|l| phi[l][0] * y + phi[l][1] * y2 + y.powf(b[l]) * rng.sample::<f64, _>(StandardNormal));
            vec![[y, y2], next]
        })
        .collect()
}

const PHI: [[f64; 2]; 2] = [[0.7, 0.1], [0.1, 0.6]];
const B: [f64; 2] = [0.4, 0.3];

fn evar1_params(w: &[Vec<[f64; 2]>], opts: &OptimOptions) -> Result<Vec<f64>> {
    let p = fit_evar_windows(w, 1, Direction::Forward, 2.3, false, Coordinates::Reparameterized, opts)?;
    let f = &p.phi[0];
    Ok(vec![f[0][0], f[0][1], f[1][0], f[1][1], p.b[0], p.b[1]])
}

fn main() {
    let mut s = Suite { passed: 0, failed: vec![] };
    let secs = Duration::from_secs;

    s.run(1, "GPD recovery", Some(secs(5)), || {
        let g = Gpd::new(2.0, 0.3)?;
        let mut rng = stream_rng(SEED, 1);
        let x: Vec<f64> = (0..5000).map(|_| g.quantile(rng.random())).collect();
        let f = fit_gpd(&x)?;
        let ok = (f.sigma - 2.0).abs() <= GPD_TOL && (f.xi - 0.3).abs() <= GPD_TOL;
        Ok((ok, format!("sigma {:.4} xi {:.4} (tol {GPD_TOL})", f.sigma, f.xi)))
    });

    s.run(2, "conditional-extremes recovery", Some(secs(60)), || {
        let mut rng = stream_rng(SEED, 2);
        let u = laplace_quantile(0.95);
        let w1: Vec<f64> = (0..5000).map(|_| u - (1.0 - rng.random::<f64>()).ln()).collect();
        let w2: Vec<f64> = w1.iter().map(|w| 0.7 * w + w.powf(0.3) * rng.sample::<f64, _>(StandardNormal)).collect();
        let f = fit_ht(&w1, &w2, &OptimOptions::default())?;
        let (a, b) = (f.theta[0], f.theta[1]);
        let ok = (a - 0.7).abs() <= HT_ALPHA_TOL && (b - 0.3).abs() <= HT_BETA_TOL;
        Ok((ok, format!("alpha {a:.4} (tol {HT_ALPHA_TOL}) beta {b:.4} (tol {HT_BETA_TOL})")))
    });

    s.run(3, "EVAR recovery", Some(secs(60)), || {
        let w = evar1_windows(PHI, B, 5000, SEED);
        let p = evar1_params(&w, &OptimOptions::default())?;
        let truth = [PHI[0][0], PHI[0][1], PHI[1][0], PHI[1][1]];
        let err = (0..4).map(|i| (p[i] - truth[i]).abs()).fold(0.0, f64::max);
        Ok((
            err <= EVAR_PHI_TOL,
            format!("phi [[{:.4}, {:.4}], [{:.4}, {:.4}]] max error {err:.4} (tol {EVAR_PHI_TOL})", p[0], p[1], p[2], p[3]),
        ))
    });

    s.run(4, "reparameterization round trip", Some(secs(1)), || {
        let mut rng = stream_rng(SEED, 4);
        let mut worst = 0.0f64;
        for draw in 0..1000 {
            let k = 1 + draw % 3;
            let mut alpha: Vec<Vec<f64>> = (0..=k)
                .map(|_| {
                    (0..2)
                        .map(|_| {
                            let a: f64 = rng.random_range(0.05..1.0);
                            if rng.random::<bool>() {
                                a
                            } else {
                                -a
                            }
                        })
                        .collect()
                })
                .collect();
            alpha[0][0] = 1.0;
            let map = ReparamMap::new(alpha)?;
            let phi: PhiMatrices = (0..k)
                .map(|_| (0..2).map(|_| (0..2).map(|_| rng.random_range(-1.5..1.5)).collect()).collect())
                .collect();
            let back = unreparameterize(&reparameterize(&phi, &map)?, &map)?;
            for (p, q) in phi.iter().flatten().flatten().zip(back.iter().flatten().flatten()) {
                worst = worst.max((p - q).abs());
            }
        }
        Ok((worst <= ROUND_TRIP_TOL, format!("max error {worst:.2e} over 1000 draws (tol {ROUND_TRIP_TOL:.0e})")))
    });

    let d = data();
    let fitted = fit_model(ModelSpec::new(ModelFamily::Evar, CHECK_ORDER), &d.excursions, &d.margins, d.u, &OptimOptions::default());
    let mut ensemble = None;

    s.run(5, "rejection invariant", Some(secs(600)), || {
        let FittedModel::Chain(m) = fitted.as_ref().map_err(|e| stormchain::Error::Invalid(e.to_string()))? else {
            unreachable!("chain family")
        };
        let ens = simulate_ensemble(m, ENSEMBLE, SEED)?;
        let bad = ens
            .excursions
            .iter()
            .filter(|e| {
                let peak = e.y[e.i_star - e.start][0];
                e.y.iter().any(|r| r[0] > peak)
            })
            .count();
        let detail = format!(
            "{bad} of {} excursions overtop their peak; rejection rate {:.3}",
            ens.excursions.len(),
            ens.stats.rejection_rate()
        );
        ensemble = Some(ens);
        Ok((bad == 0, detail))
    });

    s.run(6, "marginal self-consistency", None, || {
        let series = generate_synthetic(&SyntheticSpec::default().with_seed(SEED).with_len(10_000))?;
        let margins = MarginPair::fit(&series, &MarginConfig::default())?;
        let y = margins.to_laplace(&series);
        let n = y.len() as f64;
        let mut ds = [0.0; 2];
        for (j, dj) in ds.iter_mut().enumerate() {
            let mut col: Vec<f64> = y.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            *dj = col
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let f = laplace_cdf(*v);
                    (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
                })
                .fold(0.0, f64::max);
        }
        let crit = KS_CRIT_1PC / n.sqrt();
        Ok((ds.iter().all(|v| *v < crit), format!("KS hs {:.4} ws {:.4}, 1% critical value {crit:.4}", ds[0], ds[1])))
    });

    s.run(7, "chi self-consistency", None, || {
        let ens = ensemble.as_ref().ok_or_else(|| stormchain::Error::Invalid("no ensemble".into()))?;
        let mut ok = true;
        let mut parts = Vec::new();
        for (pair, name) in [(ChiPair::HH, "chi_H"), (ChiPair::HW, "chi_HW")] {
            let band = chi_estimate(&d.y, d.u, 1, pair, 1000, SEED)?;
            let m = excursion_chi(&ens.excursions, d.u, 1, pair)?;
            ok &= band.lo <= m && m <= band.hi;
            parts.push(format!("{name}(u,1) model {m:.4} data {:.4} band [{:.4}, {:.4}]", band.value, band.lo, band.hi));
        }
        Ok((ok, format!("evar({CHECK_ORDER}): {}", parts.join("; "))))
    });

    s.run(8, "survival-curve oracle", None, || {
        let ens = ensemble.as_ref().ok_or_else(|| stormchain::Error::Invalid("no ensemble".into()))?;
        let obs: Vec<Excursion> = d.excursions.iter().filter(|e| !e.censored).cloned().collect();
        let peaks: Vec<f64> = obs.iter().filter_map(|e| e.peak_hs()).collect();
        let range = (quantile(&peaks, 0.5), f64::INFINITY);
        let (lo, hi) = survival_band(&obs, range, SURVIVAL_TAU, N_BOOT, 0.95, SEED)?;
        let c = survival_curve(&ens.excursions, range, SURVIVAL_TAU)?;
        let outside: Vec<String> = (0..c.prob.len())
            .filter(|i| c.prob[*i] < lo[*i] || c.prob[*i] > hi[*i])
            .map(|i| format!("tau {} at {:.3} vs [{:.3}, {:.3}]", c.taus[i], c.prob[i], lo[i], hi[i]))
            .collect();
        let s0 = c.at(0).unwrap_or(f64::NAN);
        let ok = outside.is_empty() && s0 == 1.0;
        Ok((
            ok,
            format!(
                "evar({CHECK_ORDER}), peak hs >= {:.2} m, survival(0) = {s0}, {} of {} lags outside the 95% band{}",
                range.0,
                outside.len(),
                c.prob.len(),
                if outside.is_empty() { String::new() } else { format!(": {}", outside.join(", ")) }
            ),
        ))
    });

    s.run(9, "distance metric", None, || {
        let mut rng = stream_rng(SEED, 9);
        let e: Vec<f64> = (0..5000).map(|_| (1.0 + rng.sample::<f64, _>(StandardNormal)).exp()).collect();
        let scaled: Vec<f64> = e.iter().map(|x| 1.1 * x).collect();
        let g = PercentileGrid::default();
        let same = distance_d(&e, &e, &g)?;
        let ratio = distance_d(&scaled, &e, &g)?;
        let ok = same == 0.0 && (ratio - 0.10).abs() <= D_RATIO_TOL;
        Ok((ok, format!("D(F,F) = {same}, D(1.1F,F) = {ratio:.15}")))
    });

    s.run(10, "historical matching construction", None, || {
        let hm = fit_hm(StormCatalog::from_excursions(&d.excursions), &d.margins.hs)?;
        let mut worst = 0.0f64;
        for i in 0..2000 {
            let draw = hm_draw(&hm, &mut stream_rng(SEED, i))?;
            let path = hm_simulate(&hm, &mut stream_rng(SEED, i))?;
            let max = path.hs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max((max - draw.hs_max).abs());
        }
        let a = hm_dissimilarity(7.0, 200.0, 7.0, 205.0);
        let b = hm_dissimilarity(7.0, 200.0, 7.5, 200.0);
        let ok = worst <= HM_PEAK_TOL && (a - b).abs() <= HM_CALIB_TOL;
        Ok((ok, format!("max |path max - storm max| {worst:.2e} over 2000 draws; 5 deg {a} vs 0.5 m {b}")))
    });

    s.run(11, "cross-validation ordering", Some(secs(1800)), || {
        let fresh = generate_synthetic(&SyntheticSpec::default().with_seed(SEED + 1).with_len(5 * d.series.len()))?;
        let fy = d.margins.to_laplace(&fresh);
        let pool = extract_with_physical(&fy, &fresh, d.u, DEFAULT_PAD)?
            .iter()
            .filter(|e| !e.censored)
            .filter_map(|e| e.physical_core())
            .collect();
        let gold = PoolCompetitor {
            name: "generator".into(),
            pool,
        };
        let specs = competitor_specs(&["evar", "mmem", "evar0", "hm"].map(String::from), 6)?;
        let fitted: Vec<FittedCompetitor> = specs
            .iter()
            .map(|s| FittedCompetitor {
                spec: *s,
                margins: &d.margins,
                u: d.u,
                opts: OptimOptions::default(),
            })
            .collect();
        let mut comps: Vec<&dyn Competitor> = vec![&gold];
        comps.extend(fitted.iter().map(|c| c as &dyn Competitor));
        let cfg = CvConfig {
            n_partitions: 10,
            ensemble_size: 2000,
            seed: SEED,
            ..CvConfig::default()
        };
        let rep = cross_validate(&d.excursions, &comps, &cfg)?;
        let mut ok = true;
        let mut parts = Vec::new();
        for r in &cfg.responses {
            for st in [Statistic::Rmax, Statistic::Rsum] {
                let mut rows: Vec<_> = rep.rows.iter().filter(|x| x.response == r.label() && x.statistic == st).collect();
                rows.sort_by(|a, b| a.mean_d.total_cmp(&b.mean_d));
                let rank = rows.iter().position(|x| x.model == "generator").map_or(0, |p| p + 1);
                ok &= rank == 1;
                parts.push(format!(
                    "{} {}: generator rank {rank}/{} (D {:.4}; best other {} {:.4})",
                    r.label(),
                    st.name(),
                    rows.len(),
                    rows.iter().find(|x| x.model == "generator").map_or(f64::NAN, |x| x.mean_d),
                    rows.iter().find(|x| x.model != "generator").map_or("-", |x| x.model.as_str()),
                    rows.iter().find(|x| x.model != "generator").map_or(f64::NAN, |x| x.mean_d),
                ));
            }
        }
        Ok((ok, parts.join("; ")))
    });

    s.run(12, "bootstrap coverage", Some(secs(3600)), || {
        let opts = OptimOptions {
            restarts: 0,
            ..OptimOptions::default()
        };
        let truth = [PHI[0][0], PHI[0][1], PHI[1][0], PHI[1][1], B[0], B[1]];
        let reps = 100;
        let mut hits = [0usize; 6];
        for r in 0..reps {
            let w = evar1_windows(PHI, B, 500, 1000 + r as u64);
            let ci = bootstrap_ci(|x: &[Vec<[f64; 2]>]| evar1_params(x, &opts), &w, 200, 0.9, r as u64)?;
            for (i, t) in truth.iter().enumerate() {
                hits[i] += usize::from(ci.covers(i, *t));
            }
        }
        let cov: Vec<f64> = hits.iter().map(|h| *h as f64 / reps as f64).collect();
        let ok = cov.iter().all(|c| (COVERAGE_BAND.0..=COVERAGE_BAND.1).contains(c));
        Ok((
            ok,
            format!(
                "90% interval coverage phi11 {:.2} phi12 {:.2} phi21 {:.2} phi22 {:.2} b1 {:.2} b2 {:.2} (band {:?}, 500 windows, 200 resamples)",
                cov[0], cov[1], cov[2], cov[3], cov[4], cov[5], COVERAGE_BAND
            ),
        ))
    });

    s.run(13, "peak-model dependence decays away from the peak", None, || {
        let pm = fit_peak_model(&d.excursions, 4, d.u, &OptimOptions::default())?;
        let a = &pm.params.alpha;
        let hs: Vec<f64> = [-3, -2, -1, 1, 2, 3].iter().map(|i| a.get(*i, 0)).collect();
        let ws: Vec<f64> = (-3..=3).map(|i| a.get(i, 1)).collect();
        let rises = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        let falls = |v: &[f64]| v.windows(2).all(|w| w[0] > w[1]);
        let ok = rises(&hs[..3]) && falls(&hs[3..]) && rises(&ws[..4]) && falls(&ws[3..]);
        let f = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ");
        Ok((ok, format!("alpha hs lags -3..3 without 0: {}; ws lags -3..3: {}", f(&hs), f(&ws))))
    });

    println!("acceptance: {} of 13 PASS{}", s.passed, if s.failed.is_empty() { String::new() } else { format!("; FAIL {:?}", s.failed) });
    if !s.failed.is_empty() && std::env::var_os("STORMCHAIN_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
