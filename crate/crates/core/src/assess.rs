//! Model comparison: the tail-quantile distance D, a random-partition
//! cross-validation harness over structure responses, and percentile
//! bootstrap intervals.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{fit_model, simulate_paths, ModelSpec};
use crate::error::{Error, Result};
use crate::excursions::{Excursion, PhysicalPath};
use crate::margins::MarginPair;
use crate::optim::OptimOptions;
use crate::response::{rmax, rsum, ResponseConfig};
use crate::util::{child_seed, mean, percentile_interval, quantile_sorted, sorted_copy, stream_rng};

pub const MIN_CV_EXCURSIONS: usize = 200;

/// Equidistant upper-tail probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileGrid {
    pub probs: Vec<f64>,
}

impl PercentileGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(0.0 < lo && lo < hi && hi < 1.0 && n >= 2) {
            return Err(Error::Config(format!("bad percentile grid {lo}..{hi} x {n}")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut probs: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
        probs[n - 1] = hi;
        Ok(Self { probs })
    }
}

impl Default for PercentileGrid {
    fn default() -> Self {
        Self::new(0.97, 0.999, 20).expect("valid grid")
    }
}

/// Mean absolute relative error of the model quantiles against the
/// empirical ones over the grid.
pub fn distance_d(model: &[f64], empirical: &[f64], grid: &PercentileGrid) -> Result<f64> {
    if model.is_empty() || empirical.is_empty() {
        return Err(Error::insufficient("distance needs non-empty samples"));
    }
    let (m, e) = (sorted_copy(model), sorted_copy(empirical));
    let mut s = 0.0;
    for &p in &grid.probs {
        let qe = quantile_sorted(&e, p);
        if qe == 0.0 {
            return Err(Error::Domain {
                value: p,
                message: "empirical quantile is zero".into(),
            });
        }
        s += ((qe - quantile_sorted(&m, p)) / qe).abs();
    }
    Ok(s / grid.probs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Rmax,
    Rsum,
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Statistic::Rmax => "rmax",
            Statistic::Rsum => "rsum",
        }
    }

    pub fn eval(self, p: &PhysicalPath, cfg: &ResponseConfig) -> f64 {
        match self {
            Statistic::Rmax => rmax(p, cfg).value,
            Statistic::Rsum => rsum(p, cfg).value,
        }
    }
}

/// Something that can be trained on excursions and then asked for
/// simulated physical trajectories.
pub trait Competitor: Sync {
    fn label(&self) -> String;
    fn order(&self) -> usize {
        0
    }
    fn paths(&self, train: &[Excursion], n: usize, seed: u64) -> Result<Vec<PhysicalPath>>;
}

/// A fitted model family from the engine.
pub struct FittedCompetitor<'a> {
    pub spec: ModelSpec,
    pub margins: &'a MarginPair,
    pub u: f64,
    pub opts: OptimOptions,
}

impl Competitor for FittedCompetitor<'_> {
    fn label(&self) -> String {
        self.spec.label()
    }

    fn order(&self) -> usize {
        self.spec.k
    }

    fn paths(&self, train: &[Excursion], n: usize, seed: u64) -> Result<Vec<PhysicalPath>> {
        let m = fit_model(self.spec, train, self.margins, self.u, &self.opts)?;
        Ok(simulate_paths(&m, n, seed)?.0)
    }
}

/// Ignores the training data and resamples from a fixed pool of
/// trajectories, e.g. excursions of a fresh run of the data generator.
pub struct PoolCompetitor {
    pub name: String,
    pub pool: Vec<PhysicalPath>,
}

impl Competitor for PoolCompetitor {
    fn label(&self) -> String {
        self.name.clone()
    }

    fn paths(&self, _train: &[Excursion], n: usize, seed: u64) -> Result<Vec<PhysicalPath>> {
        if self.pool.is_empty() {
            return Err(Error::insufficient("empty trajectory pool"));
        }
        let mut rng = stream_rng(seed, 0);
        Ok((0..n).map(|_| self.pool[rng.random_range(0..self.pool.len())].clone()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub n_partitions: usize,
    pub train_frac: f64,
    pub ensemble_size: usize,
    pub responses: Vec<ResponseConfig>,
    pub grid: PercentileGrid,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_partitions: 50,
            train_frac: 0.25,
            ensemble_size: 20_000,
            responses: ResponseConfig::defaults().to_vec(),
            grid: PercentileGrid::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub model: String,
    pub order: usize,
    pub response: String,
    pub statistic: Statistic,
    pub mean_d: f64,
    /// Central 80% range of the per-partition values.
    pub lo: f64,
    pub hi: f64,
    pub partitions: usize,
    /// Partitions where fitting or simulating this model failed.
    pub failures: Vec<(usize, String)>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub seed: u64,
    pub n_partitions: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub rows: Vec<CvRow>,
}

impl CvReport {
    pub fn row(&self, model: &str, response: &str, statistic: Statistic) -> Option<&CvRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.response == response && r.statistic == statistic)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "order", "response", "statistic", "mean_d", "lo", "hi", "partitions", "failures"])?;
        for r in &self.rows {
            out.write_record([
                r.model.clone(),
                r.order.to_string(),
                r.response.clone(),
                r.statistic.name().to_string(),
                r.mean_d.to_string(),
                r.lo.to_string(),
                r.hi.to_string(),
                r.partitions.to_string(),
                r.failures.len().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Training and test index sets of partition `p`.
pub fn partition_indices(n: usize, train_frac: f64, seed: u64, p: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(child_seed(seed, p as u64), 1));
    let n_train = ((n as f64 * train_frac).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    (idx, test)
}

type PartitionResult = Vec<std::result::Result<Vec<f64>, String>>;

/// Per partition: train each competitor on a random `train_frac` share of
/// the excursions, simulate, and score every response statistic against the
/// held-out excursions. All competitors share the simulation seed of a
/// partition.
pub fn cross_validate(excursions: &[Excursion], competitors: &[&dyn Competitor], cfg: &CvConfig) -> Result<CvReport> {
    let obs: Vec<&Excursion> = excursions.iter().filter(|e| !e.censored && e.has_physical()).collect();
    if obs.len() < MIN_CV_EXCURSIONS {
        return Err(Error::insufficient(format!(
            "cross-validation needs {MIN_CV_EXCURSIONS} excursions, got {}",
            obs.len()
        )));
    }
    if !(0.0 < cfg.train_frac && cfg.train_frac < 1.0) || cfg.n_partitions == 0 || cfg.responses.is_empty() {
        return Err(Error::Config("cross-validation needs 0 < train_frac < 1, partitions and responses".into()));
    }
    let stats = [Statistic::Rmax, Statistic::Rsum];
    let cases: Vec<(ResponseConfig, Statistic)> = cfg.responses.iter().flat_map(|r| stats.map(|s| (*r, s))).collect();
    let n = obs.len();
    let per_partition: Vec<PartitionResult> = (0..cfg.n_partitions)
        .into_par_iter()
        .map(|p| {
            let (train_i, test_i) = partition_indices(n, cfg.train_frac, cfg.seed, p);
            let train: Vec<Excursion> = train_i.iter().map(|i| obs[*i].clone()).collect();
            let test: Vec<PhysicalPath> = test_i.iter().map(|i| obs[*i].physical_core().expect("physical")).collect();
            let sim_seed = child_seed(cfg.seed, 1_000_000 + p as u64);
            competitors
                .iter()
                .map(|c| {
                    let paths = c.paths(&train, cfg.ensemble_size, sim_seed).map_err(|e| e.to_string())?;
                    cases
                        .iter()
                        .map(|(r, s)| {
                            let model: Vec<f64> = paths.iter().map(|x| s.eval(x, r)).collect();
                            let emp: Vec<f64> = test.iter().map(|x| s.eval(x, r)).collect();
                            distance_d(&model, &emp, &cfg.grid).map_err(|e| e.to_string())
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for (ci, c) in competitors.iter().enumerate() {
        for (k, (r, s)) in cases.iter().enumerate() {
            let mut values = Vec::new();
            let mut failures = Vec::new();
            for (p, res) in per_partition.iter().enumerate() {
                match &res[ci] {
                    Ok(v) => values.push(v[k]),
                    Err(e) => failures.push((p, e.clone())),
                }
            }
            for (p, e) in &failures {
                log::warn!("{} failed on partition {p}: {e}", c.label());
            }
            let (mean_d, lo, hi) = if values.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let (lo, hi) = percentile_interval(&values, 0.8);
                (mean(&values), lo, hi)
            };
            rows.push(CvRow {
                model: c.label(),
                order: c.order(),
                response: r.label(),
                statistic: *s,
                mean_d,
                lo,
                hi,
                partitions: values.len(),
                failures,
                values,
            });
        }
    }
    let (tr, te) = partition_indices(n, cfg.train_frac, cfg.seed, 0);
    Ok(CvReport {
        seed: cfg.seed,
        n_partitions: cfg.n_partitions,
        train_size: tr.len(),
        test_size: te.len(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub estimate: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub level: f64,
    pub failures: usize,
}

impl BootstrapCi {
    pub fn covers(&self, i: usize, v: f64) -> bool {
        self.lo[i] <= v && v <= self.hi[i]
    }
}

/// Percentile intervals for the parameter vector returned by `fit`, from
/// `n_boot` resamples of the items with replacement. More than 10% failed
/// refits is an error.
pub fn bootstrap_ci<T, F>(fit: F, items: &[T], n_boot: usize, level: f64, seed: u64) -> Result<BootstrapCi>
where
    T: Clone + Sync,
    F: Fn(&[T]) -> Result<Vec<f64>> + Sync,
{
    if items.is_empty() || n_boot == 0 || !(0.0 < level && level < 1.0) {
        return Err(Error::Config("bootstrap needs items, replicates and a level in (0, 1)".into()));
    }
    let estimate = fit(items)?;
    let reps: Vec<Option<Vec<f64>>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let sample: Vec<T> = (0..items.len()).map(|_| items[rng.random_range(0..items.len())].clone()).collect();
            fit(&sample).ok().filter(|v| v.len() == estimate.len())
        })
        .collect();
    let ok: Vec<Vec<f64>> = reps.into_iter().flatten().collect();
    let failures = n_boot - ok.len();
    if failures * 10 > n_boot {
        return Err(Error::Fit {
            message: format!("{failures} of {n_boot} bootstrap refits failed"),
            best: estimate,
            grad_norm: f64::NAN,
        });
    }
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for i in 0..estimate.len() {
        let col: Vec<f64> = ok.iter().map(|v| v[i]).collect();
        let (l, h) = percentile_interval(&col, level);
        lo.push(l);
        hi.push(h);
    }
    Ok(BootstrapCi {
        estimate,
        lo,
        hi,
        level,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn grid_shape() {
        let g = PercentileGrid::default();
        assert_eq!(g.probs.len(), 20);
        assert_eq!(g.probs[0], 0.97);
        assert_eq!(g.probs[19], 0.999);
        let d: Vec<f64> = g.probs.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(d.iter().all(|x| (x - d[0]).abs() < 1e-12 && *x > 0.0));
    }

    fn positive_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| 1.0 + Exp::new(0.3).unwrap().sample(&mut rng)).collect()
    }

    #[test]
    fn distance_cases() {
        let g = PercentileGrid::default();
        let e = positive_sample(5000, 1);
        assert_eq!(distance_d(&e, &e, &g).unwrap(), 0.0);
        let scaled: Vec<f64> = e.iter().map(|x| 1.1 * x).collect();
        assert!((distance_d(&scaled, &e, &g).unwrap() - 0.1).abs() < 1e-12);
        let shifted: Vec<f64> = e.iter().map(|x| x + 2.0).collect();
        let (a, b) = (distance_d(&shifted, &e, &g).unwrap(), distance_d(&e, &shifted, &g).unwrap());
        assert!((a - b).abs() > 1e-3, "{a} {b}");
        let zeros = vec![0.0; 100];
        assert!(matches!(distance_d(&e, &zeros, &g), Err(Error::Domain { .. })));
    }

    #[test]
    fn partitions_honour_the_fraction() {
        for n in [200, 201, 333] {
            let (tr, te) = partition_indices(n, 0.25, 4, 3);
            assert!((tr.len() as f64 - 0.25 * n as f64).abs() <= 1.0);
            assert_eq!(tr.len() + te.len(), n);
            let mut all: Vec<usize> = tr.iter().chain(&te).cloned().collect();
            all.sort();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn identical_data_gives_zero_width_intervals() {
        let items = vec![3.5f64; 40];
        let ci = bootstrap_ci(|s: &[f64]| Ok(vec![mean(s), s[0] * 2.0]), &items, 50, 0.9, 1).unwrap();
        assert_eq!(ci.lo, ci.hi);
        assert!(ci.covers(0, 3.5) && ci.covers(1, 7.0));
    }

    #[test]
    fn interval_contains_the_estimate() {
        let items = positive_sample(300, 2);
        let ci = bootstrap_ci(|s: &[f64]| Ok(vec![mean(s)]), &items, 300, 0.9, 3).unwrap();
        assert!(ci.covers(0, ci.estimate[0]));
    }

    #[test]
    fn too_many_failures_is_an_error() {
        let items: Vec<usize> = (0..20).collect();
        // only the original sample fits
        let r = bootstrap_ci(
            |s: &[usize]| if s.len() == items.len() && s == items.as_slice() { Ok(vec![1.0]) } else { Err(Error::invalid("x")) },
            &items,
            50,
            0.9,
            1,
        );
        assert!(matches!(r, Err(Error::Fit { .. })));
    }

    struct Scaled(f64);

    impl Competitor for Scaled {
        fn label(&self) -> String {
            format!("scaled {}", self.0)
        }
        fn paths(&self, train: &[Excursion], n: usize, _seed: u64) -> Result<Vec<PhysicalPath>> {
            let src: Vec<PhysicalPath> = train.iter().filter_map(|e| e.physical_core()).collect();
            Ok((0..n)
                .map(|i| {
                    let mut p = src[i % src.len()].clone();
                    p.hs.iter_mut().for_each(|h| *h *= self.0);
                    p
                })
                .collect())
        }
    }

    fn toy_excursions(n: usize, seed: u64) -> Vec<Excursion> {
        let mut rng = stream_rng(seed, 0);
        (0..n)
            .map(|_| {
                let len = rng.random_range(6..20);
                let i_star = rng.random_range(0..len);
                let top = 4.0 + Exp::new(0.5).unwrap().sample(&mut rng);
                let hs: Vec<f64> = (0..len).map(|i| top * (1.0 - 0.04 * (i as f64 - i_star as f64).abs())).collect();
                Excursion {
                    a: 0,
                    b: len - 1,
                    i_star,
                    censored: false,
                    start: 0,
                    y: vec![[3.0, 0.0]; len],
                    ws: hs.iter().map(|h| 3.0 * h).collect(),
                    theta_h: vec![10.0; len],
                    theta_w: vec![20.0; len],
                    hs,
                }
            })
            .collect()
    }

    #[test]
    fn cross_validation_determinism_and_ranking() {
        let ex = toy_excursions(240, 5);
        let cfg = CvConfig {
            n_partitions: 6,
            ensemble_size: 500,
            ..Default::default()
        };
        let (a, b, worse) = (Scaled(1.0), Scaled(1.0), Scaled(1.3));
        let rep = cross_validate(&ex, &[&a, &b, &worse], &cfg).unwrap();
        assert_eq!(rep.rows.len(), 3 * 4);
        for k in 0..4 {
            let (ra, rb, rw) = (&rep.rows[k], &rep.rows[4 + k], &rep.rows[8 + k]);
            assert_eq!(ra.values, rb.values);
            assert!(ra.mean_d < rw.mean_d);
            assert!(ra.lo <= ra.mean_d && ra.mean_d <= ra.hi);
            assert_eq!(ra.partitions, 6);
            assert_eq!((ra.lo, ra.hi), percentile_interval(&ra.values, 0.8));
        }
        let again = cross_validate(&ex, &[&a, &b, &worse], &cfg).unwrap();
        assert_eq!(rep, again);
        assert!(cross_validate(&ex[..150], &[&a], &cfg).is_err());
    }

    proptest! {
        #[test]
        fn distance_is_non_negative(seed in 0u64..500, scale in 0.5f64..2.0) {
            let e = positive_sample(1000, seed);
            let m: Vec<f64> = positive_sample(1000, seed + 1).iter().map(|x| x * scale).collect();
            let g = PercentileGrid::default();
            prop_assert!(distance_d(&m, &e, &g).unwrap() >= 0.0);
            prop_assert_eq!(distance_d(&e, &e, &g).unwrap(), 0.0);
        }
    }
}
