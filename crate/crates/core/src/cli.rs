//! Command-line driver. Every subcommand reads its settings from flags laid
//! over an optional JSON config file, and writes a manifest next to its
//! outputs recording the resolved config and the content hashes of the files
//! it read and wrote.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::assess::{cross_validate, Competitor, CvConfig, FittedCompetitor, PercentileGrid};
use crate::data::{generate_synthetic, read_csv, write_csv, MetOceanSeries, SyntheticSpec};
use crate::engine::{fit_model, simulate_ensemble, simulate_paths, FittedModel, ModelFamily, ModelSpec, RejectionScope, SimStats};
use crate::error::{Error, Result};
use crate::excursions::{
    chi_estimate, excursion_chi, extract_with_physical, survival_band, survival_curve, ChiPair, Excursion, PhysicalPath, DEFAULT_PAD,
};
use crate::margins::{laplace_quantile, MarginConfig, MarginPair};
use crate::optim::OptimOptions;
use crate::response::{rmax, rsum, ResponseConfig};
use crate::util::{mean, quantile};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Parser)]
#[command(name = "stormchain", version, about = "Simulate and assess extreme storm excursions")]
pub struct Cli {
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic met-ocean series as CSV.
    Synth(SynthArgs),
    /// Fit a model to a series and write it as JSON.
    Fit(FitArgs),
    /// Simulate an ensemble of excursions from a fitted model.
    Simulate(SimulateArgs),
    /// Chi and survival curves of a series, optionally against an ensemble.
    Diagnose(DiagnoseArgs),
    /// Structure responses of every excursion in a series or ensemble.
    Respond(RespondArgs),
    /// Cross-validate model families on a series.
    Crossval(CrossvalArgs),
    /// Run the job recorded in a manifest again.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    KeepPeak,
    Excursion,
}

impl From<Rejection> for RejectionScope {
    fn from(r: Rejection) -> Self {
        match r {
            Rejection::KeepPeak => RejectionScope::KeepPeak,
            Rejection::Excursion => RejectionScope::Excursion,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    /// JSON file with settings; flags win over it.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of time steps.
    #[arg(long)]
    pub n: Option<usize>,
    /// Full generator settings; config file only.
    #[arg(skip)]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Series CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// mmem, evar, evar0 or hm.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub order: Option<usize>,
    /// Non-exceedance probability of the Laplace threshold.
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Seed of the optimizer restarts.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Fitted-model JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Ensemble CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON; next to the ensemble when omitted.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub rejection: Option<Rejection>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Ensemble CSV to compare against the data.
    #[arg(long)]
    pub ensemble: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Lower end of the peak hs range for survival curves; the median data
    /// peak when omitted.
    #[arg(long)]
    pub peak_lo: Option<f64>,
    #[arg(long)]
    pub peak_hi: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RespondArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Series CSV or ensemble CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Threshold probability, used when the input is a series.
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Response as `c,h`; repeat for several.
    #[arg(long, value_parser = parse_response)]
    pub response: Option<Vec<ResponseConfig>>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Report CSV; the full report goes to the same path with a `.json`
    /// extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Comma-separated families.
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    #[arg(long)]
    pub max_order: Option<usize>,
    #[arg(long)]
    pub partitions: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub ensemble: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_response)]
    pub response: Option<Vec<ResponseConfig>>,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Fail unless every output hashes as recorded.
    #[arg(long)]
    pub verify: bool,
}

fn parse_response(s: &str) -> std::result::Result<ResponseConfig, String> {
    let (c, h) = s.split_once(',').ok_or("expected `c,h`")?;
    let c: f64 = c.trim().parse().map_err(|e| format!("c: {e}"))?;
    let h: f64 = h.trim().parse().map_err(|e| format!("h: {e}"))?;
    ResponseConfig::new(c, h).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn hashes(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// Manifest path of a job whose first output is `out`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(MANIFEST_SUFFIX);
    PathBuf::from(s)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Lays the flags given on the command line over the config file.
fn resolve<T: Serialize + DeserializeOwned>(cli: &T, config: Option<&Path>) -> Result<T> {
    let mut base = match config {
        Some(p) => {
            let v: Value = serde_json::from_reader(BufReader::new(File::open(p)?))
                .map_err(|e| Error::Config(format!("config file {}: {e}", p.display())))?;
            if !v.is_object() {
                return Err(Error::Config("config file must hold a JSON object".into()));
            }
            v
        }
        None => Value::Object(Default::default()),
    };
    if let (Value::Object(b), Value::Object(o)) = (&mut base, serde_json::to_value(cli)?) {
        for (k, v) in o {
            if !v.is_null() {
                b.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))
}

/// Fails early, naming the file, when an input is missing.
fn input_file(v: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    let p = required(v, name)?;
    if !p.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{name} file {} not found", p.display()),
        )));
    }
    Ok(p)
}

fn required<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Config(format!("missing `{name}`")))
}

fn check_quantile(q: f64) -> Result<f64> {
    if q > 0.0 && q < 1.0 {
        Ok(q)
    } else {
        Err(Error::Config(format!("threshold probability must lie in (0, 1), got {q}")))
    }
}

/// Refuses to write over any of the inputs.
fn check_distinct(inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
    let canon = |p: &Path| std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    for o in outputs {
        if inputs.iter().any(|i| canon(i) == canon(o)) {
            return Err(Error::Config(format!("output {} would overwrite an input", o.display())));
        }
    }
    let mut seen: Vec<PathBuf> = outputs.iter().map(|p| canon(p)).collect();
    seen.sort();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("output paths must be distinct".into()));
    }
    Ok(())
}

struct Job {
    command: &'static str,
    seed: Option<u64>,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Job {
    /// Writes the manifest after the outputs; returns its path.
    fn finish(self, manifest: PathBuf) -> Result<PathBuf> {
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            seed: self.seed,
            config: self.config,
            inputs: hashes(&self.inputs)?,
            outputs: hashes(&self.outputs)?,
        };
        write_json(&manifest, &m)?;
        Ok(manifest)
    }
}

/// Series excursions with the margins and threshold used to find them.
fn observed(series: &MetOceanSeries, q: f64) -> Result<(MarginPair, f64, Vec<[f64; 2]>, Vec<Excursion>)> {
    let margins = MarginPair::fit(series, &MarginConfig::default())?;
    let y = margins.to_laplace(series);
    let u = laplace_quantile(q);
    let ex = extract_with_physical(&y, series, u, DEFAULT_PAD)?;
    Ok((margins, u, y, ex))
}

pub fn run_synth(a: &SynthArgs) -> Result<PathBuf> {
    let mut a = resolve(a, a.config.as_deref())?;
    let out = required(&a.out, "out")?;
    let mut spec = a.synthetic.clone().unwrap_or_default();
    spec.seed = *a.seed.get_or_insert(spec.seed);
    spec.n = *a.n.get_or_insert(spec.n);
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    a.synthetic = Some(spec.clone());
    let series = generate_synthetic(&spec)?;
    write_csv(&series, &out)?;
    Job {
        command: "synth",
        seed: a.seed,
        config: serde_json::to_value(&a)?,
        inputs: vec![],
        outputs: vec![out.clone()],
    }
    .finish(manifest_path(&out))
}

pub fn run_fit(a: &FitArgs) -> Result<PathBuf> {
    let mut a = resolve(a, a.config.as_deref())?;
    let data = input_file(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    check_distinct(std::slice::from_ref(&data), std::slice::from_ref(&out))?;
    let family: ModelFamily = a.family.get_or_insert_with(|| "evar".into()).parse()?;
    let k = *a.order.get_or_insert(if family == ModelFamily::Hm { 0 } else { 1 });
    let q = check_quantile(*a.quantile.get_or_insert(0.95))?;
    let opts = OptimOptions {
        seed: *a.seed.get_or_insert(OptimOptions::default().seed),
        ..OptimOptions::default()
    };
    let series = read_csv(&data)?;
    let (margins, u, _, ex) = observed(&series, q)?;
    let model = fit_model(ModelSpec::new(family, k), &ex, &margins, u, &opts)?;
    write_json(&out, &model)?;
    Job {
        command: "fit",
        seed: a.seed,
        config: serde_json::to_value(&a)?,
        inputs: vec![data],
        outputs: vec![out.clone()],
    }
    .finish(manifest_path(&out))
}

pub const ENSEMBLE_HEADER: [&str; 10] = ["excursion", "t", "hs", "ws", "theta_h", "theta_w", "y_hs", "y_ws", "core", "peak"];

fn fmt_opt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// One row per stored time step. Laplace columns are empty for
/// trajectories that only exist on the physical scale.
pub fn write_ensemble<W: Write>(excursions: &[Excursion], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ENSEMBLE_HEADER)?;
    for (id, e) in excursions.iter().enumerate() {
        if !e.has_physical() {
            return Err(Error::invalid("ensemble rows need physical columns"));
        }
        for r in 0..e.y.len() {
            let t = e.start + r;
            out.write_record([
                id.to_string(),
                t.to_string(),
                e.hs[r].to_string(),
                e.ws[r].to_string(),
                e.theta_h[r].to_string(),
                e.theta_w[r].to_string(),
                fmt_opt(e.y[r][0]),
                fmt_opt(e.y[r][1]),
                u8::from(t >= e.a && t <= e.b).to_string(),
                u8::from(t == e.i_star).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cell<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, row: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let s = rec.get(i).unwrap_or("");
    s.trim().parse().map_err(|e: T::Err| Error::Parse {
        row,
        column: ENSEMBLE_HEADER[i].into(),
        message: e.to_string(),
    })
}

pub fn read_ensemble<R: Read>(r: R) -> Result<Vec<Excursion>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(|s| s.to_string()).collect();
    if header != ENSEMBLE_HEADER {
        return Err(Error::Parse {
            row: 1,
            column: "header".into(),
            message: format!("expected {}", ENSEMBLE_HEADER.join(",")),
        });
    }
    let mut out: Vec<Excursion> = Vec::new();
    let mut last_id = None;
    let mut core = Vec::new();
    let mut peak = None;
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let id: usize = cell(&rec, 0, row)?;
        let t: usize = cell(&rec, 1, row)?;
        if last_id != Some(id) {
            if let Some(e) = out.last_mut() {
                close_excursion(e, &core, peak)?;
            }
            out.push(Excursion {
                a: 0,
                b: 0,
                i_star: 0,
                censored: false,
                start: t,
                y: vec![],
                hs: vec![],
                ws: vec![],
                theta_h: vec![],
                theta_w: vec![],
            });
            last_id = Some(id);
            core.clear();
            peak = None;
        }
        let e = out.last_mut().expect("pushed above");
        if t != e.start + e.y.len() {
            return Err(Error::Parse {
                row,
                column: "t".into(),
                message: "time steps of an excursion must be consecutive".into(),
            });
        }
        let opt = |j: usize| -> Result<f64> {
            if rec.get(j).is_some_and(|s| s.trim().is_empty()) {
                Ok(f64::NAN)
            } else {
                cell(&rec, j, row)
            }
        };
        e.hs.push(cell(&rec, 2, row)?);
        e.ws.push(cell(&rec, 3, row)?);
        e.theta_h.push(cell(&rec, 4, row)?);
        e.theta_w.push(cell(&rec, 5, row)?);
        e.y.push([opt(6)?, opt(7)?]);
        if cell::<u8>(&rec, 8, row)? == 1 {
            core.push(t);
        }
        if cell::<u8>(&rec, 9, row)? == 1 {
            peak = Some(t);
        }
    }
    if let Some(e) = out.last_mut() {
        close_excursion(e, &core, peak)?;
    }
    Ok(out)
}

fn close_excursion(e: &mut Excursion, core: &[usize], peak: Option<usize>) -> Result<()> {
    let bad = |m: &str| Error::Parse {
        row: 0,
        column: "core".into(),
        message: m.into(),
    };
    let (&a, &b) = core.first().zip(core.last()).ok_or_else(|| bad("excursion without core rows"))?;
    let p = peak.ok_or_else(|| bad("excursion without a peak row"))?;
    if b - a + 1 != core.len() || p < a || p > b {
        return Err(bad("core rows must be contiguous and contain the peak"));
    }
    e.a = a;
    e.b = b;
    e.i_star = p;
    Ok(())
}

fn path_excursion(p: PhysicalPath) -> Excursion {
    let n = p.hs.len();
    Excursion {
        a: 0,
        b: n - 1,
        i_star: p.i_star,
        censored: false,
        start: 0,
        y: vec![[f64::NAN; 2]; n],
        hs: p.hs,
        ws: p.ws,
        theta_h: p.theta_h,
        theta_w: p.theta_w,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub model: String,
    pub n: usize,
    pub seed: u64,
    pub rejection: Option<Rejection>,
    pub stats: SimStats,
    pub rejection_rate: f64,
    pub mean_length: f64,
    pub max_length: usize,
    pub mean_peak_hs: f64,
    pub max_peak_hs: f64,
}

pub fn run_simulate(a: &SimulateArgs) -> Result<PathBuf> {
    let mut a = resolve(a, a.config.as_deref())?;
    let model_path = input_file(&a.model, "model")?;
    let out = required(&a.out, "out")?;
    let summary = a
        .summary
        .get_or_insert_with(|| out.with_extension("summary.json"))
        .clone();
    check_distinct(std::slice::from_ref(&model_path), &[out.clone(), summary.clone()])?;
    let n = *a.n.get_or_insert(20_000);
    let seed = *a.seed.get_or_insert(1);
    if n == 0 {
        return Err(Error::Config("ensemble size must be positive".into()));
    }
    let model: FittedModel = serde_json::from_reader(BufReader::new(File::open(&model_path)?))?;
    let (excursions, stats) = match &model {
        FittedModel::Chain(m) => {
            let mut m = m.as_ref().clone();
            m.rejection = (*a.rejection.get_or_insert(Rejection::KeepPeak)).into();
            let e = simulate_ensemble(&m, n, seed)?;
            (e.excursions, e.stats)
        }
        FittedModel::Hm(_) => {
            a.rejection = None;
            let (paths, stats) = simulate_paths(&model, n, seed)?;
            (paths.into_iter().map(path_excursion).collect::<Vec<_>>(), stats)
        }
    };
    let mut w = BufWriter::new(File::create(&out)?);
    write_ensemble(&excursions, &mut w)?;
    w.flush()?;
    let peaks: Vec<f64> = excursions.iter().filter_map(|e| e.peak_hs()).collect();
    let lens: Vec<f64> = excursions.iter().map(|e| e.len() as f64).collect();
    write_json(
        &summary,
        &EnsembleSummary {
            model: model.spec().label(),
            n,
            seed,
            rejection: a.rejection,
            stats,
            rejection_rate: stats.rejection_rate(),
            mean_length: mean(&lens),
            max_length: excursions.iter().map(|e| e.len()).max().unwrap_or(0),
            mean_peak_hs: mean(&peaks),
            max_peak_hs: peaks.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        },
    )?;
    Job {
        command: "simulate",
        seed: Some(seed),
        config: serde_json::to_value(&a)?,
        inputs: vec![model_path],
        outputs: vec![out.clone(), summary],
    }
    .finish(manifest_path(&out))
}

fn read_ensemble_file(path: &Path) -> Result<Vec<Excursion>> {
    read_ensemble(BufReader::new(File::open(path)?))
}

pub fn run_diagnose(a: &DiagnoseArgs) -> Result<PathBuf> {
    let mut a = resolve(a, a.config.as_deref())?;
    let data = input_file(&a.data, "data")?;
    let dir = required(&a.out_dir, "out_dir")?;
    let q = check_quantile(*a.quantile.get_or_insert(0.95))?;
    let max_lag = *a.max_lag.get_or_insert(12);
    let n_boot = *a.n_boot.get_or_insert(500);
    let seed = *a.seed.get_or_insert(1);
    if max_lag == 0 {
        return Err(Error::Config("max_lag must be at least 1".into()));
    }
    std::fs::create_dir_all(&dir)?;
    let chi_out = dir.join("chi.csv");
    let surv_out = dir.join("survival.csv");
    let mut inputs = vec![data.clone()];
    inputs.extend(a.ensemble.clone());
    check_distinct(&inputs, &[chi_out.clone(), surv_out.clone()])?;

    let series = read_csv(&data)?;
    let (_, u, y, ex) = observed(&series, q)?;
    let ens = a.ensemble.as_deref().map(read_ensemble_file).transpose()?;
    let ens_laplace = ens.as_ref().filter(|e| e.iter().all(|x| x.y.iter().all(|r| r[0].is_finite())));
    if ens.is_some() && ens_laplace.is_none() {
        log::warn!("ensemble has no Laplace columns; chi is reported for the data only");
    }

    let mut w = csv::Writer::from_path(&chi_out)?;
    w.write_record(["source", "pair", "lag", "value", "lo", "hi"])?;
    for (pair, name) in [(ChiPair::HH, "hh"), (ChiPair::HW, "hw"), (ChiPair::WW, "ww")] {
        for lag in 1..=max_lag {
            let c = chi_estimate(&y, u, lag, pair, n_boot, seed)?;
            w.write_record(["data".into(), name.into(), lag.to_string(), c.value.to_string(), c.lo.to_string(), c.hi.to_string()])?;
        }
        if let (Some(e), true) = (ens_laplace, pair != ChiPair::WW) {
            for lag in 1..=max_lag {
                let v = excursion_chi(e, u, lag, pair)?;
                w.write_record(["model".into(), name.into(), lag.to_string(), v.to_string(), String::new(), String::new()])?;
            }
        }
    }
    w.flush()?;

    let peaks: Vec<f64> = ex.iter().filter(|e| !e.censored).filter_map(|e| e.peak_hs()).collect();
    let lo = *a.peak_lo.get_or_insert_with(|| quantile(&peaks, 0.5));
    let hi = *a.peak_hi.get_or_insert(f64::MAX);
    let obs: Vec<Excursion> = ex.into_iter().filter(|e| !e.censored).collect();
    let tau = max_lag as i64;
    let curve = survival_curve(&obs, (lo, hi), tau)?;
    let (blo, bhi) = survival_band(&obs, (lo, hi), tau, n_boot, 0.95, seed)?;
    let mut w = csv::Writer::from_path(&surv_out)?;
    w.write_record(["source", "tau", "prob", "lo", "hi"])?;
    for (i, t) in curve.taus.iter().enumerate() {
        w.write_record(["data".into(), t.to_string(), curve.prob[i].to_string(), blo[i].to_string(), bhi[i].to_string()])?;
    }
    if let Some(e) = &ens {
        let c = survival_curve(e, (lo, hi), tau)?;
        for (i, t) in c.taus.iter().enumerate() {
            w.write_record(["model".into(), t.to_string(), c.prob[i].to_string(), String::new(), String::new()])?;
        }
    }
    w.flush()?;
    Job {
        command: "diagnose",
        seed: Some(seed),
        config: serde_json::to_value(&a)?,
        inputs,
        outputs: vec![chi_out, surv_out],
    }
    .finish(dir.join("manifest.json"))
}

fn looks_like_ensemble(path: &Path) -> Result<bool> {
    let mut rd = csv::Reader::from_path(path)?;
    Ok(rd.headers()?.get(0) == Some(ENSEMBLE_HEADER[0]))
}

pub fn run_respond(a: &RespondArgs) -> Result<PathBuf> {
    let mut a = resolve(a, a.config.as_deref())?;
    let input = input_file(&a.input, "input")?;
    let out = required(&a.out, "out")?;
    check_distinct(std::slice::from_ref(&input), std::slice::from_ref(&out))?;
    let responses = a.response.get_or_insert_with(|| ResponseConfig::defaults().to_vec()).clone();
    for r in &responses {
        ResponseConfig::new(r.c, r.h)?;
    }
    let paths: Vec<PhysicalPath> = if looks_like_ensemble(&input)? {
        a.quantile = None;
        read_ensemble_file(&input)?.iter().filter_map(|e| e.physical_core()).collect()
    } else {
        let q = check_quantile(*a.quantile.get_or_insert(0.95))?;
        let (_, _, _, ex) = observed(&read_csv(&input)?, q)?;
        ex.iter().filter(|e| !e.censored).filter_map(|e| e.physical_core()).collect()
    };
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["excursion", "response", "rmax", "rsum", "empty"])?;
    for (id, p) in paths.iter().enumerate() {
        for r in &responses {
            let (m, s) = (rmax(p, r), rsum(p, r));
            w.write_record([id.to_string(), r.label(), m.value.to_string(), s.value.to_string(), u8::from(m.empty).to_string()])?;
        }
    }
    w.flush()?;
    Job {
        command: "respond",
        seed: None,
        config: serde_json::to_value(&a)?,
        inputs: vec![input],
        outputs: vec![out.clone()],
    }
    .finish(manifest_path(&out))
}

/// Competitor specs for a list of families: orders `1..=max_order` for the
/// chain families and a single entry for historical matching.
pub fn competitor_specs(families: &[String], max_order: usize) -> Result<Vec<ModelSpec>> {
    let mut specs = Vec::new();
    for f in families {
        let fam: ModelFamily = f.trim().parse()?;
        if fam == ModelFamily::Hm {
            specs.push(ModelSpec::new(fam, 0));
        } else {
            specs.extend((1..=max_order).map(|k| ModelSpec::new(fam, k)));
        }
    }
    if specs.is_empty() {
        return Err(Error::Config("no model families given".into()));
    }
    Ok(specs)
}

pub fn run_crossval(a: &CrossvalArgs) -> Result<PathBuf> {
    let mut a = resolve(a, a.config.as_deref())?;
    let data = input_file(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    let report = out.with_extension("json");
    check_distinct(std::slice::from_ref(&data), &[out.clone(), report.clone()])?;
    let q = check_quantile(*a.quantile.get_or_insert(0.95))?;
    let families = a
        .families
        .get_or_insert_with(|| ["evar", "mmem", "evar0", "hm"].map(String::from).to_vec())
        .clone();
    let max_order = *a.max_order.get_or_insert(6);
    let defaults = CvConfig::default();
    let cfg = CvConfig {
        n_partitions: *a.partitions.get_or_insert(defaults.n_partitions),
        train_frac: *a.train_frac.get_or_insert(defaults.train_frac),
        ensemble_size: *a.ensemble.get_or_insert(defaults.ensemble_size),
        responses: a.response.get_or_insert(defaults.responses).clone(),
        grid: PercentileGrid::default(),
        seed: *a.seed.get_or_insert(defaults.seed),
    };
    if !(cfg.train_frac > 0.0 && cfg.train_frac < 1.0) || cfg.n_partitions == 0 || cfg.ensemble_size == 0 {
        return Err(Error::Config("need 0 < train_frac < 1 and positive partitions and ensemble size".into()));
    }
    let specs = competitor_specs(&families, max_order)?;
    let series = read_csv(&data)?;
    let (margins, u, _, ex) = observed(&series, q)?;
    let comps: Vec<FittedCompetitor> = specs
        .iter()
        .map(|s| FittedCompetitor {
            spec: *s,
            margins: &margins,
            u,
            opts: OptimOptions::default(),
        })
        .collect();
    let refs: Vec<&dyn Competitor> = comps.iter().map(|c| c as &dyn Competitor).collect();
    let rep = cross_validate(&ex, &refs, &cfg)?;
    rep.write_csv(BufWriter::new(File::create(&out)?))?;
    write_json(&report, &rep)?;
    Job {
        command: "crossval",
        seed: Some(cfg.seed),
        config: serde_json::to_value(&a)?,
        inputs: vec![data],
        outputs: vec![out.clone(), report],
    }
    .finish(manifest_path(&out))
}

/// Runs the job of a manifest again and returns the new manifest path.
pub fn run_rerun(a: &RerunArgs) -> Result<PathBuf> {
    let m = read_manifest(&a.manifest)?;
    fn cfg<T: DeserializeOwned>(v: &Value) -> Result<T> {
        serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("manifest config: {e}")))
    }
    let path = match m.command.as_str() {
        "synth" => run_synth(&cfg(&m.config)?)?,
        "fit" => run_fit(&cfg(&m.config)?)?,
        "simulate" => run_simulate(&cfg(&m.config)?)?,
        "diagnose" => run_diagnose(&cfg(&m.config)?)?,
        "respond" => run_respond(&cfg(&m.config)?)?,
        "crossval" => run_crossval(&cfg(&m.config)?)?,
        other => return Err(Error::Config(format!("unknown command `{other}` in manifest"))),
    };
    if a.verify {
        let now = read_manifest(&path)?;
        if now.outputs != m.outputs || now.inputs != m.inputs {
            return Err(Error::Config("rerun outputs differ from the manifest".into()));
        }
    }
    Ok(path)
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Fit { .. } | Error::ReparamUndefined { .. } => 4,
        Error::Simulation { .. } => 5,
        _ => 3,
    }
}

pub fn error_json(e: &Error) -> Value {
    serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": exit_code(e),
    })
}

pub fn run(cli: Cli) -> Result<PathBuf> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Fit(a) => run_fit(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Diagnose(a) => run_diagnose(a),
        Command::Respond(a) => run_respond(a),
        Command::Crossval(a) => run_crossval(a),
        Command::Rerun(a) => run_rerun(a),
    }
}

/// Parses the arguments, runs the job and returns the exit code. Errors are
/// reported as one JSON object on stderr; the manifest path goes to stdout.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let err = Error::Config(e.to_string().trim().to_string());
            eprintln!("{}", error_json(&err));
            return 2;
        }
    };
    match run(cli) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_excursion(start: usize, n: usize, laplace: bool) -> Excursion {
        let f = |k: usize, s: f64| (0..n).map(|i| s * (1.0 + i as f64) + k as f64 / 3.0).collect::<Vec<f64>>();
        Excursion {
            a: start + 1,
            b: start + n - 2,
            i_star: start + n / 2,
            censored: false,
            start,
            y: (0..n)
                .map(|i| if laplace { [0.1 * i as f64 + 1.0 / 7.0, -0.3] } else { [f64::NAN; 2] })
                .collect(),
            hs: f(0, 0.7),
            ws: f(1, 1.3),
            theta_h: f(2, 11.0),
            theta_w: f(3, 13.0),
        }
    }

    fn same(a: &Excursion, b: &Excursion) -> bool {
        let bits = |e: &Excursion| e.y.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        (a.a, a.b, a.i_star, a.start) == (b.a, b.b, b.i_star, b.start)
            && bits(a) == bits(b)
            && (&a.hs, &a.ws, &a.theta_h, &a.theta_w) == (&b.hs, &b.ws, &b.theta_h, &b.theta_w)
    }

    #[test]
    fn ensemble_csv_round_trips_exactly() {
        let ex = vec![sample_excursion(0, 7, true), sample_excursion(3, 5, false), sample_excursion(0, 3, true)];
        let mut buf = Vec::new();
        write_ensemble(&ex, &mut buf).unwrap();
        let back = read_ensemble(buf.as_slice()).unwrap();
        assert_eq!(back.len(), ex.len());
        for (a, b) in ex.iter().zip(&back) {
            assert!(same(a, b), "{a:?}\n{b:?}");
        }
    }

    #[test]
    fn ensemble_csv_rejects_gaps_and_bad_headers() {
        let mut buf = Vec::new();
        write_ensemble(&[sample_excursion(0, 5, true)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let gap: Vec<&str> = text.lines().enumerate().filter(|(i, _)| *i != 3).map(|(_, l)| l).collect();
        assert!(matches!(read_ensemble(gap.join("\n").as_bytes()), Err(Error::Parse { .. })));
        let renamed = text.replacen("hs", "Hs", 1);
        assert!(matches!(read_ensemble(renamed.as_bytes()), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn response_flag_parses_pairs() {
        let r = parse_response("0.25, 4").unwrap();
        assert_eq!((r.c, r.h), (0.25, 4.0));
        assert!(parse_response("0.25").is_err());
        assert!(parse_response("x,4").is_err());
    }

    #[test]
    fn quantile_must_be_a_probability() {
        assert!(check_quantile(0.95).is_ok());
        for q in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(check_quantile(q), Err(Error::Config(_))), "{q}");
        }
    }

    #[test]
    fn outputs_may_not_overwrite_inputs() {
        let d = tempfile::tempdir().unwrap();
        let i = d.path().join("in.csv");
        std::fs::write(&i, "x").unwrap();
        assert!(check_distinct(&[i.clone()], &[i.clone()]).is_err());
        assert!(check_distinct(&[], &[d.path().join("a"), d.path().join("a")]).is_err());
        assert!(check_distinct(&[i], &[d.path().join("a"), d.path().join("b")]).is_ok());
    }

    #[test]
    fn command_line_overrides_config_file() {
        let d = tempfile::tempdir().unwrap();
        let cfg = d.path().join("fit.json");
        std::fs::write(&cfg, r#"{"family": "mmem", "order": 3, "quantile": 0.9}"#).unwrap();
        let cli = FitArgs {
            order: Some(2),
            ..FitArgs::default()
        };
        let r = resolve(&cli, Some(&cfg)).unwrap();
        assert_eq!(r.family.as_deref(), Some("mmem"));
        assert_eq!(r.order, Some(2));
        assert_eq!(r.quantile, Some(0.9));
        std::fs::write(&cfg, r#"{"famly": "mmem"}"#).unwrap();
        assert!(matches!(resolve(&cli, Some(&cfg)), Err(Error::Config(_))));
        std::fs::write(&cfg, "[1]").unwrap();
        assert!(matches!(resolve(&cli, Some(&cfg)), Err(Error::Config(_))));
    }

    #[test]
    fn missing_inputs_are_named() {
        let e = input_file(&Some(PathBuf::from("/nonexistent/data.csv")), "data").unwrap_err();
        assert!(e.to_string().contains("/nonexistent/data.csv"), "{e}");
        assert!(matches!(input_file(&None, "data"), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::invalid("x")), 3);
        let j = error_json(&Error::Config("bad".into()));
        assert_eq!(j["exit_code"], 2);
        assert!(j["message"].as_str().unwrap().contains("bad"));
    }

    #[test]
    fn chain_families_get_every_order_and_hm_one() {
        let f = ["evar", "mmem", "evar0", "hm"].map(String::from);
        let s = competitor_specs(&f, 6).unwrap();
        assert_eq!(s.len(), 19);
        assert_eq!(s.iter().filter(|m| m.family == ModelFamily::Hm).count(), 1);
        assert!(competitor_specs(&["nope".to_string()], 2).is_err());
    }
}
