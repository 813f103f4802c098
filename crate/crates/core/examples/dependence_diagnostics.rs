//! Extremal dependence and storm-duration diagnostics: chi at short lags and
//! the survival of the exceedance around the peak, for data and a model.

use stormchain::data::{generate_synthetic, SyntheticSpec};
use stormchain::engine::{fit_model, simulate_ensemble, FittedModel, ModelFamily, ModelSpec};
use stormchain::excursions::{chi_estimate, excursion_chi, extract_with_physical, survival_band, survival_curve, ChiPair, DEFAULT_PAD};
use stormchain::margins::{laplace_quantile, MarginConfig, MarginPair};
use stormchain::optim::OptimOptions;
use stormchain::util::quantile;

fn main() -> stormchain::Result<()> {
    let s = generate_synthetic(&SyntheticSpec::default())?;
    let m = MarginPair::fit(&s, &MarginConfig::default())?;
    let y = m.to_laplace(&s);
    let u = laplace_quantile(0.95);
    let ex = extract_with_physical(&y, &s, u, DEFAULT_PAD)?;
    let FittedModel::Chain(model) = fit_model(ModelSpec::new(ModelFamily::Evar, 1), &ex, &m, u, &OptimOptions::default())? else {
        unreachable!("chain family")
    };
    let ens = simulate_ensemble(&model, 10_000, 1)?;
    println!("lag  chi_H data [95% band]        model   chi_HW data [95% band]       model");
    for lag in 1..=4 {
        let h = chi_estimate(&y, u, lag, ChiPair::HH, 500, 1)?;
        let hw = chi_estimate(&y, u, lag, ChiPair::HW, 500, 1)?;
        println!(
            "{lag:>3}  {:.3} [{:.3}, {:.3}]  {:.3}   {:.3} [{:.3}, {:.3}]  {:.3}",
            h.value,
            h.lo,
            h.hi,
            excursion_chi(&ens.excursions, u, lag, ChiPair::HH)?,
            hw.value,
            hw.lo,
            hw.hi,
            excursion_chi(&ens.excursions, u, lag, ChiPair::HW)?
        );
    }
    let obs: Vec<_> = ex.iter().filter(|e| !e.censored).cloned().collect();
    let peaks: Vec<f64> = obs.iter().filter_map(|e| e.peak_hs()).collect();
    let range = (quantile(&peaks, 0.5), f64::INFINITY);
    let data = survival_curve(&obs, range, 8)?;
    let (lo, hi) = survival_band(&obs, range, 8, 200, 0.95, 1)?;
    let sim = survival_curve(&ens.excursions, range, 8)?;
    println!("survival of storms with peak hs above {:.2} m", range.0);
    for i in 0..data.taus.len() {
        println!("  tau {:>3}  data {:.3} [{:.3}, {:.3}]  model {:.3}", data.taus[i], data.prob[i], lo[i], hi[i], sim.prob[i]);
    }
    Ok(())
}
