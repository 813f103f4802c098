//! Fits a full excursion model and simulates storms on the physical scale.

use stormchain::data::{generate_synthetic, SyntheticSpec};
use stormchain::engine::{fit_model, simulate_ensemble, FittedModel, ModelFamily, ModelSpec};
use stormchain::excursions::{extract_with_physical, DEFAULT_PAD};
use stormchain::margins::{laplace_quantile, MarginConfig, MarginPair};
use stormchain::optim::OptimOptions;
use stormchain::util::{mean, quantile};

fn main() -> stormchain::Result<()> {
    let s = generate_synthetic(&SyntheticSpec::default())?;
    let m = MarginPair::fit(&s, &MarginConfig::default())?;
    let y = m.to_laplace(&s);
    let u = laplace_quantile(0.95);
    let ex = extract_with_physical(&y, &s, u, DEFAULT_PAD)?;
    let FittedModel::Chain(model) = fit_model(ModelSpec::new(ModelFamily::Evar, 2), &ex, &m, u, &OptimOptions::default())? else {
        unreachable!("chain family")
    };
    let ens = simulate_ensemble(&model, 5000, 1)?;
    let peaks: Vec<f64> = ens.excursions.iter().filter_map(|e| e.peak_hs()).collect();
    let data_peaks: Vec<f64> = ex.iter().filter(|e| !e.censored).filter_map(|e| e.peak_hs()).collect();
    let len = |v: &[stormchain::excursions::Excursion]| mean(&v.iter().map(|e| e.len() as f64).collect::<Vec<_>>());
    println!("rejection rate {:.3}", ens.stats.rejection_rate());
    println!("            mean length  median peak hs  99% peak hs");
    println!("data        {:11.2}  {:14.2}  {:11.2}", len(&ex), quantile(&data_peaks, 0.5), quantile(&data_peaks, 0.99));
    println!("simulated   {:11.2}  {:14.2}  {:11.2}", len(&ens.excursions), quantile(&peaks, 0.5), quantile(&peaks, 0.99));
    let big = ens
        .excursions
        .iter()
        .max_by(|a, b| a.peak().total_cmp(&b.peak()))
        .expect("non-empty ensemble");
    println!("largest simulated storm:");
    for r in 0..big.y.len() {
        println!("  t {:>2}  hs {:5.2}  ws {:5.2}  theta_h {:5.1}  theta_w {:5.1}", big.start + r, big.hs[r], big.ws[r], big.theta_h[r], big.theta_w[r]);
    }
    Ok(())
}
