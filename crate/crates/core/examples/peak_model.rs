//! Conditional-extremes model of the peak period: the dependence of every
//! time step near the storm maximum on the peak value.

use stormchain::condext::fit_peak_model;
use stormchain::data::{generate_synthetic, SyntheticSpec};
use stormchain::excursions::{extract_with_physical, DEFAULT_PAD};
use stormchain::margins::{laplace_quantile, MarginConfig, MarginPair};
use stormchain::optim::OptimOptions;

fn main() -> stormchain::Result<()> {
    let s = generate_synthetic(&SyntheticSpec::default())?;
    let m = MarginPair::fit(&s, &MarginConfig::default())?;
    let y = m.to_laplace(&s);
    let u = laplace_quantile(0.95);
    let ex = extract_with_physical(&y, &s, u, DEFAULT_PAD)?;
    let k = 4;
    let pm = fit_peak_model(&ex, k, u, &OptimOptions::default())?;
    println!("{} excursions, {} peak periods", ex.len(), pm.n_obs);
    println!("lag   alpha_hs beta_hs   alpha_ws beta_ws");
    for i in -(k as isize - 1)..=(k as isize - 1) {
        let (a, b) = (&pm.params.alpha, &pm.params.beta);
        let hs = if i == 0 { "       -        -".to_string() } else { format!("{:8.3} {:8.3}", a.get(i, 0), b.get(i, 0)) };
        println!("{i:>3}  {hs}   {:8.3} {:8.3}", a.get(i, 1), b.get(i, 1));
    }
    println!("residual dimension {}", pm.residuals.dim);
    Ok(())
}
