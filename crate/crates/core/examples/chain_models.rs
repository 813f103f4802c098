//! Fits the MMEM and EVAR chains of a few orders to the forward parts of the
//! excursions.

use stormchain::data::{generate_synthetic, SyntheticSpec};
use stormchain::evar::fit_evar;
use stormchain::excursions::{extract_with_physical, DEFAULT_PAD};
use stormchain::margins::{laplace_quantile, MarginConfig, MarginPair};
use stormchain::mmem::{fit_mmem, Direction};
use stormchain::optim::OptimOptions;

fn main() -> stormchain::Result<()> {
    let s = generate_synthetic(&SyntheticSpec::default())?;
    let m = MarginPair::fit(&s, &MarginConfig::default())?;
    let y = m.to_laplace(&s);
    let u = laplace_quantile(0.95);
    let ex = extract_with_physical(&y, &s, u, DEFAULT_PAD)?;
    let opts = OptimOptions::default();
    for k in 1..=2 {
        let e = fit_evar(&ex, k, Direction::Forward, u, false, &opts)?;
        println!("EVAR({k}) on {} windows, B = [{:.3}, {:.3}]", e.n_windows, e.b[0], e.b[1]);
        for (lag, phi) in e.phi.iter().enumerate() {
            println!("  Phi_{}: [[{:.3}, {:.3}], [{:.3}, {:.3}]]", lag + 1, phi[0][0], phi[0][1], phi[1][0], phi[1][1]);
        }
        let mm = fit_mmem(&ex, k, Direction::Forward, u, &opts)?;
        let alpha: Vec<String> = mm.alpha.iter().map(|a| format!("{a:.3}")).collect();
        println!("MMEM({k}) on {} windows, alpha = [{}]", mm.n_windows, alpha.join(", "));
    }
    Ok(())
}
