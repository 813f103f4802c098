//! The historical-matching baseline: rescaled copies of observed storms.

use stormchain::data::{generate_synthetic, SyntheticSpec};
use stormchain::excursions::{extract_with_physical, DEFAULT_PAD};
use stormchain::hm::{fit_hm, hm_draw, rescale_storm, StormCatalog};
use stormchain::margins::{laplace_quantile, MarginConfig, MarginPair};
use stormchain::util::stream_rng;

fn main() -> stormchain::Result<()> {
    let s = generate_synthetic(&SyntheticSpec::default())?;
    let m = MarginPair::fit(&s, &MarginConfig::default())?;
    let y = m.to_laplace(&s);
    let ex = extract_with_physical(&y, &s, laplace_quantile(0.95), DEFAULT_PAD)?;
    let hm = fit_hm(StormCatalog::from_excursions(&ex), &m.hs)?;
    let r = hm.regression;
    println!("{} storms; ws_max = {:.3} + {:.3} hs_max + N(0, {:.3}^2)", hm.catalog.len(), r.beta0, r.beta1, r.sigma);
    let mut rng = stream_rng(1, 0);
    for _ in 0..3 {
        let d = hm_draw(&hm, &mut rng)?;
        let hist = &hm.catalog.storms[d.storm];
        let p = rescale_storm(hist, d.hs_max, d.theta_max, d.ws_max);
        println!(
            "drew hs {:.2} m from {:.0} deg; matched storm {} (hs {:.2} m, {:.0} deg), {} steps",
            d.hs_max,
            d.theta_max,
            d.storm,
            hist.hs_max,
            hist.theta_max,
            p.hs.len()
        );
    }
    Ok(())
}
