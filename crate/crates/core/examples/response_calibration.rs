//! Sizes of the wind and wave terms of the structural response, used to pick
//! the default (c, h) settings so that neither term dominates the tail.

use stormchain::data::{generate_synthetic, SyntheticSpec};
use stormchain::excursions::{extract_with_physical, DEFAULT_PAD};
use stormchain::margins::{laplace_quantile, MarginConfig, MarginPair};
use stormchain::response::{exposed_area, inline_wind, rmax, ResponseConfig};
use stormchain::util::quantile;

fn main() -> stormchain::Result<()> {
    let s = generate_synthetic(&SyntheticSpec::default())?;
    let m = MarginPair::fit(&s, &MarginConfig::default())?;
    let y = m.to_laplace(&s);
    let ex = extract_with_physical(&y, &s, laplace_quantile(0.95), DEFAULT_PAD)?;
    let paths: Vec<_> = ex.iter().filter(|e| !e.censored).filter_map(|e| e.physical_core()).collect();
    println!("   c     h   wind 99%   wave 99%   rmax 50%   rmax 99%");
    for cfg in ResponseConfig::defaults().iter().chain(&[ResponseConfig::new(1.0, 4.0)?, ResponseConfig::new(0.25, 1.0)?]) {
        let (mut wind, mut wave) = (Vec::new(), Vec::new());
        for i in 0..s.len() {
            let iw = inline_wind(s.ws[i], s.theta_h[i], s.theta_w[i]);
            wind.push(cfg.c * iw * iw);
            wave.push(if s.hs[i] < cfg.h { 0.0 } else { exposed_area(s.theta_h[i]) * (s.hs[i] - cfg.h) * s.hs[i] * s.hs[i] });
        }
        let r: Vec<f64> = paths.iter().map(|p| rmax(p, cfg).value).collect();
        println!(
            "{:>5} {:>5} {:10.1} {:10.1} {:10.1} {:10.1}",
            cfg.c,
            cfg.h,
            quantile(&wind, 0.99),
            quantile(&wave, 0.99),
            quantile(&r, 0.5),
            quantile(&r, 0.99)
        );
    }
    Ok(())
}
