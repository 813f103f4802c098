//! Cross-validation of competing models by the distance between simulated
//! and held-out response distributions.

use stormchain::assess::{cross_validate, Competitor, CvConfig, FittedCompetitor, Statistic};
use stormchain::data::{generate_synthetic, SyntheticSpec};
use stormchain::engine::{ModelFamily, ModelSpec};
use stormchain::excursions::{extract_with_physical, DEFAULT_PAD};
use stormchain::margins::{laplace_quantile, MarginConfig, MarginPair};
use stormchain::optim::OptimOptions;

fn main() -> stormchain::Result<()> {
    let s = generate_synthetic(&SyntheticSpec::default())?;
    let m = MarginPair::fit(&s, &MarginConfig::default())?;
    let y = m.to_laplace(&s);
    let u = laplace_quantile(0.95);
    let ex = extract_with_physical(&y, &s, u, DEFAULT_PAD)?;
    let specs = [
        ModelSpec::new(ModelFamily::Hm, 0),
        ModelSpec::new(ModelFamily::Mmem, 1),
        ModelSpec::new(ModelFamily::Evar, 1),
        ModelSpec::new(ModelFamily::Evar, 2),
    ];
    let comps: Vec<FittedCompetitor> = specs
        .iter()
        .map(|spec| FittedCompetitor {
            spec: *spec,
            margins: &m,
            u,
            opts: OptimOptions::default(),
        })
        .collect();
    let refs: Vec<&dyn Competitor> = comps.iter().map(|c| c as &dyn Competitor).collect();
    let cfg = CvConfig {
        n_partitions: 3,
        ensemble_size: 2000,
        ..CvConfig::default()
    };
    let rep = cross_validate(&ex, &refs, &cfg)?;
    for r in &cfg.responses {
        for st in [Statistic::Rmax, Statistic::Rsum] {
            println!("{} {}", r.label(), st.name());
            for spec in &specs {
                if let Some(row) = rep.row(&spec.label(), &r.label(), st) {
                    println!("  {:<8} D {:.4} [{:.4}, {:.4}]", row.model, row.mean_d, row.lo, row.hi);
                }
            }
        }
    }
    Ok(())
}
