//! Fits the directional semi-parametric margins and moves the record to the
//! Laplace scale.

use stormchain::data::{generate_synthetic, SyntheticSpec};
use stormchain::margins::{laplace_quantile, MarginConfig, MarginPair};

fn main() -> stormchain::Result<()> {
    let s = generate_synthetic(&SyntheticSpec::default())?;
    let m = MarginPair::fit(&s, &MarginConfig::default())?;
    for (name, marg) in [("hs", &m.hs), ("ws", &m.ws)] {
        println!("{name}");
        for b in &marg.bins {
            println!(
                "  [{:>3}, {:>3})  u {:6.2}  sigma {:.3}  xi {:+.3}{}",
                b.lo,
                b.hi,
                b.tail.u_x,
                b.tail.sigma,
                b.tail.xi,
                if b.pooled { "  pooled" } else { "" }
            );
        }
    }
    let y = m.to_laplace(&s);
    let u = laplace_quantile(0.95);
    let above = y.iter().filter(|r| r[0] > u).count();
    println!("{above} of {} steps have Laplace hs above {u:.3}", y.len());
    // the round trip recovers the physical value
    let back = m.from_laplace(y[0], s.theta_h[0], s.theta_w[0]);
    println!("row 0: hs {:.4} -> {:.4}, ws {:.4} -> {:.4}", s.hs[0], back[0], s.ws[0], back[1]);
    Ok(())
}
