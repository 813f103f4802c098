//! Generates a synthetic three-hourly record and writes it as CSV.
//!
//! cargo run --example synthetic_data -- out.csv

use stormchain::data::{generate_synthetic, write_csv, SyntheticSpec};
use stormchain::util::quantile;

fn main() -> stormchain::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synthetic.csv".into());
    let spec = SyntheticSpec::default();
    let s = generate_synthetic(&spec)?;
    for (name, x) in [("hs", &s.hs), ("ws", &s.ws)] {
        println!(
            "{name}: median {:.2}, 95% {:.2}, 99.9% {:.2}, max {:.2}",
            quantile(x, 0.5),
            quantile(x, 0.95),
            quantile(x, 0.999),
            x.iter().cloned().fold(f64::MIN, f64::max)
        );
    }
    write_csv(&s, &out)?;
    println!("wrote {} rows to {out}", s.len());
    Ok(())
}
