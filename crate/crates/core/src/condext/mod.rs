//! Conditional-extremes inference shared by the peak, MMEM and EVAR models:
//! a Gaussian pseudo-likelihood with profiled nuisance parameters, empirical
//! residuals and a product-kernel residual density.

mod fit;
mod irregular;
mod kde;
mod peak;

pub use fit::*;
pub use irregular::{HtParams, IrregularMatrix};
pub use kde::{normal_reference_bandwidth, ResidualSample, BANDWIDTH_FLOOR, MIN_RESIDUALS};
pub use peak::{fit_peak_model, peak_periods, simulate_peak, PeakModel, MIN_PEAK_EXCURSIONS};
