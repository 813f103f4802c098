pub mod assess;
pub mod cli;
pub mod condext;
pub mod data;
pub mod directional;
pub mod engine;
pub mod error;
pub mod evar;
pub mod excursions;
pub mod hm;
pub mod margins;
pub mod mmem;
pub mod optim;
pub mod response;
pub mod util;

pub use error::{Error, Result};
