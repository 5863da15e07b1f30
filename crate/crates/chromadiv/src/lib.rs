//! Cavity-method solver suite for the colour diversity problem on sparse
//! random graphs: two-argument message recursions solved by population
//! dynamics at zero and finite temperature, analytic paramagnetic solutions,
//! and a brute-force instance oracle.

pub mod error;
pub mod math;
pub mod message;
pub mod model;
pub mod observables;
pub mod paramagnet;
pub mod population;
pub mod rng;

pub use error::{Error, Result};

/// Artifact version embedded in every output header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
