//! Heterogeneous treatment effect estimation by differencing natural parameters.

pub mod error;
pub mod evaluation;
pub mod baselines;
pub mod cox;
pub mod designs;
pub mod dina;
pub mod experiment;
pub mod glm;
pub mod io;
pub mod learners;
pub mod model;
pub mod newton;
pub mod quadrature;
pub mod rng;
pub mod simgen;

pub use error::{DinaError, Result};
pub use model::{BaselineHazard, Dataset, Family, Matrix};
