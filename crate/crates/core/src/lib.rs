//! Sensitivity analysis for unmeasured confounding in causal survival
//! analysis with right-censored data.

pub mod bootstrap;
pub mod cli;
pub mod cox;
pub mod data;
pub mod propensity;
pub mod sensitivity;
pub mod sim;
pub mod spline;
pub mod stats;

use thiserror::Error;

/// Any error surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Spline(#[from] spline::SplineError),
    #[error(transparent)]
    Cox(#[from] cox::CoxError),
    #[error(transparent)]
    Propensity(#[from] propensity::PropensityError),
    #[error(transparent)]
    Sensitivity(#[from] sensitivity::SensitivityError),
    #[error(transparent)]
    Bootstrap(#[from] bootstrap::BootstrapError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
}

impl Error {
    /// Process exit code: 3 for input problems, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use sensitivity::SensitivityError as S;
        match self {
            Error::Data(_) | Error::Spline(_) => 3,
            Error::Sensitivity(S::Data(_) | S::InvalidInput(_)) => 3,
            Error::Sim(sim::SimError::Data(_) | sim::SimError::InvalidConfig(_)) => 3,
            Error::Bootstrap(bootstrap::BootstrapError::TooFewReplicates(_)) => 3,
            _ => 4,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Data(_) => "data",
            Error::Spline(_) => "spline",
            Error::Cox(_) => "cox",
            Error::Propensity(_) => "propensity",
            Error::Sensitivity(_) => "sensitivity",
            Error::Bootstrap(_) => "bootstrap",
            Error::Sim(_) => "simulation",
        }
    }
}
