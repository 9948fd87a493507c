//! Synthetic observational studies with known truth, and the Monte Carlo
//! harness that measures bias and interval coverage of the estimator.

mod mechanism;
mod study;

use thiserror::Error;

pub use mechanism::{
    generate_dataset, true_psi, GeneratingMechanism, PoolRow, SyntheticCovariates, SyntheticParams, TimeModel,
    WeibullPh,
};
pub use study::{run_study, SimCell, SimStudyConfig, SimStudyResult};

use crate::data::DataError;
use crate::propensity::PropensityError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("Weibull parameters must be positive (shape {shape}, scale {scale})")]
    InvalidWeibull { shape: f64, scale: f64 },
    #[error("covariate pool is empty")]
    EmptyPool,
    #[error("invalid study configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Propensity(#[from] PropensityError),
}
