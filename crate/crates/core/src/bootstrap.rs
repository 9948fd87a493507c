//! Parametric bootstrap for the variance of `ψ̂`.
//!
//! Replicate datasets are drawn from the fitted failure, censoring and
//! treatment models with the observed covariate rows as the pool, and the
//! full cross-fitted estimator is re-run on each.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cox::{fit_cox_indexed, CoxError, CoxFit, OutcomeRole};
use crate::data::{assign_folds, Arm, ColumnGroup, SurvivalRecord};
use crate::propensity::{fit_propensity_records, TreatmentModel};
use crate::sensitivity::{CensoringSpec, CrossFit, EstimatorConfig, SensitivityError, TreatmentSpec};
use crate::sim::{generate_dataset, GeneratingMechanism, SimError};
use crate::stats;

/// Smallest replicate count accepted by [`BootstrapPlan::new`].
pub const MIN_REPLICATES: usize = 50;

#[derive(Debug, Error)]
pub enum BootstrapError {
    #[error("bootstrap needs at least {MIN_REPLICATES} replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("{} of {replicates} bootstrap replicates failed (first: {first})", failed.len())]
    ReplicateFailure { failed: Vec<usize>, replicates: usize, first: String },
    #[error("replicate {index} returned {got} statistics, expected {expected}")]
    ShapeMismatch { index: usize, expected: usize, got: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
}

/// Replicate count, master seed and the per-replicate seeds derived from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapPlan {
    pub replicates: usize,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
}

impl BootstrapPlan {
    pub fn new(replicates: usize, master_seed: u64) -> Result<BootstrapPlan, BootstrapError> {
        let seeds = (0..replicates).map(|i| derive_seed(master_seed, i as u64)).collect();
        BootstrapPlan::from_seeds(master_seed, seeds)
    }

    pub fn from_seeds(master_seed: u64, seeds: Vec<u64>) -> Result<BootstrapPlan, BootstrapError> {
        if seeds.len() < MIN_REPLICATES {
            return Err(BootstrapError::TooFewReplicates(seeds.len()));
        }
        Ok(BootstrapPlan { replicates: seeds.len(), master_seed, seeds })
    }
}

/// Seed for stream `index` of `master`; independent of every other index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// Statistics of all successful replicates, ordered by replicate index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapOutcome {
    pub values: Vec<(usize, Vec<f64>)>,
    pub failed: Vec<usize>,
    /// Sample variance of each statistic across successful replicates.
    pub variance: Vec<f64>,
}

/// Evaluate `stat(index, seed)` for every replicate in parallel and
/// summarise. Up to 5% of replicates may fail and are skipped.
pub fn run_replicates<F, E>(plan: &BootstrapPlan, stat: F) -> Result<BootstrapOutcome, BootstrapError>
where
    F: Fn(usize, u64) -> Result<Vec<f64>, E> + Sync,
    E: std::fmt::Display,
{
    let results: Vec<Result<Vec<f64>, String>> = plan
        .seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| stat(i, seed).map_err(|e| e.to_string()))
        .collect();
    let mut values = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    let mut first = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => values.push((i, v)),
            Err(e) => {
                failed.push(i);
                first.get_or_insert(e);
            }
        }
    }
    if failed.len() * 20 > plan.replicates {
        return Err(BootstrapError::ReplicateFailure {
            failed,
            replicates: plan.replicates,
            first: first.unwrap_or_default(),
        });
    }
    let width = values.first().map_or(0, |(_, v)| v.len());
    if let Some((index, v)) = values.iter().find(|(_, v)| v.len() != width) {
        return Err(BootstrapError::ShapeMismatch { index: *index, expected: width, got: v.len() });
    }
    let variance = (0..width)
        .map(|k| {
            let col: Vec<f64> = values.iter().map(|(_, v)| v[k]).collect();
            stats::variance(&col).max(0.0)
        })
        .collect();
    Ok(BootstrapOutcome { values, failed, variance })
}

/// Fit the generating models on the full data. Failure and censoring use
/// proportional hazards per arm; treatment follows `cfg.treatment`.
pub fn fitted_mechanism(
    records: &[SurvivalRecord],
    groups: &[ColumnGroup],
    cfg: &EstimatorConfig,
) -> Result<GeneratingMechanism, BootstrapError> {
    let opts = cfg.cox_options();
    let p = records.first().map_or(0, |r| r.covariates.len());
    let mut failure = Vec::new();
    let mut censoring = Vec::new();
    for arm in Arm::BOTH {
        let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].treatment == arm).collect();
        let f = fit_cox_indexed(records, &idx, OutcomeRole::Failure, &opts).map_err(SensitivityError::from)?;
        let c = match cfg.censoring {
            CensoringSpec::Cox => fit_cox_indexed(records, &idx, OutcomeRole::Censoring, &opts),
            CensoringSpec::CovariateFree => {
                let bare: Vec<SurvivalRecord> = idx
                    .iter()
                    .map(|&i| SurvivalRecord { covariates: Vec::new(), ..records[i].clone() })
                    .collect();
                fit_cox_indexed(&bare, &(0..bare.len()).collect::<Vec<_>>(), OutcomeRole::Censoring, &opts)
            }
        };
        let c = match c {
            Err(CoxError::NoEvents(_)) => CoxFit::zero_hazard(p, OutcomeRole::Censoring, &opts),
            other => other.map_err(SensitivityError::from)?,
        };
        failure.push(f);
        censoring.push(c);
    }
    let treatment = match cfg.treatment {
        TreatmentSpec::Gam => {
            let all: Vec<usize> = (0..records.len()).collect();
            TreatmentModel::Gam(
                fit_propensity_records(records, &all, groups, &cfg.propensity).map_err(SensitivityError::from)?,
            )
        }
        TreatmentSpec::Constant(p) => TreatmentModel::Constant { p, floor: cfg.propensity.floor },
    };
    let rows: Vec<&[f64]> = records.iter().map(|r| r.covariates.as_slice()).collect();
    Ok(GeneratingMechanism::from_fits(
        &rows,
        [&failure[0], &failure[1]],
        [&censoring[0], &censoring[1]],
        &treatment,
        groups.to_vec(),
        cfg.tau,
        cfg.tau_dagger,
    )?)
}

/// Re-run the estimator on `plan.replicates` datasets of size `n` drawn
/// from `mech`. Statistics are ordered as [`CrossFit::sweep`] orders them.
pub fn parametric_bootstrap(
    mech: &GeneratingMechanism,
    n: usize,
    plan: &BootstrapPlan,
    cfg: &EstimatorConfig,
    s_grid: &[f64],
    gammas: [&[f64]; 2],
) -> Result<BootstrapOutcome, BootstrapError> {
    run_replicates(plan, |_, seed| -> Result<Vec<f64>, BootstrapError> {
        let data = generate_dataset(mech, n, seed);
        let folds = assign_folds(n, cfg.folds, cfg.seed).map_err(SensitivityError::from)?;
        let cf = CrossFit::fit(&data, &mech.groups, &folds, s_grid, cfg)?;
        let (est, _) = cf.sweep(gammas)?;
        Ok(est.into_iter().map(|e| e.psi).collect())
    })
}
