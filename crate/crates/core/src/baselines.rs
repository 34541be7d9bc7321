//! Comparator estimators: the naive logistic fit and the two one-directional
//! EMs that rule out one kind of misclassification.

use serde::{Deserialize, Serialize};

use crate::em::{assemble, naive_logistic, run_with_strategy, EmConfig, EmRun, Restriction};
use crate::error::Result;
use crate::fit::{FitResult, Method};
use crate::model::{observed_loglik_from_grid, ObservedDataset, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Naive,
    PerfectSpecificityEm,
    PerfectSensitivityEm,
}

impl BaselineKind {
    pub fn method(self) -> Method {
        match self {
            BaselineKind::Naive => Method::Naive,
            BaselineKind::PerfectSpecificityEm => Method::PerfectSpec,
            BaselineKind::PerfectSensitivityEm => Method::PerfectSens,
        }
    }
}

/// Which misclassification direction a one-directional EM rules out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedDirection {
    /// No false positives: `P(Y* = 1 | Y = 2) = 0`.
    PerfectSpecificity,
    /// No false negatives: `P(Y* = 2 | Y = 1) = 0`.
    PerfectSensitivity,
}

impl FixedDirection {
    fn restriction(self) -> Restriction {
        match self {
            FixedDirection::PerfectSpecificity => Restriction::PerfectSpecificity,
            FixedDirection::PerfectSensitivity => Restriction::PerfectSensitivity,
        }
    }

    fn method(self) -> Method {
        match self {
            FixedDirection::PerfectSpecificity => Method::PerfectSpec,
            FixedDirection::PerfectSensitivity => Method::PerfectSens,
        }
    }
}

/// Logistic regression of `I(Y* = 1)` on `X`, ignoring misclassification.
pub fn fit_naive(data: &ObservedDataset) -> Result<FitResult> {
    let sol = naive_logistic(data)?;
    let params = ParameterSet::new(
        sol.coefficients.clone(),
        vec![0.0; data.z_dim()],
        vec![0.0; data.z_dim()],
    );
    let grid = Restriction::Exact.grid(&params, data)?;
    let loglik = observed_loglik_from_grid(&grid, data.ystar())?;
    let run = EmRun {
        params: params.clone(),
        loglik,
        trace: Vec::new(),
        iterations: sol.iterations,
        converged: sol.converged,
        inner_failures: 0,
        frozen_iterations: 0,
    };
    let mut fit = assemble(Method::Naive, Restriction::Exact, data, params, &run, None)?;
    if let Some(msg) = sol.diagnostic {
        fit.warnings.push(msg);
    }
    if !sol.converged {
        fit.warnings.push(format!(
            "logistic fit did not converge in {} iterations",
            sol.iterations
        ));
    }
    Ok(fit)
}

/// EM with one observation block held at its degenerate 0/1 limit.
///
/// Only one latent class can be misclassified, so the labels are pinned and
/// no label-switching correction is applied.
pub fn fit_one_directional_em(
    data: &ObservedDataset,
    fixed: FixedDirection,
    config: &EmConfig,
) -> Result<FitResult> {
    config.validate()?;
    let restriction = fixed.restriction();
    let run = run_with_strategy(restriction, data, config)?;
    assemble(fixed.method(), restriction, data, run.params.clone(), &run, None)
}

/// Dispatches on the baseline kind.
pub fn fit_baseline(data: &ObservedDataset, kind: BaselineKind, config: &EmConfig) -> Result<FitResult> {
    match kind {
        BaselineKind::Naive => fit_naive(data),
        BaselineKind::PerfectSpecificityEm => {
            fit_one_directional_em(data, FixedDirection::PerfectSpecificity, config)
        }
        BaselineKind::PerfectSensitivityEm => {
            fit_one_directional_em(data, FixedDirection::PerfectSensitivity, config)
        }
    }
}
