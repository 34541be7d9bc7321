//! The estimator-independent fit result and its JSON form.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::label_switch::CorrectionReport;
use crate::mcmc::McmcDiagnostics;
use crate::model::{AverageClassificationRates, CoefficientNames, ParameterSet};

/// Version of the fit-result JSON layout.
pub const FIT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Em,
    Mcmc,
    Naive,
    PerfectSpec,
    PerfectSens,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Em,
        Method::Mcmc,
        Method::Naive,
        Method::PerfectSpec,
        Method::PerfectSens,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Em => "em",
            Method::Mcmc => "mcmc",
            Method::Naive => "naive",
            Method::PerfectSpec => "perfect-spec",
            Method::PerfectSens => "perfect-sens",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown method `{s}` (expected em, mcmc, naive, perfect-spec or perfect-sens)")
            })
    }
}

/// Estimates from any of the estimators.
///
/// Blocks an estimator does not model (`gamma*` for the naive fit, the fixed
/// block of a one-directional EM) are `None`. `covariance` and
/// `standard_errors` cover only the estimated coefficients, in
/// `beta, gamma1, gamma2` order.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub method: Method,
    pub n: usize,
    pub names: CoefficientNames,
    pub beta: Vec<f64>,
    pub gamma1: Option<Vec<f64>>,
    pub gamma2: Option<Vec<f64>>,
    pub covariance: Option<DMatrix<f64>>,
    pub standard_errors: Vec<f64>,
    /// Posterior medians (MCMC only).
    pub medians: Option<Vec<f64>>,
    pub rates: AverageClassificationRates,
    /// Mean of the fitted `P(Y = 1 | X_i)`.
    pub prevalence: f64,
    pub correction: Option<CorrectionReport>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub rank_deficient: bool,
    pub warnings: Vec<String>,
    pub mcmc: Option<McmcDiagnostics>,
    /// Observed log-likelihood after each EM iteration (first entry: start).
    pub loglik_trace: Vec<f64>,
}

impl FitResult {
    /// Full parameter set, when both observation blocks were estimated.
    pub fn params(&self) -> Option<ParameterSet> {
        Some(ParameterSet::new(
            self.beta.clone(),
            self.gamma1.clone()?,
            self.gamma2.clone()?,
        ))
    }

    pub fn free_names(&self) -> Vec<String> {
        let mut names = self.names.beta.clone();
        if self.gamma1.is_some() {
            names.extend(self.names.gamma1.iter().cloned());
        }
        if self.gamma2.is_some() {
            names.extend(self.names.gamma2.iter().cloned());
        }
        names
    }

    pub fn free_values(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        if let Some(g) = &self.gamma1 {
            v.extend(g);
        }
        if let Some(g) = &self.gamma2 {
            v.extend(g);
        }
        v
    }

    /// Named estimates of the modelled coefficients.
    pub fn estimates(&self) -> Vec<(String, f64)> {
        self.free_names().into_iter().zip(self.free_values()).collect()
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.estimates()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        let idx = self.free_names().iter().position(|n| n == name)?;
        self.standard_errors.get(idx).copied()
    }

    pub fn to_json(&self) -> Value {
        let names = self.free_names();
        let values = self.free_values();
        let mut offset = 0;
        let mut block = |present: bool, block_names: &[String]| -> Value {
            if !present {
                return Value::Null;
            }
            let entries: Vec<Value> = block_names
                .iter()
                .enumerate()
                .map(|(c, name)| {
                    let idx = offset + c;
                    json!({
                        "name": name,
                        "estimate": values[idx],
                        "se": self.standard_errors.get(idx),
                        "median": self.medians.as_ref().map(|m| m[idx]),
                    })
                })
                .collect();
            offset += block_names.len();
            Value::Array(entries)
        };
        let beta = block(true, &self.names.beta);
        let gamma1 = block(self.gamma1.is_some(), &self.names.gamma1);
        let gamma2 = block(self.gamma2.is_some(), &self.names.gamma2);

        let covariance = self.covariance.as_ref().map(|m| {
            let rows: Vec<Vec<f64>> = (0..m.nrows())
                .map(|r| m.row(r).iter().copied().collect())
                .collect();
            json!({ "names": names, "matrix": rows })
        });

        json!({
            "schema_version": FIT_SCHEMA_VERSION,
            "method": self.method.as_str(),
            "n": self.n,
            "coefficients": { "beta": beta, "gamma1": gamma1, "gamma2": gamma2 },
            "covariance": covariance,
            "rates": {
                "prevalence": self.prevalence,
                "sensitivity": self.rates.sens,
                "specificity": self.rates.spec,
            },
            "correction": self.correction,
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "loglik": self.loglik,
                "rank_deficient": self.rank_deficient,
                "warnings": self.warnings,
            },
            "mcmc": self.mcmc,
        })
    }
}
