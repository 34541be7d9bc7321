//! Data generation for the three simulation settings and the Monte Carlo
//! harness that summarizes estimator bias, rMSE and probability recovery.
//!
//! The generator draws `(X, Z)` from a bivariate normal with means
//! `(x_mean, z_mean)`, unit variances and covariance `covariance`, then takes
//! `Z := |Z|`. The true class is `Y = 1` with probability
//! `logistic(beta_0 + beta_x1 X)`, and `Y* = 1` with probability
//! `logistic(gamma_1j0 + gamma_1jz1 Z)` given `Y = j`. All linear predictors
//! are on the logit scale.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_naive, fit_one_directional_em, FixedDirection};
use crate::em::{fit_em, EmConfig};
use crate::error::{Error, Result};
use crate::fit::{FitResult, Method};
use crate::mcmc::{fit_mcmc, McmcConfig};
use crate::model::{logistic, Class, ObservedDataset, ParameterSet};
use crate::prior::PriorSpec;
use crate::rng::{derive_seed, stream, stream_rng};

/// Version of the study-report JSON layout.
pub const STUDY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_realizations: usize,
    pub n: usize,
    pub x_mean: f64,
    pub z_mean: f64,
    pub covariance: f64,
    pub beta_true: Vec<f64>,
    pub gamma1_true: Vec<f64>,
    pub gamma2_true: Vec<f64>,
    pub estimators: Vec<Method>,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
}

impl ScenarioConfig {
    fn preset(name: &str, n: usize, z_mean: f64, gamma2_true: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            n_realizations: 500,
            n,
            x_mean: 0.0,
            z_mean,
            covariance: 0.3,
            beta_true: vec![1.0, -2.0],
            gamma1_true: vec![0.5, 1.0],
            gamma2_true,
            estimators: vec![Method::Em, Method::Naive, Method::PerfectSpec, Method::PerfectSens],
            prior: PriorSpec::uniform(-10.0, 10.0),
            seed: 0,
            em: EmConfig::default(),
            mcmc: McmcConfig::default(),
        }
    }

    /// Moderate misclassification, n = 1000.
    pub fn setting1() -> Self {
        Self::preset("setting1", 1000, 1.5, vec![-0.5, -1.0])
    }

    /// Mild misclassification, n = 10000.
    pub fn setting2() -> Self {
        Self::preset("setting2", 10000, 2.5, vec![-0.5, -1.0])
    }

    /// Perfect specificity in practice, n = 5000.
    pub fn setting3() -> Self {
        Self::preset("setting3", 5000, 1.5, vec![-5.0, -5.0])
    }

    /// Looks up `setting1`, `setting2`, `setting3` (or just the digit).
    pub fn from_preset(name: &str) -> Option<Self> {
        match name {
            "1" | "setting1" => Some(Self::setting1()),
            "2" | "setting2" => Some(Self::setting2()),
            "3" | "setting3" => Some(Self::setting3()),
            _ => None,
        }
    }

    pub fn truth(&self) -> ParameterSet {
        ParameterSet::new(
            self.beta_true.clone(),
            self.gamma1_true.clone(),
            self.gamma2_true.clone(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.n_realizations == 0 {
            return bad("n_realizations must be positive".into());
        }
        for (field, v) in [("x_mean", self.x_mean), ("z_mean", self.z_mean)] {
            if !v.is_finite() {
                return bad(format!("{field} must be finite"));
            }
        }
        if !(self.covariance.abs() < 1.0) {
            return bad("covariance must lie strictly between -1 and 1".into());
        }
        for (field, v) in [
            ("beta_true", &self.beta_true),
            ("gamma1_true", &self.gamma1_true),
            ("gamma2_true", &self.gamma2_true),
        ] {
            if v.len() != 2 {
                return bad(format!("{field} must have 2 entries (intercept, slope), got {}", v.len()));
            }
            if v.iter().any(|c| !c.is_finite()) {
                return bad(format!("{field} must be finite"));
            }
        }
        if self.estimators.is_empty() {
            return bad("estimators must not be empty".into());
        }
        self.prior.validate()?;
        self.em.validate()?;
        if self.estimators.contains(&Method::Mcmc) {
            self.mcmc.validate()?;
        }
        Ok(())
    }
}

/// Rates of the latent and observed classes realized in one draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizedRates {
    pub prevalence: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl RealizedRates {
    pub fn from_classes(y_true: &[Class], ystar: &[Class]) -> Self {
        let mut counts = [[0usize; 2]; 2];
        for (y, k) in y_true.iter().zip(ystar) {
            counts[y.index()][k.index()] += 1;
        }
        let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
        let n1 = counts[0][0] + counts[0][1];
        let n2 = counts[1][0] + counts[1][1];
        Self {
            prevalence: ratio(n1, n1 + n2),
            sensitivity: ratio(counts[0][0], n1),
            specificity: ratio(counts[1][1], n2),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub data: ObservedDataset,
    pub y_true: Vec<Class>,
    pub realized: RealizedRates,
}

/// Draws replicate `replicate` of a scenario. Deterministic in
/// `(scenario.seed, replicate)`.
pub fn generate_dataset(scenario: &ScenarioConfig, replicate: usize) -> Result<GeneratedDataset> {
    scenario.validate()?;
    let mut rng = stream_rng(scenario.seed, replicate as u64, stream::DATA);
    let n = scenario.n;
    let rho = scenario.covariance;
    let resid = (1.0 - rho * rho).sqrt();
    let (b, g1, g2) = (&scenario.beta_true, &scenario.gamma1_true, &scenario.gamma2_true);

    let mut x = DMatrix::zeros(n, 1);
    let mut z = DMatrix::zeros(n, 1);
    let mut y_true = Vec::with_capacity(n);
    let mut ystar = Vec::with_capacity(n);
    for i in 0..n {
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        let xi = scenario.x_mean + e1;
        let zi = (scenario.z_mean + rho * e1 + resid * e2).abs();
        let y = if rng.random::<f64>() < logistic(b[0] + b[1] * xi) {
            Class::One
        } else {
            Class::Two
        };
        let g = match y {
            Class::One => g1,
            Class::Two => g2,
        };
        let k = if rng.random::<f64>() < logistic(g[0] + g[1] * zi) {
            Class::One
        } else {
            Class::Two
        };
        x[(i, 0)] = xi;
        z[(i, 0)] = zi;
        y_true.push(y);
        ystar.push(k);
    }
    let realized = RealizedRates::from_classes(&y_true, &ystar);
    Ok(GeneratedDataset {
        data: ObservedDataset::new(ystar, x, z)?,
        y_true,
        realized,
    })
}

/// Runs one estimator with the scenario's settings. Stochastic estimators are
/// seeded from `(scenario.seed, replicate)`.
pub fn run_estimator(
    method: Method,
    data: &ObservedDataset,
    scenario: &ScenarioConfig,
    replicate: usize,
) -> Result<FitResult> {
    let em = EmConfig {
        seed: derive_seed(scenario.seed, replicate as u64, stream::EM_STARTS),
        ..scenario.em.clone()
    };
    match method {
        Method::Em => fit_em(data, &em),
        Method::Naive => fit_naive(data),
        Method::PerfectSpec => fit_one_directional_em(data, FixedDirection::PerfectSpecificity, &em),
        Method::PerfectSens => fit_one_directional_em(data, FixedDirection::PerfectSensitivity, &em),
        Method::Mcmc => {
            let cfg = McmcConfig {
                seed: derive_seed(scenario.seed, replicate as u64, stream::MCMC),
                ..scenario.mcmc.clone()
            };
            fit_mcmc(data, &scenario.prior, &cfg).map(|(fit, _)| fit)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Ok,
    Ambiguous,
    Failed,
}

impl FitStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FitStatus::Ok => "ok",
            FitStatus::Ambiguous => "ambiguous",
            FitStatus::Failed => "failed",
        }
    }
}

/// One estimator's result on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFit {
    pub replicate: usize,
    pub method: Method,
    pub status: FitStatus,
    pub error: Option<String>,
    pub converged: bool,
    pub flipped: bool,
    pub ambiguous: bool,
    /// Named estimates of the modelled coefficients.
    pub estimates: Vec<(String, f64)>,
    pub prevalence: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl ReplicateFit {
    pub fn from_result(replicate: usize, method: Method, result: &Result<FitResult>) -> Self {
        match result {
            Ok(fit) => {
                let (flipped, mut ambiguous) = fit
                    .correction
                    .map_or((false, false), |c| (c.flipped, c.ambiguous));
                if let Some(m) = &fit.mcmc {
                    ambiguous |= m.chain_corrections.iter().flatten().any(|c| c.ambiguous);
                }
                Self {
                    replicate,
                    method,
                    status: if ambiguous { FitStatus::Ambiguous } else { FitStatus::Ok },
                    error: None,
                    converged: fit.converged,
                    flipped,
                    ambiguous,
                    estimates: fit.estimates(),
                    prevalence: fit.prevalence,
                    sensitivity: fit.rates.sens,
                    specificity: fit.rates.spec,
                }
            }
            Err(e) => Self {
                replicate,
                method,
                status: FitStatus::Failed,
                error: Some(e.to_string()),
                converged: false,
                flipped: false,
                ambiguous: false,
                estimates: Vec::new(),
                prevalence: f64::NAN,
                sensitivity: f64::NAN,
                specificity: f64::NAN,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub realized: RealizedRates,
    pub fits: Vec<ReplicateFit>,
}

/// Bias and rMSE of one coefficient under one estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub method: Method,
    pub coefficient: String,
    pub truth: f64,
    pub count: usize,
    pub mean_estimate: f64,
    pub median_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    pub max_abs_error: f64,
}

/// Mean estimated probabilities of one estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySummary {
    pub method: Method,
    pub count: usize,
    pub prevalence: f64,
    pub prevalence_class2: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodTally {
    pub method: Method,
    pub attempted: usize,
    pub failed: usize,
    pub ambiguous: usize,
    pub not_converged: usize,
    pub flipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    pub replicates: usize,
    pub coefficients: Vec<CoefficientSummary>,
    pub probabilities: Vec<ProbabilitySummary>,
    /// Mean realized rates over all generated datasets.
    pub data_rates: RealizedRates,
    pub tallies: Vec<MethodTally>,
    pub records: Vec<ReplicateRecord>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Bias, rMSE and related summaries of `estimates` against `truth`.
pub fn summarize_errors(
    method: Method,
    coefficient: &str,
    truth: f64,
    estimates: &[f64],
) -> CoefficientSummary {
    let count = estimates.len();
    let n = count as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let mse = estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / n;
    let max_abs_error = estimates.iter().map(|e| (e - truth).abs()).fold(0.0, f64::max);
    CoefficientSummary {
        method,
        coefficient: coefficient.to_string(),
        truth,
        count,
        mean_estimate: mean,
        median_estimate: median(&mut estimates.to_vec()),
        bias: mean - truth,
        rmse: mse.sqrt(),
        max_abs_error,
    }
}

/// Ordered reduction of replicate records into a report.
pub fn aggregate(scenario: &ScenarioConfig, records: Vec<ReplicateRecord>) -> StudyReport {
    let truth = scenario.truth();
    let names = ["beta_0", "beta_x1", "gamma_110", "gamma_11z1", "gamma_120", "gamma_12z1"];
    let truth_flat = truth.flatten();

    let mut coefficients = Vec::new();
    let mut probabilities = Vec::new();
    let mut tallies = Vec::new();
    for &method in &scenario.estimators {
        let fits: Vec<&ReplicateFit> = records
            .iter()
            .flat_map(|r| r.fits.iter().filter(move |f| f.method == method))
            .collect();
        let used: Vec<&ReplicateFit> = fits.iter().copied().filter(|f| f.status == FitStatus::Ok).collect();
        tallies.push(MethodTally {
            method,
            attempted: fits.len(),
            failed: fits.iter().filter(|f| f.status == FitStatus::Failed).count(),
            ambiguous: fits.iter().filter(|f| f.status == FitStatus::Ambiguous).count(),
            not_converged: fits
                .iter()
                .filter(|f| f.status != FitStatus::Failed && !f.converged)
                .count(),
            flipped: fits.iter().filter(|f| f.flipped).count(),
        });
        for (name, &t) in names.iter().zip(&truth_flat) {
            let est: Vec<f64> = used
                .iter()
                .filter_map(|f| f.estimates.iter().find(|(n, _)| n == name).map(|(_, v)| *v))
                .collect();
            if !est.is_empty() {
                coefficients.push(summarize_errors(method, name, t, &est));
            }
        }
        let count = used.len();
        let mean = |g: fn(&ReplicateFit) -> f64| {
            if count == 0 {
                f64::NAN
            } else {
                used.iter().map(|f| g(f)).sum::<f64>() / count as f64
            }
        };
        let prevalence = mean(|f| f.prevalence);
        probabilities.push(ProbabilitySummary {
            method,
            count,
            prevalence,
            prevalence_class2: 1.0 - prevalence,
            sensitivity: mean(|f| f.sensitivity),
            specificity: mean(|f| f.specificity),
        });
    }

    let mean_rate = |g: fn(&RealizedRates) -> f64| {
        let vals: Vec<f64> = records.iter().map(|r| g(&r.realized)).filter(|v| v.is_finite()).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let data_rates = RealizedRates {
        prevalence: mean_rate(|r| r.prevalence),
        sensitivity: mean_rate(|r| r.sensitivity),
        specificity: mean_rate(|r| r.specificity),
    };

    StudyReport {
        schema_version: STUDY_SCHEMA_VERSION,
        scenario: scenario.clone(),
        replicates: records.len(),
        coefficients,
        probabilities,
        data_rates,
        tallies,
        records,
    }
}

/// Generates a replicate and runs every requested estimator on it.
pub fn run_replicate(scenario: &ScenarioConfig, replicate: usize) -> Result<ReplicateRecord> {
    let generated = generate_dataset(scenario, replicate)?;
    let fits = scenario
        .estimators
        .iter()
        .map(|&m| {
            let result = run_estimator(m, &generated.data, scenario, replicate);
            ReplicateFit::from_result(replicate, m, &result)
        })
        .collect();
    Ok(ReplicateRecord {
        replicate,
        realized: generated.realized,
        fits,
    })
}

pub fn run_study(scenario: &ScenarioConfig) -> Result<StudyReport> {
    run_study_with_progress(scenario, &|_| {})
}

/// As [`run_study`], calling `progress(replicate)` as each replicate finishes
/// (in completion order).
pub fn run_study_with_progress(
    scenario: &ScenarioConfig,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<StudyReport> {
    scenario.validate()?;
    let records: Vec<Result<ReplicateRecord>> = (0..scenario.n_realizations)
        .into_par_iter()
        .map(|r| {
            let rec = run_replicate(scenario, r);
            progress(r);
            rec
        })
        .collect();
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(aggregate(scenario, records))
}

impl StudyReport {
    pub fn coefficient(&self, method: Method, name: &str) -> Option<&CoefficientSummary> {
        self.coefficients
            .iter()
            .find(|c| c.method == method && c.coefficient == name)
    }

    pub fn probability(&self, method: Method) -> Option<&ProbabilitySummary> {
        self.probabilities.iter().find(|p| p.method == method)
    }

    pub fn tally(&self, method: Method) -> Option<&MethodTally> {
        self.tallies.iter().find(|t| t.method == method)
    }

    /// Aligned text tables: bias/rMSE per coefficient, then probabilities.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {} (n = {}, {} replicates)\n",
            self.scenario.name, self.scenario.n, self.replicates
        );
        let _ = writeln!(
            out,
            "{:<13} {:<11} {:>8} {:>5} {:>10} {:>10} {:>10} {:>12}",
            "method", "coefficient", "truth", "used", "bias", "rmse", "median", "max|error|"
        );
        for c in &self.coefficients {
            let _ = writeln!(
                out,
                "{:<13} {:<11} {:>8.3} {:>5} {:>10.3} {:>10.3} {:>10.3} {:>12.3}",
                c.method.as_str(),
                c.coefficient,
                c.truth,
                c.count,
                c.bias,
                c.rmse,
                c.median_estimate,
                c.max_abs_error
            );
        }
        let _ = writeln!(
            out,
            "\n{:<13} {:>8} {:>8} {:>8} {:>8}",
            "method", "P(Y=1)", "P(Y=2)", "sens", "spec"
        );
        let d = &self.data_rates;
        let _ = writeln!(
            out,
            "{:<13} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            "data", d.prevalence, 1.0 - d.prevalence, d.sensitivity, d.specificity
        );
        for p in &self.probabilities {
            let _ = writeln!(
                out,
                "{:<13} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
                p.method.as_str(),
                p.prevalence,
                p.prevalence_class2,
                p.sensitivity,
                p.specificity
            );
        }
        let _ = writeln!(
            out,
            "\n{:<13} {:>9} {:>7} {:>10} {:>14} {:>8}",
            "method", "attempted", "failed", "ambiguous", "not-converged", "flipped"
        );
        for t in &self.tallies {
            let _ = writeln!(
                out,
                "{:<13} {:>9} {:>7} {:>10} {:>14} {:>8}",
                t.method.as_str(),
                t.attempted,
                t.failed,
                t.ambiguous,
                t.not_converged,
                t.flipped
            );
        }
        out
    }

    /// Long-format per-replicate estimates, one row per coefficient estimate
    /// (or a single row with empty coefficient for a failed fit).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "replicate",
            "method",
            "status",
            "converged",
            "flipped",
            "ambiguous",
            "coefficient",
            "estimate",
            "truth",
        ])?;
        let truth = self.scenario.truth().flatten();
        let names = ["beta_0", "beta_x1", "gamma_110", "gamma_11z1", "gamma_120", "gamma_12z1"];
        for rec in &self.records {
            for f in &rec.fits {
                let base = [
                    rec.replicate.to_string(),
                    f.method.as_str().to_string(),
                    f.status.as_str().to_string(),
                    f.converged.to_string(),
                    f.flipped.to_string(),
                    f.ambiguous.to_string(),
                ];
                if f.estimates.is_empty() {
                    let mut row = base.to_vec();
                    row.extend([String::new(), String::new(), String::new()]);
                    w.write_record(&row)?;
                }
                for (name, est) in &f.estimates {
                    let t = names
                        .iter()
                        .position(|n| n == name)
                        .map_or(String::new(), |i| truth[i].to_string());
                    let mut row = base.to_vec();
                    row.extend([name.clone(), est.to_string(), t]);
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small(estimators: Vec<Method>) -> ScenarioConfig {
        ScenarioConfig {
            n: 300,
            n_realizations: 3,
            estimators,
            seed: 9,
            ..ScenarioConfig::setting1()
        }
    }

    #[test]
    fn presets_match_table_values() {
        let s1 = ScenarioConfig::setting1();
        assert_eq!((s1.n, s1.z_mean, s1.n_realizations), (1000, 1.5, 500));
        let s2 = ScenarioConfig::setting2();
        assert_eq!((s2.n, s2.z_mean), (10000, 2.5));
        let s3 = ScenarioConfig::setting3();
        assert_eq!((s3.n, s3.gamma2_true.clone()), (5000, vec![-5.0, -5.0]));
        for s in [s1, s2, s3] {
            assert_eq!(s.beta_true, vec![1.0, -2.0]);
            assert_eq!(s.gamma1_true, vec![0.5, 1.0]);
            assert_eq!(s.covariance, 0.3);
            s.validate().unwrap();
        }
    }

    #[test]
    fn hand_aggregation() {
        let s = summarize_errors(Method::Em, "beta_0", 2.0, &[1.0, 3.0]);
        assert_abs_diff_eq!(s.bias, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.rmse, 1.0, epsilon = 1e-15);
        let s = summarize_errors(Method::Em, "beta_0", 2.0, &[2.0, 2.0, 2.0]);
        assert_eq!((s.bias, s.rmse), (0.0, 0.0));
    }

    #[test]
    fn oracle_estimator_has_zero_error() {
        let scenario = small(vec![Method::Em]);
        let truth = scenario.truth();
        let names = ["beta_0", "beta_x1", "gamma_110", "gamma_11z1", "gamma_120", "gamma_12z1"];
        let records = (0..5)
            .map(|r| ReplicateRecord {
                replicate: r,
                realized: RealizedRates { prevalence: 0.5, sensitivity: 0.9, specificity: 0.9 },
                fits: vec![ReplicateFit {
                    replicate: r,
                    method: Method::Em,
                    status: FitStatus::Ok,
                    error: None,
                    converged: true,
                    flipped: false,
                    ambiguous: false,
                    estimates: names.iter().map(|n| n.to_string()).zip(truth.flatten()).collect(),
                    prevalence: 0.5,
                    sensitivity: 0.9,
                    specificity: 0.9,
                }],
            })
            .collect();
        let report = aggregate(&scenario, records);
        assert_eq!(report.coefficients.len(), 6);
        for c in &report.coefficients {
            assert_eq!((c.bias, c.rmse), (0.0, 0.0));
        }
    }

    #[test]
    fn failures_are_excluded_and_counted() {
        let scenario = small(vec![Method::Naive]);
        let ok = |r: usize, v: f64| ReplicateFit::from_result(
            r,
            Method::Naive,
            &Err(Error::InvalidConfig(format!("{v}"))),
        );
        let mut fits = vec![ok(0, 0.0)];
        fits[0].status = FitStatus::Failed;
        let rec = ReplicateRecord {
            replicate: 0,
            realized: RealizedRates { prevalence: 0.5, sensitivity: 0.9, specificity: 0.9 },
            fits,
        };
        let report = aggregate(&scenario, vec![rec]);
        assert_eq!(report.tally(Method::Naive).unwrap().failed, 1);
        assert!(report.coefficients.is_empty());
    }

    #[test]
    fn generation_is_deterministic_and_replicates_differ() {
        let s = small(vec![Method::Naive]);
        let a = generate_dataset(&s, 1).unwrap();
        let b = generate_dataset(&s, 1).unwrap();
        let c = generate_dataset(&s, 2).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.y_true, b.y_true);
        assert_ne!(a.data, c.data);
        assert!(a.data.z().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn realized_rates_match_cross_tabulation() {
        let y = [Class::One, Class::One, Class::Two, Class::Two, Class::Two];
        let k = [Class::One, Class::Two, Class::Two, Class::Two, Class::One];
        let r = RealizedRates::from_classes(&y, &k);
        assert_abs_diff_eq!(r.prevalence, 0.4);
        assert_abs_diff_eq!(r.sensitivity, 0.5);
        assert_abs_diff_eq!(r.specificity, 2.0 / 3.0);
    }

    #[test]
    fn saturated_mechanism_observes_only_class_one() {
        let s = ScenarioConfig {
            gamma1_true: vec![60.0, 0.0],
            gamma2_true: vec![60.0, 0.0],
            ..small(vec![Method::Naive])
        };
        let g = generate_dataset(&s, 0).unwrap();
        assert!(g.data.ystar().iter().all(|k| *k == Class::One));
    }

    #[test]
    fn setting3_specificity_is_essentially_perfect() {
        let s = ScenarioConfig { seed: 5, ..ScenarioConfig::setting3() };
        let spec: f64 = (0..20).map(|r| generate_dataset(&s, r).unwrap().realized.specificity).sum::<f64>() / 20.0;
        assert!((spec - 1.0).abs() <= 0.001, "{spec}");
    }

    #[test]
    fn study_is_deterministic_with_consistent_cells() {
        let s = small(vec![Method::Em, Method::Naive, Method::PerfectSpec]);
        let a = run_study(&s).unwrap();
        let b = run_study(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replicates, 3);
        for c in &a.coefficients {
            assert!(c.rmse >= c.bias.abs());
        }
        for p in &a.probabilities {
            for v in [p.prevalence, p.sensitivity, p.specificity] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("replicate,method,status,converged,flipped,ambiguous,coefficient,estimate,truth\n"));
        assert!(a.to_table().contains("beta_x1"));
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let s = ScenarioConfig { n: 0, ..ScenarioConfig::setting1() };
        assert!(s.validate().is_err());
        let s = ScenarioConfig { covariance: 1.0, ..ScenarioConfig::setting1() };
        assert!(s.validate().is_err());
        let s = ScenarioConfig { beta_true: vec![1.0], ..ScenarioConfig::setting1() };
        assert!(s.validate().is_err());
    }
}
