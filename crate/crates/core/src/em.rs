//! EM estimation of both mechanisms.
//!
//! The E-step computes posterior class weights `w_ij`. The expected
//! complete-data log-likelihood then separates into three logistic
//! regressions: the soft response `w_i1` on `X`, and `I(Y* = 1)` on `Z`
//! weighted by `w_i1` and by `w_i2`. The final estimate is passed through the
//! label-switching correction, and the covariance is the inverse observed
//! information at that estimate.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{FitResult, Method};
use crate::glm::{fit_weighted_logistic, LogitSolution, WeightedLogitProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::label_switch::{correct_label_switching, CorrectionReport};
use crate::model::{
    compute_probability_grid, logit, mean_prevalence, observed_loglik_from_grid,
    posterior_weights_from_grid, score_blocks, AverageClassificationRates, Class, ObservedDataset,
    ParameterSet, ProbabilityGrid,
};
use crate::rng::{stream, stream_rng};

/// A gamma block is frozen for an iteration when its total weight is below
/// this fraction of `n`.
const EMPTY_COMPONENT_FRACTION: f64 = 1e-6;
/// Eigenvalues below this fraction of the largest are dropped when the
/// information matrix has to be pseudo-inverted.
const PSEUDO_INVERSE_RTOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "strategy")]
pub enum InitStrategy {
    /// `beta` from the naive regression of `Y*` on `X`; observation intercepts
    /// at `logit(0.8)` and `logit(0.2)` with zero slopes.
    NaiveStart,
    /// Best of several starts drawn Uniform(-2, 2).
    RandomStarts { starts: usize },
    Given { params: ParameterSet },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    pub loglik_tol: f64,
    pub param_tol: f64,
    pub init: InitStrategy,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 1500,
            loglik_tol: 1e-7,
            param_tol: 1e-6,
            init: InitStrategy::NaiveStart,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.loglik_tol > 0.0) {
            return Err(Error::InvalidConfig("em.loglik_tol must be positive".into()));
        }
        if !(self.param_tol > 0.0) {
            return Err(Error::InvalidConfig("em.param_tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("em.max_iter must be at least 1".into()));
        }
        if let InitStrategy::RandomStarts { starts: 0 } = self.init {
            return Err(Error::InvalidConfig("em.init.starts must be at least 1".into()));
        }
        Ok(())
    }
}

/// `w[i] = [P(Y_i = 1 | Y*_i, X, Z), P(Y_i = 2 | Y*_i, X, Z)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorWeights {
    pub w: Vec<[f64; 2]>,
}

impl PosteriorWeights {
    pub fn total(&self, class: Class) -> f64 {
        self.w.iter().map(|r| r[class.index()]).sum()
    }
}

/// Which observation probabilities are estimated and which are held at a
/// structural 0/1 value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Restriction {
    /// Both directions of misclassification.
    Full,
    /// `P(Y* = 1 | Y = 2) = 0`; only `gamma1` is estimated.
    PerfectSpecificity,
    /// `P(Y* = 2 | Y = 1) = 0`; only `gamma2` is estimated.
    PerfectSensitivity,
    /// No misclassification; the model is an ordinary logistic regression.
    Exact,
}

impl Restriction {
    /// Estimated blocks as `[beta, gamma1, gamma2]`.
    pub(crate) fn free_blocks(self) -> [bool; 3] {
        match self {
            Restriction::Full => [true, true, true],
            Restriction::PerfectSpecificity => [true, true, false],
            Restriction::PerfectSensitivity => [true, false, true],
            Restriction::Exact => [true, false, false],
        }
    }

    /// Probability grid with fixed blocks set exactly, bypassing the clamp.
    pub(crate) fn grid(self, params: &ParameterSet, data: &ObservedDataset) -> Result<ProbabilityGrid> {
        let mut grid = compute_probability_grid(params, data)?;
        let [_, g1, g2] = self.free_blocks();
        if !g1 {
            grid.pistar_given1.iter_mut().for_each(|r| *r = [1.0, 0.0]);
        }
        if !g2 {
            grid.pistar_given2.iter_mut().for_each(|r| *r = [0.0, 1.0]);
        }
        Ok(grid)
    }

    pub(crate) fn loglik(self, params: &ParameterSet, data: &ObservedDataset) -> Result<f64> {
        observed_loglik_from_grid(&self.grid(params, data)?, data.ystar())
    }

    pub(crate) fn e_step(self, params: &ParameterSet, data: &ObservedDataset) -> Result<PosteriorWeights> {
        let grid = self.grid(params, data)?;
        Ok(PosteriorWeights {
            w: posterior_weights_from_grid(&grid, data.ystar()),
        })
    }

    /// Gradient of the restricted observed log-likelihood in the free
    /// coefficients.
    pub(crate) fn score(self, params: &ParameterSet, data: &ObservedDataset) -> Result<Vec<f64>> {
        let grid = self.grid(params, data)?;
        let w = posterior_weights_from_grid(&grid, data.ystar());
        let blocks = score_blocks(&grid, &w, data);
        Ok(self.select(blocks))
    }

    fn select(self, blocks: [Vec<f64>; 3]) -> Vec<f64> {
        blocks
            .into_iter()
            .zip(self.free_blocks())
            .filter(|(_, free)| *free)
            .flat_map(|(b, _)| b)
            .collect()
    }

    pub(crate) fn free_values(self, params: &ParameterSet) -> Vec<f64> {
        self.select([
            params.beta.clone(),
            params.gamma1.clone(),
            params.gamma2.clone(),
        ])
    }

    pub(crate) fn set_free(self, params: &ParameterSet, flat: &[f64]) -> ParameterSet {
        let mut out = params.clone();
        let mut offset = 0;
        let [_, g1, g2] = self.free_blocks();
        let mut take = |block: &mut Vec<f64>| {
            let len = block.len();
            block.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        };
        take(&mut out.beta);
        if g1 {
            take(&mut out.gamma1);
        }
        if g2 {
            take(&mut out.gamma2);
        }
        out
    }
}

pub fn e_step(params: &ParameterSet, data: &ObservedDataset) -> Result<PosteriorWeights> {
    Restriction::Full.e_step(params, data)
}

/// Outcome of one M-step.
#[derive(Clone, Debug, PartialEq)]
pub struct MStep {
    pub params: ParameterSet,
    /// All inner logistic fits reached their gradient tolerance.
    pub inner_converged: bool,
    /// A gamma block kept its previous value because its component had
    /// (numerically) no weight.
    pub frozen_gamma1: bool,
    pub frozen_gamma2: bool,
}

pub fn m_step(weights: &PosteriorWeights, data: &ObservedDataset, prev: &ParameterSet) -> Result<MStep> {
    m_step_restricted(Restriction::Full, weights, data, prev)
}

pub(crate) fn m_step_restricted(
    restriction: Restriction,
    weights: &PosteriorWeights,
    data: &ObservedDataset,
    prev: &ParameterSet,
) -> Result<MStep> {
    prev.check_against(data)?;
    if weights.w.len() != data.n() {
        return Err(Error::DimensionMismatch {
            block: "posterior weights",
            expected: data.n(),
            got: weights.w.len(),
        });
    }
    let mut next = prev.clone();
    let mut inner_converged = true;

    let soft: Vec<f64> = weights.w.iter().map(|r| r[0]).collect();
    let beta_problem = WeightedLogitProblem::with_unit_weights(data.x(), soft)?;
    let sol = fit_weighted_logistic(&beta_problem, &prev.beta, DEFAULT_MAX_ITER, DEFAULT_TOL);
    inner_converged &= sol.converged;
    next.beta = sol.coefficients;

    let [_, free1, free2] = restriction.free_blocks();
    let ystar1 = data.ystar_indicator(Class::One);
    let threshold = EMPTY_COMPONENT_FRACTION * data.n() as f64;
    let mut frozen = [false, false];
    for (j, free) in [(0usize, free1), (1, free2)] {
        if !free {
            continue;
        }
        let case_weights: Vec<f64> = weights.w.iter().map(|r| r[j]).collect();
        let prev_block = if j == 0 { &prev.gamma1 } else { &prev.gamma2 };
        if case_weights.iter().sum::<f64>() < threshold {
            frozen[j] = true;
            continue;
        }
        let Ok(problem) = WeightedLogitProblem::new(data.z(), ystar1.clone(), case_weights) else {
            frozen[j] = true;
            continue;
        };
        let sol = fit_weighted_logistic(&problem, prev_block, DEFAULT_MAX_ITER, DEFAULT_TOL);
        inner_converged &= sol.converged;
        if j == 0 {
            next.gamma1 = sol.coefficients;
        } else {
            next.gamma2 = sol.coefficients;
        }
    }

    Ok(MStep {
        params: next,
        inner_converged,
        frozen_gamma1: frozen[0],
        frozen_gamma2: frozen[1],
    })
}

/// Covariance of the estimated coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
    /// The information matrix was singular and a pseudo-inverse was used.
    pub rank_deficient: bool,
}

impl Covariance {
    pub fn standard_errors(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// Inverse of the observed information (negated Hessian of the observed
/// log-likelihood) at `params`, in `beta, gamma1, gamma2` order.
///
/// The Hessian is built from central differences of the analytic gradient
/// with step `1e-5 * (1 + |theta|)`.
pub fn estimate_covariance(params: &ParameterSet, data: &ObservedDataset) -> Result<Covariance> {
    covariance_restricted(Restriction::Full, params, data)
}

pub(crate) fn covariance_restricted(
    restriction: Restriction,
    params: &ParameterSet,
    data: &ObservedDataset,
) -> Result<Covariance> {
    let theta = restriction.free_values(params);
    let d = theta.len();
    let mut hessian = DMatrix::zeros(d, d);
    for k in 0..d {
        let h = 1e-5 * (1.0 + theta[k].abs());
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[k] += h;
        down[k] -= h;
        let g_up = restriction.score(&restriction.set_free(params, &up), data)?;
        let g_down = restriction.score(&restriction.set_free(params, &down), data)?;
        for r in 0..d {
            hessian[(r, k)] = (g_up[r] - g_down[r]) / (2.0 * h);
        }
    }
    let info = -(&hessian + hessian.transpose()) * 0.5;
    Ok(invert_information(info))
}

pub(crate) fn invert_information(info: DMatrix<f64>) -> Covariance {
    if let Some(ch) = info.clone().cholesky() {
        let inv = ch.inverse();
        if inv.iter().all(|v| v.is_finite()) {
            let sym = (&inv + inv.transpose()) * 0.5;
            return Covariance {
                matrix: sym,
                rank_deficient: false,
            };
        }
    }
    let d = info.nrows();
    let eig = info.symmetric_eigen();
    let largest = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = PSEUDO_INVERSE_RTOL * largest;
    let mut inv = DMatrix::zeros(d, d);
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff && lambda > 0.0 {
            let v = eig.eigenvectors.column(idx);
            inv += (v * v.transpose()) / lambda;
        }
    }
    let sym = (&inv + inv.transpose()) * 0.5;
    Covariance {
        matrix: sym,
        rank_deficient: true,
    }
}

/// Ordinary logistic regression of `I(Y* = 1)` on `X`.
pub(crate) fn naive_logistic(data: &ObservedDataset) -> Result<LogitSolution> {
    let problem = WeightedLogitProblem::with_unit_weights(data.x(), data.ystar_indicator(Class::One))?;
    Ok(fit_weighted_logistic(
        &problem,
        &vec![0.0; data.x_dim()],
        DEFAULT_MAX_ITER,
        DEFAULT_TOL,
    ))
}

pub(crate) fn naive_start(data: &ObservedDataset) -> Result<ParameterSet> {
    let beta = naive_logistic(data)?.coefficients;
    let block = |p: f64| {
        let mut g = vec![0.0; data.z_dim()];
        g[0] = logit(p);
        g
    };
    Ok(ParameterSet::new(beta, block(0.8), block(0.2)))
}

/// Trace of a single EM run.
#[derive(Clone, Debug)]
pub(crate) struct EmRun {
    pub params: ParameterSet,
    pub loglik: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub inner_failures: usize,
    pub frozen_iterations: usize,
}

pub(crate) fn run_em(
    restriction: Restriction,
    data: &ObservedDataset,
    init: ParameterSet,
    config: &EmConfig,
) -> Result<EmRun> {
    init.check_against(data)?;
    let mut params = init;
    let mut loglik = restriction.loglik(&params, data)?;
    let mut trace = vec![loglik];
    let mut converged = false;
    let mut iterations = 0;
    let mut inner_failures = 0;
    let mut frozen_iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let weights = restriction.e_step(&params, data)?;
        let step = m_step_restricted(restriction, &weights, data, &params)?;
        if !step.inner_converged {
            inner_failures += 1;
        }
        if step.frozen_gamma1 || step.frozen_gamma2 {
            frozen_iterations += 1;
        }
        let next_loglik = restriction.loglik(&step.params, data)?;
        let change = step.params.max_abs_diff(&params);
        let gain = next_loglik - loglik;
        params = step.params;
        loglik = next_loglik;
        trace.push(loglik);
        if gain.abs() < config.loglik_tol || change < config.param_tol {
            converged = true;
            break;
        }
    }

    Ok(EmRun {
        params,
        loglik,
        trace,
        iterations,
        converged,
        inner_failures,
        frozen_iterations,
    })
}

pub(crate) fn random_start(data: &ObservedDataset, seed: u64, start: usize) -> ParameterSet {
    let mut rng = stream_rng(seed, start as u64, stream::EM_STARTS);
    let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-2.0..2.0)).collect() };
    let beta = draw(data.x_dim());
    let gamma1 = draw(data.z_dim());
    let gamma2 = draw(data.z_dim());
    ParameterSet::new(beta, gamma1, gamma2)
}

pub(crate) fn run_with_strategy(
    restriction: Restriction,
    data: &ObservedDataset,
    config: &EmConfig,
) -> Result<EmRun> {
    match &config.init {
        InitStrategy::NaiveStart => run_em(restriction, data, naive_start(data)?, config),
        InitStrategy::Given { params } => run_em(restriction, data, params.clone(), config),
        InitStrategy::RandomStarts { starts } => {
            let runs: Vec<Result<EmRun>> = (0..*starts)
                .into_par_iter()
                .map(|s| run_em(restriction, data, random_start(data, config.seed, s), config))
                .collect();
            let mut best: Option<EmRun> = None;
            let mut last_err = None;
            for run in runs {
                match run {
                    Ok(r) => {
                        if best.as_ref().is_none_or(|b| r.loglik > b.loglik) {
                            best = Some(r);
                        }
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            best.ok_or_else(|| last_err.expect("at least one start"))
        }
    }
}

/// Packs a finished run into a [`FitResult`].
pub(crate) fn assemble(
    method: Method,
    restriction: Restriction,
    data: &ObservedDataset,
    params: ParameterSet,
    run: &EmRun,
    correction: Option<CorrectionReport>,
) -> Result<FitResult> {
    let [_, free1, free2] = restriction.free_blocks();
    let cov = covariance_restricted(restriction, &params, data)?;
    let grid = restriction.grid(&params, data)?;
    let rates = AverageClassificationRates::from_grid(&grid);
    let prevalence = mean_prevalence(&params, data)?;

    let mut warnings = Vec::new();
    if !data.is_identifiable() {
        warnings.push(format!(
            "only {} distinct covariate patterns; at least 7 are needed for identifiability",
            data.distinct_covariate_patterns()
        ));
    }
    if !run.converged {
        warnings.push(format!("EM did not converge in {} iterations", run.iterations));
    }
    if run.inner_failures > 0 {
        warnings.push(format!(
            "inner logistic fit did not reach tolerance in {} iterations",
            run.inner_failures
        ));
    }
    if run.frozen_iterations > 0 {
        warnings.push(format!(
            "a gamma block had no weight and was held fixed in {} iterations",
            run.frozen_iterations
        ));
    }
    if cov.rank_deficient {
        warnings.push("information matrix is singular; covariance is a pseudo-inverse".into());
    }
    if let Some(c) = &correction {
        if c.ambiguous {
            warnings.push("label orientation is ambiguous: neither mode has average sensitivity and specificity above 0.5".into());
        }
    }

    Ok(FitResult {
        method,
        n: data.n(),
        names: data.coefficient_names(),
        standard_errors: cov.standard_errors(),
        rank_deficient: cov.rank_deficient,
        covariance: Some(cov.matrix),
        beta: params.beta.clone(),
        gamma1: free1.then(|| params.gamma1.clone()),
        gamma2: free2.then(|| params.gamma2.clone()),
        medians: None,
        rates,
        prevalence,
        correction,
        loglik: run.loglik,
        converged: run.converged,
        iterations: run.iterations,
        warnings,
        mcmc: None,
        loglik_trace: run.trace.clone(),
    })
}

/// Fits both mechanisms by EM and applies the label-switching correction.
pub fn fit_em(data: &ObservedDataset, config: &EmConfig) -> Result<FitResult> {
    config.validate()?;
    let run = run_with_strategy(Restriction::Full, data, config)?;
    let (corrected, report) = correct_label_switching(&run.params, data)?;
    assemble(Method::Em, Restriction::Full, data, corrected, &run, Some(report))
}
