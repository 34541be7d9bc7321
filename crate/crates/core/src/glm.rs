//! Weighted logistic regression by damped Newton-Raphson.
//!
//! Every M-step and every baseline reduces to maximizing
//! `sum_i c_i [r_i log mu_i + (1 - r_i) log(1 - mu_i)]` with
//! `mu_i = logistic(x_i . coef)`, where responses `r_i` may be soft.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{linear_predictor, logistic, softplus};

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 10;
/// Diagonal jitter tried, in order, when the information matrix is singular.
const JITTERS: [f64; 5] = [1e-8, 1e-6, 1e-4, 1e-2, 1.0];

#[derive(Clone, Debug)]
pub struct WeightedLogitProblem<'a> {
    design: &'a DMatrix<f64>,
    response: Vec<f64>,
    case_weights: Vec<f64>,
}

impl<'a> WeightedLogitProblem<'a> {
    pub fn new(design: &'a DMatrix<f64>, response: Vec<f64>, case_weights: Vec<f64>) -> Result<Self> {
        let n = design.nrows();
        if response.len() != n || case_weights.len() != n {
            return Err(Error::InvalidProblem(format!(
                "design has {n} rows, response {} and weights {}",
                response.len(),
                case_weights.len()
            )));
        }
        if let Some(i) = response.iter().position(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidProblem(format!(
                "response {} at row {i} is outside [0, 1]",
                response[i]
            )));
        }
        if let Some(i) = case_weights.iter().position(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidProblem(format!(
                "case weight {} at row {i} is not a finite nonnegative number",
                case_weights[i]
            )));
        }
        let positive = case_weights.iter().filter(|&&c| c > 0.0).count();
        if positive < design.ncols() {
            return Err(Error::InvalidProblem(format!(
                "{positive} rows with positive weight for {} coefficients",
                design.ncols()
            )));
        }
        Ok(Self {
            design,
            response,
            case_weights,
        })
    }

    pub fn with_unit_weights(design: &'a DMatrix<f64>, response: Vec<f64>) -> Result<Self> {
        let n = design.nrows();
        Self::new(design, response, vec![1.0; n])
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        self.design
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn case_weights(&self) -> &[f64] {
        &self.case_weights
    }

    /// Weighted Bernoulli log-likelihood.
    pub fn objective(&self, coef: &[f64]) -> f64 {
        let eta = linear_predictor(self.design, coef);
        self.objective_from_eta(&eta)
    }

    fn objective_from_eta(&self, eta: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for ((&e, &r), &c) in eta.iter().zip(&self.response).zip(&self.case_weights) {
            if c > 0.0 {
                // r log mu + (1-r) log(1-mu) = r*eta - log(1 + e^eta)
                total += c * (r * e - softplus(e));
            }
        }
        total
    }

    /// Weighted score `X' (c o (r - mu))`.
    pub fn score(&self, coef: &[f64]) -> Vec<f64> {
        self.evaluate(coef).1.iter().copied().collect()
    }

    /// Fisher information `X' diag(c mu (1 - mu)) X`.
    pub fn information(&self, coef: &[f64]) -> DMatrix<f64> {
        self.evaluate(coef).2
    }

    fn evaluate(&self, coef: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        let eta = linear_predictor(self.design, coef);
        let mut obj = 0.0;
        let mut grad = DVector::zeros(d);
        let mut info = DMatrix::zeros(d, d);
        for i in 0..eta.len() {
            let c = self.case_weights[i];
            if c == 0.0 {
                continue;
            }
            let e = eta[i];
            let r = self.response[i];
            let mu = logistic(e);
            obj += c * (r * e - softplus(e));
            let resid = c * (r - mu);
            let curv = c * mu * (1.0 - mu);
            for a in 0..d {
                let xa = self.design[(i, a)];
                grad[a] += resid * xa;
                let cx = curv * xa;
                for b in 0..=a {
                    info[(a, b)] += cx * self.design[(i, b)];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        (obj, grad, info)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitSolution {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub objective: f64,
    pub diagnostic: Option<String>,
}

fn max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `info * step = grad`, adding diagonal jitter only if `info` is not
/// positive definite.
fn newton_direction(info: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = info.clone().cholesky() {
        return Some(ch.solve(grad));
    }
    for jitter in JITTERS {
        let mut m = info.clone();
        for a in 0..m.nrows() {
            m[(a, a)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            return Some(ch.solve(grad));
        }
    }
    None
}

/// Maximizes the weighted log-likelihood from `init`.
///
/// Never returns coefficients with a lower objective than `init`. Separation
/// or a singular information matrix produce a non-converged solution with a
/// diagnostic instead of an error.
pub fn fit_weighted_logistic(
    problem: &WeightedLogitProblem<'_>,
    init: &[f64],
    max_iter: usize,
    tol: f64,
) -> LogitSolution {
    assert_eq!(init.len(), problem.dim(), "init length must match design columns");
    let mut coef = DVector::from_column_slice(init);
    let (mut obj, mut grad, mut info) = problem.evaluate(coef.as_slice());
    let mut diagnostic = None;
    let mut iterations = 0;

    while iterations < max_iter {
        if max_norm(&grad) < tol {
            break;
        }
        let Some(step) = newton_direction(&info, &grad) else {
            diagnostic = Some("information matrix is singular".to_string());
            break;
        };
        iterations += 1;
        // Below this predicted gain objective comparisons are rounding noise.
        let predicted = grad.dot(&step);
        let noise = 64.0 * f64::EPSILON * (1.0 + obj.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = &coef + &step * t;
            let eta = linear_predictor(problem.design, cand.as_slice());
            let cand_obj = problem.objective_from_eta(&eta);
            if cand_obj.is_finite() && (cand_obj >= obj || predicted * t <= noise) {
                accepted = Some(cand);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            diagnostic = Some("step-halving failed to increase the objective".to_string());
            break;
        };
        coef = next;
        (obj, grad, info) = problem.evaluate(coef.as_slice());
    }

    let final_gradient_norm = max_norm(&grad);
    let converged = final_gradient_norm < tol;
    if !converged && diagnostic.is_none() {
        diagnostic = Some(format!(
            "reached {max_iter} iterations with gradient norm {final_gradient_norm:.3e}"
        ));
    }
    LogitSolution {
        coefficients: coef.iter().copied().collect(),
        converged,
        iterations,
        final_gradient_norm,
        objective: obj,
        diagnostic,
    }
}
