//! Data model and likelihood computations for logistic regression with a
//! misclassified binary outcome.
//!
//! Two logistic mechanisms are combined. The true outcome mechanism links the
//! latent class `Y` to covariates `X`; the observation mechanism links the
//! recorded class `Y*` to `Y` and covariates `Z`. Class 2 is the reference
//! category in both, so only the class-1 coefficients are stored.
//!
//! At the boundary classes are labelled `1` and `2`; internally they index
//! columns `0` and `1`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic outputs are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Distinct covariate rows required for identifiability of a two-component
/// mixture of logistic regressions.
pub const MIN_COVARIATE_PATTERNS: usize = 7;

/// A binary outcome class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    One,
    Two,
}

impl Class {
    pub fn from_label(label: i64) -> Option<Self> {
        match label {
            1 => Some(Class::One),
            2 => Some(Class::Two),
            _ => None,
        }
    }

    pub fn label(self) -> u8 {
        match self {
            Class::One => 1,
            Class::Two => 2,
        }
    }

    /// Column index used internally: class 1 is 0, class 2 is 1.
    pub fn index(self) -> usize {
        match self {
            Class::One => 0,
            Class::Two => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Class::One => Class::Two,
            Class::Two => Class::One,
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
pub fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `design * coef`.
pub(crate) fn linear_predictor(design: &DMatrix<f64>, coef: &[f64]) -> DVector<f64> {
    design * DVectorView::from_slice(coef, coef.len())
}

/// Observed outcomes together with the true-outcome (`X`) and observation
/// (`Z`) design matrices. Both designs carry an explicit leading intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedDataset {
    ystar: Vec<Class>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    x_names: Vec<String>,
    z_names: Vec<String>,
}

impl ObservedDataset {
    /// Builds a dataset from raw covariates; intercept columns are prepended.
    /// Covariate columns are named `x1..xp` and `z1..zq`.
    pub fn new(ystar: Vec<Class>, x_cov: DMatrix<f64>, z_cov: DMatrix<f64>) -> Result<Self> {
        let x = with_intercept(&x_cov);
        let z = with_intercept(&z_cov);
        Self::from_designs(ystar, x, z)
    }

    /// Builds a dataset from complete design matrices whose first column must
    /// be the constant 1.
    pub fn from_designs(ystar: Vec<Class>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = ystar.len();
        if n == 0 {
            return Err(Error::InvalidDataset("no subjects".into()));
        }
        for (name, m) in [("x design", &x), ("z design", &z)] {
            if m.nrows() != n {
                return Err(Error::InvalidDataset(format!(
                    "{name} has {} rows but there are {n} outcomes",
                    m.nrows()
                )));
            }
            if m.ncols() == 0 || m.column(0).iter().any(|&v| v != 1.0) {
                return Err(Error::InvalidDataset(format!(
                    "{name} must start with an intercept column of ones"
                )));
            }
            if let Some(i) = (0..n).find(|&i| m.row(i).iter().any(|v| !v.is_finite())) {
                return Err(Error::InvalidDataset(format!(
                    "{name} has a non-finite entry in row {i}"
                )));
            }
        }
        let x_names = (1..x.ncols()).map(|j| format!("x{j}")).collect();
        let z_names = (1..z.ncols()).map(|j| format!("z{j}")).collect();
        Ok(Self {
            ystar,
            x,
            z,
            x_names,
            z_names,
        })
    }

    /// Renames covariate columns (intercepts excluded).
    pub fn with_names(mut self, x_names: Vec<String>, z_names: Vec<String>) -> Result<Self> {
        if x_names.len() + 1 != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                block: "x names",
                expected: self.x.ncols() - 1,
                got: x_names.len(),
            });
        }
        if z_names.len() + 1 != self.z.ncols() {
            return Err(Error::DimensionMismatch {
                block: "z names",
                expected: self.z.ncols() - 1,
                got: z_names.len(),
            });
        }
        self.x_names = x_names;
        self.z_names = z_names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.ystar.len()
    }

    pub fn ystar(&self) -> &[Class] {
        &self.ystar
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    /// Number of coefficients in the true outcome mechanism (with intercept).
    pub fn x_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Number of coefficients per observation-mechanism block.
    pub fn z_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn z_names(&self) -> &[String] {
        &self.z_names
    }

    /// `I(Y*_i = class)` as a float vector.
    pub fn ystar_indicator(&self, class: Class) -> Vec<f64> {
        self.ystar
            .iter()
            .map(|&k| if k == class { 1.0 } else { 0.0 })
            .collect()
    }

    /// Number of distinct `(x, z)` covariate rows.
    pub fn distinct_covariate_patterns(&self) -> usize {
        let mut seen = HashSet::new();
        for i in 0..self.n() {
            let key: Vec<u64> = self
                .x
                .row(i)
                .iter()
                .skip(1)
                .chain(self.z.row(i).iter().skip(1))
                .map(|v| v.to_bits())
                .collect();
            seen.insert(key);
            if seen.len() >= MIN_COVARIATE_PATTERNS {
                break;
            }
        }
        seen.len()
    }

    /// Whether the sufficient condition for mixture identifiability holds.
    pub fn is_identifiable(&self) -> bool {
        self.distinct_covariate_patterns() >= MIN_COVARIATE_PATTERNS
    }

    /// A dataset holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            ystar: rows.iter().map(|&i| self.ystar[i]).collect(),
            x: self.x.select_rows(rows),
            z: self.z.select_rows(rows),
            x_names: self.x_names.clone(),
            z_names: self.z_names.clone(),
        }
    }

    /// The same covariates with a different observed outcome vector.
    pub fn with_ystar(&self, ystar: Vec<Class>) -> Result<Self> {
        if ystar.len() != self.n() {
            return Err(Error::DimensionMismatch {
                block: "ystar",
                expected: self.n(),
                got: ystar.len(),
            });
        }
        Ok(Self {
            ystar,
            ..self.clone()
        })
    }

    pub fn coefficient_names(&self) -> CoefficientNames {
        let beta = std::iter::once("beta_0".to_string())
            .chain(self.x_names.iter().map(|c| format!("beta_{c}")))
            .collect();
        let gamma = |j: u8| {
            std::iter::once(format!("gamma_1{j}0"))
                .chain(self.z_names.iter().map(|c| format!("gamma_1{j}{c}")))
                .collect()
        };
        CoefficientNames {
            beta,
            gamma1: gamma(1),
            gamma2: gamma(2),
        }
    }
}

fn with_intercept(cov: &DMatrix<f64>) -> DMatrix<f64> {
    cov.clone().insert_column(0, 1.0)
}

/// Coefficient labels, e.g. `beta_0, beta_x1, gamma_110, gamma_11z1, gamma_120`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoefficientNames {
    pub beta: Vec<String>,
    pub gamma1: Vec<String>,
    pub gamma2: Vec<String>,
}

impl CoefficientNames {
    pub fn all(&self) -> Vec<String> {
        self.beta
            .iter()
            .chain(&self.gamma1)
            .chain(&self.gamma2)
            .cloned()
            .collect()
    }
}

/// Coefficients of both mechanisms. `beta` belongs to class 1 of the true
/// outcome; `gamma1` and `gamma2` give `P(Y* = 1 | Y = 1)` and
/// `P(Y* = 1 | Y = 2)`. Reference-class coefficients are zero and not stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub beta: Vec<f64>,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
}

impl ParameterSet {
    pub fn new(beta: Vec<f64>, gamma1: Vec<f64>, gamma2: Vec<f64>) -> Self {
        Self {
            beta,
            gamma1,
            gamma2,
        }
    }

    pub fn zeros(x_dim: usize, z_dim: usize) -> Self {
        Self::new(vec![0.0; x_dim], vec![0.0; z_dim], vec![0.0; z_dim])
    }

    /// The other likelihood mode: `(-beta, gamma2, gamma1)`.
    pub fn transpose(&self) -> Self {
        Self {
            beta: self.beta.iter().map(|b| -b).collect(),
            gamma1: self.gamma2.clone(),
            gamma2: self.gamma1.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.beta.len() + self.gamma1.len() + self.gamma2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coefficients in `beta, gamma1, gamma2` order.
    pub fn flatten(&self) -> Vec<f64> {
        self.beta
            .iter()
            .chain(&self.gamma1)
            .chain(&self.gamma2)
            .copied()
            .collect()
    }

    pub fn from_flat(flat: &[f64], x_dim: usize, z_dim: usize) -> Result<Self> {
        let expected = x_dim + 2 * z_dim;
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                block: "flat parameter vector",
                expected,
                got: flat.len(),
            });
        }
        Ok(Self {
            beta: flat[..x_dim].to_vec(),
            gamma1: flat[x_dim..x_dim + z_dim].to_vec(),
            gamma2: flat[x_dim + z_dim..].to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checks block lengths against the dataset and that every entry is finite.
    pub fn check_against(&self, data: &ObservedDataset) -> Result<()> {
        for (block, coef, dim) in [
            ("beta", &self.beta, data.x_dim()),
            ("gamma1", &self.gamma1, data.z_dim()),
            ("gamma2", &self.gamma2, data.z_dim()),
        ] {
            if coef.len() != dim {
                return Err(Error::DimensionMismatch {
                    block,
                    expected: dim,
                    got: coef.len(),
                });
            }
            if coef.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteParameter { block });
            }
        }
        Ok(())
    }
}

/// Per-subject response probabilities under a parameter set.
///
/// `pi[i] = [P(Y=1), P(Y=2)]`, `pistar_given1[i] = [P(Y*=1|Y=1), P(Y*=2|Y=1)]`
/// and likewise `pistar_given2` for `Y = 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityGrid {
    pub pi: Vec<[f64; 2]>,
    pub pistar_given1: Vec<[f64; 2]>,
    pub pistar_given2: Vec<[f64; 2]>,
}

impl ProbabilityGrid {
    pub fn n(&self) -> usize {
        self.pi.len()
    }

    /// `P(Y*_i = k | Y_i = j)`.
    #[inline]
    pub fn pistar(&self, i: usize, k: Class, j: Class) -> f64 {
        match j {
            Class::One => self.pistar_given1[i][k.index()],
            Class::Two => self.pistar_given2[i][k.index()],
        }
    }
}

fn two_class(eta: &DVector<f64>) -> Vec<[f64; 2]> {
    eta.iter()
        .map(|&e| {
            let p = clamp_prob(logistic(e));
            [p, 1.0 - p]
        })
        .collect()
}

pub fn compute_probability_grid(
    params: &ParameterSet,
    data: &ObservedDataset,
) -> Result<ProbabilityGrid> {
    params.check_against(data)?;
    Ok(ProbabilityGrid {
        pi: two_class(&linear_predictor(data.x(), &params.beta)),
        pistar_given1: two_class(&linear_predictor(data.z(), &params.gamma1)),
        pistar_given2: two_class(&linear_predictor(data.z(), &params.gamma2)),
    })
}

pub(crate) fn observed_probability_from_grid(grid: &ProbabilityGrid) -> Vec<[f64; 2]> {
    (0..grid.n())
        .map(|i| {
            let [p1, p2] = grid.pi[i];
            let g1 = grid.pistar_given1[i];
            let g2 = grid.pistar_given2[i];
            [g1[0] * p1 + g2[0] * p2, g1[1] * p1 + g2[1] * p2]
        })
        .collect()
}

/// `P(Y*_i = k | X, Z) = sum_j P(Y*=k | Y=j, Z) P(Y=j | X)` for both `k`.
pub fn observed_probability(
    params: &ParameterSet,
    data: &ObservedDataset,
) -> Result<Vec<[f64; 2]>> {
    let grid = compute_probability_grid(params, data)?;
    Ok(observed_probability_from_grid(&grid))
}

pub(crate) fn observed_loglik_from_grid(grid: &ProbabilityGrid, ystar: &[Class]) -> Result<f64> {
    let mut total = 0.0;
    for (i, &k) in ystar.iter().enumerate() {
        let [p1, p2] = grid.pi[i];
        let p = grid.pistar(i, k, Class::One) * p1 + grid.pistar(i, k, Class::Two) * p2;
        let term = p.ln();
        if !term.is_finite() {
            return Err(Error::NonFiniteLikelihood { subject: i });
        }
        total += term;
    }
    Ok(total)
}

/// Observed-data log-likelihood `sum_i log P(Y*_i = y*_i | X_i, Z_i)`.
pub fn observed_loglik(params: &ParameterSet, data: &ObservedDataset) -> Result<f64> {
    let grid = compute_probability_grid(params, data)?;
    observed_loglik_from_grid(&grid, data.ystar())
}

/// Complete-data log-likelihood given latent true classes.
pub fn complete_loglik(
    params: &ParameterSet,
    data: &ObservedDataset,
    y_true: &[Class],
) -> Result<f64> {
    if y_true.len() != data.n() {
        return Err(Error::DimensionMismatch {
            block: "y_true",
            expected: data.n(),
            got: y_true.len(),
        });
    }
    let grid = compute_probability_grid(params, data)?;
    let mut total = 0.0;
    for (i, (&j, &k)) in y_true.iter().zip(data.ystar()).enumerate() {
        let term = grid.pi[i][j.index()].ln() + grid.pistar(i, k, j).ln();
        if !term.is_finite() {
            return Err(Error::NonFiniteLikelihood { subject: i });
        }
        total += term;
    }
    Ok(total)
}

/// `w_ij = P(Y_i = j | Y*_i, X, Z)` from a probability grid.
pub(crate) fn posterior_weights_from_grid(grid: &ProbabilityGrid, ystar: &[Class]) -> Vec<[f64; 2]> {
    ystar
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let a = grid.pistar(i, k, Class::One) * grid.pi[i][0];
            let b = grid.pistar(i, k, Class::Two) * grid.pi[i][1];
            let w1 = a / (a + b);
            [w1, 1.0 - w1]
        })
        .collect()
}

/// Score blocks of the observed log-likelihood via Fisher's identity:
/// the gradient equals the complete-data score with `y_ij` replaced by `w_ij`.
pub(crate) fn score_blocks(
    grid: &ProbabilityGrid,
    weights: &[[f64; 2]],
    data: &ObservedDataset,
) -> [Vec<f64>; 3] {
    let n = data.n();
    let mut beta = vec![0.0; data.x_dim()];
    let mut g1 = vec![0.0; data.z_dim()];
    let mut g2 = vec![0.0; data.z_dim()];
    for i in 0..n {
        let y1 = if data.ystar()[i] == Class::One { 1.0 } else { 0.0 };
        let rb = weights[i][0] - grid.pi[i][0];
        let r1 = weights[i][0] * (y1 - grid.pistar_given1[i][0]);
        let r2 = weights[i][1] * (y1 - grid.pistar_given2[i][0]);
        for (c, b) in beta.iter_mut().enumerate() {
            *b += rb * data.x()[(i, c)];
        }
        for c in 0..data.z_dim() {
            let zc = data.z()[(i, c)];
            g1[c] += r1 * zc;
            g2[c] += r2 * zc;
        }
    }
    [beta, g1, g2]
}

/// Analytic gradient of [`observed_loglik`] in `beta, gamma1, gamma2` order.
pub fn observed_score(params: &ParameterSet, data: &ObservedDataset) -> Result<Vec<f64>> {
    let grid = compute_probability_grid(params, data)?;
    let w = posterior_weights_from_grid(&grid, data.ystar());
    Ok(score_blocks(&grid, &w, data).concat())
}

/// Subject-averaged correct-classification probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageClassificationRates {
    /// Mean of `P(Y*=1 | Y=1, Z_i)` over subjects.
    pub sens: f64,
    /// Mean of `P(Y*=2 | Y=2, Z_i)` over subjects.
    pub spec: f64,
}

impl AverageClassificationRates {
    pub fn from_grid(grid: &ProbabilityGrid) -> Self {
        let n = grid.n() as f64;
        Self {
            sens: grid.pistar_given1.iter().map(|r| r[0]).sum::<f64>() / n,
            spec: grid.pistar_given2.iter().map(|r| r[1]).sum::<f64>() / n,
        }
    }

    pub fn diagonally_dominant(&self) -> bool {
        self.sens > 0.5 && self.spec > 0.5
    }
}

pub fn average_classification_rates(
    params: &ParameterSet,
    data: &ObservedDataset,
) -> Result<AverageClassificationRates> {
    Ok(AverageClassificationRates::from_grid(
        &compute_probability_grid(params, data)?,
    ))
}

/// Mean of `P(Y_i = 1 | X_i)` over subjects.
pub fn mean_prevalence(params: &ParameterSet, data: &ObservedDataset) -> Result<f64> {
    params.check_against(data)?;
    let eta = linear_predictor(data.x(), &params.beta);
    Ok(eta.iter().map(|&e| logistic(e)).sum::<f64>() / data.n() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one_subject(y: Class, x: f64, z: f64) -> ObservedDataset {
        ObservedDataset::new(
            vec![y],
            DMatrix::from_element(1, 1, x),
            DMatrix::from_element(1, 1, z),
        )
        .unwrap()
    }

    fn toy(n: usize, seed: u64) -> ObservedDataset {
        // Deterministic pseudo-covariates; no RNG needed for algebraic checks.
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64)
        };
        let x = DMatrix::from_fn(n, 1, |_, _| next() * 4.0 - 2.0);
        let z = DMatrix::from_fn(n, 1, |_, _| next() * 3.0);
        let y = (0..n)
            .map(|_| if next() < 0.6 { Class::One } else { Class::Two })
            .collect();
        ObservedDataset::new(y, x, z).unwrap()
    }

    #[test]
    fn zero_beta_gives_half() {
        let d = toy(10, 1);
        let grid = compute_probability_grid(&ParameterSet::zeros(2, 2), &d).unwrap();
        assert!(grid.pi.iter().all(|r| r[0] == 0.5 && r[1] == 0.5));
    }

    #[test]
    fn grid_hand_values() {
        let d = one_subject(Class::One, 0.0, 0.5);
        let p = ParameterSet::new(vec![1.0, -2.0], vec![0.5, 1.0], vec![-0.5, -1.0]);
        let grid = compute_probability_grid(&p, &d).unwrap();
        assert_abs_diff_eq!(grid.pi[0][0], 0.731_058_578_630_004_9, epsilon = 1e-12);
        assert_abs_diff_eq!(grid.pistar_given1[0][0], 0.731_058_578_630_004_9, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_names_block() {
        let d = toy(5, 2);
        let p = ParameterSet::new(vec![0.0, 0.0], vec![0.0; 3], vec![0.0; 2]);
        match compute_probability_grid(&p, &d) {
            Err(Error::DimensionMismatch { block, .. }) => assert_eq!(block, "gamma1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uninformative_observation_mechanism() {
        let d = toy(20, 3);
        let p = ParameterSet::new(vec![0.3, -1.2], vec![0.0, 0.0], vec![0.0, 0.0]);
        for row in observed_probability(&p, &d).unwrap() {
            assert_abs_diff_eq!(row[0], 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn perfect_classification_collapses_to_pi() {
        let d = toy(20, 4);
        let p = ParameterSet::new(vec![0.3, -1.2], vec![40.0, 0.0], vec![-40.0, 0.0]);
        let grid = compute_probability_grid(&p, &d).unwrap();
        let obs = observed_probability(&p, &d).unwrap();
        for (o, pi) in obs.iter().zip(&grid.pi) {
            assert_abs_diff_eq!(o[0], pi[0], epsilon = 1e-11);
        }
    }

    fn grid_from_probs(pi1: f64, s11: f64, s12: f64) -> ProbabilityGrid {
        ProbabilityGrid {
            pi: vec![[pi1, 1.0 - pi1]],
            pistar_given1: vec![[s11, 1.0 - s11]],
            pistar_given2: vec![[s12, 1.0 - s12]],
        }
    }

    #[test]
    fn two_term_observed_probability_and_loglik() {
        let grid = grid_from_probs(0.7, 0.9, 0.2);
        let obs = observed_probability_from_grid(&grid);
        assert_abs_diff_eq!(obs[0][0], 0.69, epsilon = 1e-15);
        assert_abs_diff_eq!(obs[0][0] + obs[0][1], 1.0, epsilon = 1e-12);
        let ll = observed_loglik_from_grid(&grid, &[Class::One]).unwrap();
        assert_abs_diff_eq!(ll, -0.371_063_681_390_831_9, epsilon = 1e-12);
    }

    #[test]
    fn complete_loglik_single_subject() {
        // pi_1 = 0.7 -> beta_0 = logit(0.7); P(Y*=1|Y=1) = 0.9 -> gamma1_0 = logit(0.9).
        let d = ObservedDataset::from_designs(
            vec![Class::One],
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let p = ParameterSet::new(vec![logit(0.7)], vec![logit(0.9)], vec![0.0]);
        let ll = complete_loglik(&p, &d, &[Class::One]).unwrap();
        assert_abs_diff_eq!(ll, 0.7f64.ln() + 0.9f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ll, -0.462_035_459_596_559_7, epsilon = 1e-12);
    }

    #[test]
    fn uninformative_params_give_n_log_half() {
        let d = toy(37, 5);
        let ll = observed_loglik(&ParameterSet::zeros(2, 2), &d).unwrap();
        assert_abs_diff_eq!(ll, 37.0 * 0.5f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn perfect_classification_complete_loglik() {
        let d = toy(30, 6);
        let p = ParameterSet::new(vec![0.4, 1.1], vec![40.0, 0.0], vec![-40.0, 0.0]);
        let grid = compute_probability_grid(&p, &d).unwrap();
        let expected: f64 = d
            .ystar()
            .iter()
            .enumerate()
            .map(|(i, k)| grid.pi[i][k.index()].ln())
            .sum();
        let ll = complete_loglik(&p, &d, d.ystar()).unwrap();
        // log(1 - 1e-12) per subject remains from the clamp.
        assert_abs_diff_eq!(ll, expected, epsilon = 1e-9);
    }

    #[test]
    fn transpose_examples() {
        let p = ParameterSet::new(vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]);
        let t = p.transpose();
        assert_eq!(t.beta, vec![-1.0, -2.0]);
        assert_eq!(t.gamma1, vec![5.0, 6.0]);
        assert_eq!(t.gamma2, vec![3.0, 4.0]);
        assert_eq!(t.transpose(), p);
        let z = ParameterSet::zeros(2, 2);
        assert_eq!(z.transpose().flatten(), z.flatten());
    }

    #[test]
    fn csv_style_names() {
        let d = toy(8, 7);
        let names = d.coefficient_names().all();
        assert_eq!(
            names,
            vec!["beta_0", "beta_x1", "gamma_110", "gamma_11z1", "gamma_120", "gamma_12z1"]
        );
    }

    #[test]
    fn rejects_missing_intercept() {
        let x = DMatrix::from_element(3, 2, 2.0);
        let z = DMatrix::from_element(3, 1, 1.0);
        assert!(ObservedDataset::from_designs(vec![Class::One; 3], x, z).is_err());
    }

    #[test]
    fn identifiability_patterns() {
        assert!(toy(50, 8).is_identifiable());
        let d = ObservedDataset::new(
            vec![Class::One; 10],
            DMatrix::from_element(10, 1, 0.5),
            DMatrix::from_element(10, 1, 0.5),
        )
        .unwrap();
        assert_eq!(d.distinct_covariate_patterns(), 1);
        assert!(!d.is_identifiable());
    }

    fn coef() -> impl Strategy<Value = f64> {
        -4.0f64..4.0
    }

    fn params() -> impl Strategy<Value = ParameterSet> {
        (coef(), coef(), coef(), coef(), coef(), coef())
            .prop_map(|(a, b, c, d, e, f)| ParameterSet::new(vec![a, b], vec![c, d], vec![e, f]))
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(p in params(), seed in 0u64..1000) {
            let d = toy(25, seed);
            let grid = compute_probability_grid(&p, &d).unwrap();
            for m in [&grid.pi, &grid.pistar_given1, &grid.pistar_given2] {
                for r in m.iter() {
                    prop_assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
                    prop_assert!(r[0] > 0.0 && r[0] < 1.0);
                }
            }
            for r in observed_probability(&p, &d).unwrap() {
                prop_assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn mode_duality(p in params(), seed in 0u64..1000) {
            let d = toy(40, seed);
            let a = observed_loglik(&p, &d).unwrap();
            let b = observed_loglik(&p.transpose(), &d).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }

        #[test]
        fn complete_relabel_invariance(p in params(), seed in 0u64..1000) {
            let d = toy(40, seed);
            let y: Vec<Class> = d.ystar().iter().enumerate()
                .map(|(i, &k)| if i % 3 == 0 { k.flipped() } else { k }).collect();
            let relabeled: Vec<Class> = y.iter().map(|c| c.flipped()).collect();
            let a = complete_loglik(&p, &d, &y).unwrap();
            let b = complete_loglik(&p.transpose(), &d, &relabeled).unwrap();
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }

        #[test]
        fn transpose_is_involution(p in params()) {
            prop_assert_eq!(p.transpose().transpose(), p);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        // Independent check: central differences of the log-likelihood itself.
        let d = toy(60, 9);
        let mut s = 12345u64;
        for _ in 0..20 {
            let flat: Vec<f64> = (0..6)
                .map(|_| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
                })
                .collect();
            let p = ParameterSet::from_flat(&flat, 2, 2).unwrap();
            let g = observed_score(&p, &d).unwrap();
            let h = 1e-5;
            let fd: Vec<f64> = (0..6)
                .map(|c| {
                    let mut up = flat.clone();
                    let mut dn = flat.clone();
                    up[c] += h;
                    dn[c] -= h;
                    let fu = observed_loglik(&ParameterSet::from_flat(&up, 2, 2).unwrap(), &d).unwrap();
                    let fdn = observed_loglik(&ParameterSet::from_flat(&dn, 2, 2).unwrap(), &d).unwrap();
                    (fu - fdn) / (2.0 * h)
                })
                .collect();
            let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
            assert!(num / den < 1e-4, "relative error {}", num / den);
        }
    }
}
