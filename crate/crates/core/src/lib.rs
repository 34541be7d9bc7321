//! Logistic regression with a misclassified binary outcome.
//!
//! A latent true class `Y` follows a logistic model in covariates `X`; the
//! observed class `Y*` depends on `Y` through a second pair of logistic
//! models in covariates `Z`. The crate estimates both mechanisms by EM or by
//! MCMC, resolves the label-switching ambiguity between the two likelihood
//! modes, and provides comparator estimators and a simulation harness.

pub mod baselines;
pub mod em;
pub mod error;
pub mod fit;
pub mod glm;
pub mod io;
pub mod label_switch;
pub mod mcmc;
pub mod model;
pub mod prior;
pub mod rng;
pub mod sim;

pub use baselines::{fit_baseline, fit_naive, fit_one_directional_em, BaselineKind, FixedDirection};
pub use em::{e_step, estimate_covariance, fit_em, m_step, EmConfig, InitStrategy, PosteriorWeights};
pub use error::{Error, Result};
pub use fit::{FitResult, Method, FIT_SCHEMA_VERSION};
pub use glm::{fit_weighted_logistic, LogitSolution, WeightedLogitProblem};
pub use io::{read_dataset, write_dataset, LoadedDataset};
pub use label_switch::{correct_label_switching, CorrectionReport};
pub use mcmc::{fit_mcmc, sample_posterior, summarize_posterior, ChainInit, McmcConfig, PosteriorSample};
pub use model::{
    average_classification_rates, compute_probability_grid, mean_prevalence, observed_loglik,
    observed_probability, observed_score, AverageClassificationRates, Class, CoefficientNames,
    ObservedDataset, ParameterSet, ProbabilityGrid,
};
pub use prior::{log_prior, Prior, PriorSpec};
pub use sim::{generate_dataset, run_study, GeneratedDataset, ScenarioConfig, StudyReport};
