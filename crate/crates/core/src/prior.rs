//! Prior families for the Bayesian fit.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, Laplace, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::model::{CoefficientNames, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum Prior {
    Uniform { lower: f64, upper: f64 },
    Normal { location: f64, scale: f64 },
    DoubleExponential { location: f64, scale: f64 },
    T { location: f64, scale: f64, df: f64 },
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("prior {self}: {msg}")));
        match *self {
            Prior::Uniform { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return bad("lower must be below upper");
                }
            }
            Prior::Normal { location, scale } | Prior::DoubleExponential { location, scale } => {
                if !location.is_finite() || !(scale > 0.0 && scale.is_finite()) {
                    return bad("scale must be positive");
                }
            }
            Prior::T { location, scale, df } => {
                if !location.is_finite() || !(scale > 0.0 && scale.is_finite()) {
                    return bad("scale must be positive");
                }
                if !(df > 0.0 && df.is_finite()) {
                    return bad("df must be positive");
                }
            }
        }
        Ok(())
    }

    /// Log density at `x`; `-inf` outside a uniform's support.
    pub fn ln_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Uniform { lower, upper } => {
                if (lower..=upper).contains(&x) {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::Normal { location, scale } => Normal::new(location, scale)
                .map(|d| d.ln_pdf(x))
                .unwrap_or(f64::NAN),
            Prior::DoubleExponential { location, scale } => Laplace::new(location, scale)
                .map(|d| d.ln_pdf(x))
                .unwrap_or(f64::NAN),
            Prior::T { location, scale, df } => StudentsT::new(location, scale, df)
                .map(|d| d.ln_pdf(x))
                .unwrap_or(f64::NAN),
        }
    }

    /// Support bounds, if the prior has any.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Prior::Uniform { lower, upper } => Some((lower, upper)),
            _ => None,
        }
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Uniform { lower, upper } => write!(f, "uniform:{lower}:{upper}"),
            Prior::Normal { location, scale } => write!(f, "normal:{location}:{scale}"),
            Prior::DoubleExponential { location, scale } => {
                write!(f, "double-exponential:{location}:{scale}")
            }
            Prior::T { location, scale, df } => write!(f, "t:{location}:{scale}:{df}"),
        }
    }
}

/// Parses `uniform:L:U`, `normal:LOC:SCALE`, `double-exponential:LOC:SCALE`
/// (alias `laplace`) and `t:LOC:SCALE:DF`.
impl FromStr for Prior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let nums: std::result::Result<Vec<f64>, _> = parts[1..].iter().map(|p| p.trim().parse::<f64>()).collect();
        let nums = nums.map_err(|_| Error::InvalidConfig(format!("prior `{s}`: non-numeric hyperparameter")))?;
        let prior = match (parts[0].trim(), nums.as_slice()) {
            ("uniform", &[lower, upper]) => Prior::Uniform { lower, upper },
            ("normal", &[location, scale]) => Prior::Normal { location, scale },
            ("double-exponential" | "laplace", &[location, scale]) => {
                Prior::DoubleExponential { location, scale }
            }
            ("t", &[location, scale, df]) => Prior::T { location, scale, df },
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "prior `{s}`: expected uniform:L:U, normal:LOC:SCALE, double-exponential:LOC:SCALE or t:LOC:SCALE:DF"
                )))
            }
        };
        prior.validate()?;
        Ok(prior)
    }
}

/// A prior for every coefficient: one family by default with optional
/// per-coefficient overrides keyed by coefficient name (e.g. `gamma_12z1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub default: Prior,
    #[serde(default)]
    pub overrides: BTreeMap<String, Prior>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::uniform(-10.0, 10.0)
    }
}

impl PriorSpec {
    pub fn uniform(lower: f64, upper: f64) -> Self {
        Self {
            default: Prior::Uniform { lower, upper },
            overrides: BTreeMap::new(),
        }
    }

    pub fn all(prior: Prior) -> Self {
        Self {
            default: prior,
            overrides: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.default.validate()?;
        self.overrides.values().try_for_each(Prior::validate)
    }

    pub fn prior_for(&self, name: &str) -> Prior {
        self.overrides.get(name).copied().unwrap_or(self.default)
    }

    /// Priors in `beta, gamma1, gamma2` order.
    pub fn resolve(&self, names: &CoefficientNames) -> Vec<Prior> {
        names.all().iter().map(|n| self.prior_for(n)).collect()
    }
}

/// Default names for positional coefficients: covariates `x1..`, `z1..`.
fn positional_names(params: &ParameterSet) -> CoefficientNames {
    let beta = (0..params.beta.len())
        .map(|c| if c == 0 { "beta_0".to_string() } else { format!("beta_x{c}") })
        .collect();
    let gamma = |j: u8, len: usize| {
        (0..len)
            .map(|c| if c == 0 { format!("gamma_1{j}0") } else { format!("gamma_1{j}z{c}") })
            .collect()
    };
    CoefficientNames {
        beta,
        gamma1: gamma(1, params.gamma1.len()),
        gamma2: gamma(2, params.gamma2.len()),
    }
}

/// Sum of per-coefficient log densities.
pub fn log_prior(params: &ParameterSet, prior: &PriorSpec) -> f64 {
    let priors = prior.resolve(&positional_names(params));
    params
        .flatten()
        .iter()
        .zip(&priors)
        .map(|(&v, p)| p.ln_density(v))
        .sum()
}
