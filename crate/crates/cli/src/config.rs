//! Scenario files.
//!
//! A TOML file mirrors [`ScenarioConfig`] field names. It may name a
//! `preset` to start from; every other key overrides the preset. Priors are
//! written as strings (`default = "uniform:-10:10"`, with optional
//! `[prior.overrides]`). Errors carry the line of the offending value.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use misclass_core::em::EmConfig;
use misclass_core::{McmcConfig, Method, Prior, PriorSpec, ScenarioConfig};
use serde::Deserialize;
use toml::Spanned;

#[derive(Debug)]
pub struct ConfigError {
    pub path: String,
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        write!(f, ": ")?;
        if let Some(field) = &self.field {
            write!(f, "field `{field}`: ")?;
        }
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrior {
    default: Option<Spanned<String>>,
    #[serde(default)]
    overrides: BTreeMap<String, Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    preset: Option<Spanned<String>>,
    name: Option<String>,
    n_realizations: Option<Spanned<i64>>,
    n: Option<Spanned<i64>>,
    x_mean: Option<Spanned<f64>>,
    z_mean: Option<Spanned<f64>>,
    covariance: Option<Spanned<f64>>,
    beta_true: Option<Spanned<Vec<f64>>>,
    gamma1_true: Option<Spanned<Vec<f64>>>,
    gamma2_true: Option<Spanned<Vec<f64>>>,
    estimators: Option<Spanned<Vec<String>>>,
    seed: Option<Spanned<i64>>,
    prior: Option<RawPrior>,
    em: Option<Spanned<EmConfig>>,
    mcmc: Option<Spanned<McmcConfig>>,
}

struct Locator<'a> {
    path: &'a str,
    src: &'a str,
}

impl Locator<'_> {
    fn line_of(&self, span: Range<usize>) -> usize {
        self.src[..span.start.min(self.src.len())].matches('\n').count() + 1
    }

    fn err(&self, span: Option<Range<usize>>, field: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.to_string(),
            line: span.map(|s| self.line_of(s)),
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    fn count(&self, v: &Spanned<i64>, field: &str, min: i64) -> Result<usize, ConfigError> {
        let value = *v.get_ref();
        if value < min {
            let bound = if min == 0 { "non-negative" } else { "positive" };
            return Err(self.err(Some(v.span()), field, format!("must be {bound}, got {value}")));
        }
        Ok(value as usize)
    }
}

/// Parses a scenario file.
pub fn parse_scenario(path: &str, src: &str) -> Result<ScenarioConfig, ConfigError> {
    let loc = Locator { path, src };
    let raw: RawScenario = toml::from_str(src).map_err(|e| {
        let message = e.message().to_string();
        ConfigError {
            path: path.to_string(),
            line: e.span().map(|s| loc.line_of(s)),
            field: None,
            message,
        }
    })?;

    let mut sc = match &raw.preset {
        None => ScenarioConfig::setting1(),
        Some(p) => ScenarioConfig::from_preset(p.get_ref()).ok_or_else(|| {
            loc.err(Some(p.span()), "preset", format!("unknown preset `{}` (expected setting1, setting2 or setting3)", p.get_ref()))
        })?,
    };
    if let Some(name) = raw.name {
        sc.name = name;
    } else if raw.preset.is_none() {
        sc.name = "custom".into();
    }
    if let Some(v) = &raw.n_realizations {
        sc.n_realizations = loc.count(v, "n_realizations", 1)?;
    }
    if let Some(v) = &raw.n {
        sc.n = loc.count(v, "n", 1)?;
    }
    if let Some(v) = &raw.seed {
        sc.seed = loc.count(v, "seed", 0)? as u64;
    }
    for (field, value, slot) in [
        ("x_mean", &raw.x_mean, &mut sc.x_mean),
        ("z_mean", &raw.z_mean, &mut sc.z_mean),
    ] {
        if let Some(v) = value {
            if !v.get_ref().is_finite() {
                return Err(loc.err(Some(v.span()), field, "must be finite"));
            }
            *slot = *v.get_ref();
        }
    }
    if let Some(v) = &raw.covariance {
        if !(v.get_ref().abs() < 1.0) {
            return Err(loc.err(Some(v.span()), "covariance", "must lie strictly between -1 and 1"));
        }
        sc.covariance = *v.get_ref();
    }
    for (field, value, slot) in [
        ("beta_true", &raw.beta_true, &mut sc.beta_true),
        ("gamma1_true", &raw.gamma1_true, &mut sc.gamma1_true),
        ("gamma2_true", &raw.gamma2_true, &mut sc.gamma2_true),
    ] {
        if let Some(v) = value {
            if v.get_ref().len() != 2 || v.get_ref().iter().any(|c| !c.is_finite()) {
                return Err(loc.err(Some(v.span()), field, "must be two finite numbers [intercept, slope]"));
            }
            *slot = v.get_ref().clone();
        }
    }
    if let Some(v) = &raw.estimators {
        let methods = v
            .get_ref()
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|m| loc.err(Some(v.span()), "estimators", m))?;
        if methods.is_empty() {
            return Err(loc.err(Some(v.span()), "estimators", "must not be empty"));
        }
        sc.estimators = methods;
    }
    if let Some(p) = raw.prior {
        let parse = |field: &str, s: &Spanned<String>| -> Result<Prior, ConfigError> {
            s.get_ref()
                .parse::<Prior>()
                .map_err(|e| loc.err(Some(s.span()), field, e.to_string()))
        };
        let mut spec = PriorSpec::default();
        if let Some(d) = &p.default {
            spec.default = parse("prior.default", d)?;
        }
        for (name, s) in &p.overrides {
            spec.overrides.insert(name.clone(), parse(&format!("prior.overrides.{name}"), s)?);
        }
        sc.prior = spec;
    }
    if let Some(em) = raw.em {
        em.get_ref()
            .validate()
            .map_err(|e| loc.err(Some(em.span()), "em", e.to_string()))?;
        sc.em = em.into_inner();
    }
    if let Some(mcmc) = raw.mcmc {
        mcmc.get_ref()
            .validate()
            .map_err(|e| loc.err(Some(mcmc.span()), "mcmc", e.to_string()))?;
        sc.mcmc = mcmc.into_inner();
    }
    sc.validate().map_err(|e| ConfigError {
        path: path.to_string(),
        line: None,
        field: None,
        message: e.to_string(),
    })?;
    Ok(sc)
}
