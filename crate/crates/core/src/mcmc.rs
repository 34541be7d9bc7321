//! Bayesian fit by Metropolis-within-Gibbs with data augmentation.
//!
//! Each sweep draws the latent true class of every subject from its
//! posterior class probabilities, then updates the `beta`, `gamma1` and
//! `gamma2` blocks with Gaussian random-walk proposals against their
//! complete-data conditionals. Proposal covariances are shaped by the block's
//! conditional information and scaled toward 0.35 acceptance during burn-in,
//! then frozen.
//!
//! Chains can settle in either likelihood mode. After sampling, each chain's
//! mean parameters decide its orientation and the whole chain is transposed
//! if needed.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{invert_information, naive_start};
use crate::error::{Error, Result};
use crate::fit::{FitResult, Method};
use crate::label_switch::{correct_label_switching, CorrectionReport};
use crate::model::{
    average_classification_rates, clamp_prob, mean_prevalence, observed_loglik, Class,
    CoefficientNames, ObservedDataset, ParameterSet,
};
use crate::prior::{Prior, PriorSpec};
use crate::rng::{stream, stream_rng, StreamRng};

const TARGET_ACCEPTANCE: f64 = 0.35;
const ACCEPTANCE_WARN_LOW: f64 = 0.05;
const ACCEPTANCE_WARN_HIGH: f64 = 0.7;
const RHAT_LIMIT: f64 = 1.1;
const INIT_JITTER: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "strategy")]
pub enum ChainInit {
    /// The EM naive start plus a small per-chain jitter.
    NaiveStart,
    /// Exact starting points, reused cyclically across chains.
    Given { params: Vec<ParameterSet> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub chains: usize,
    /// Total iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Burn-in iterations between proposal adaptations.
    pub adapt_window: usize,
    pub init: ChainInit,
    /// Hold both gamma blocks at their starting values (known observation
    /// mechanism). No label correction is applied in this mode.
    pub fix_observation: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            iterations: 8000,
            burn_in: 3000,
            thin: 1,
            seed: 0,
            adapt_window: 50,
            init: ChainInit::NaiveStart,
            fix_observation: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidConfig("mcmc.chains must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig("mcmc.burn_in must be below mcmc.iterations".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("mcmc.thin must be at least 1".into()));
        }
        if self.adapt_window == 0 {
            return Err(Error::InvalidConfig("mcmc.adapt_window must be at least 1".into()));
        }
        if (self.iterations - self.burn_in) / self.thin < 4 {
            return Err(Error::InvalidConfig("mcmc keeps fewer than 4 draws per chain".into()));
        }
        if let ChainInit::Given { params } = &self.init {
            if params.is_empty() {
                return Err(Error::InvalidConfig("mcmc.init.params is empty".into()));
            }
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Post-burn-in acceptance rate of each block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockAcceptance {
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainDraws {
    /// Iteration index (0-based, burn-in included) of each kept draw.
    pub iterations: Vec<usize>,
    /// Kept draws in `beta, gamma1, gamma2` order, after correction.
    pub draws: Vec<Vec<f64>>,
    pub acceptance: BlockAcceptance,
    pub correction: Option<CorrectionReport>,
}

/// Sampler diagnostics embedded in the fit result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    pub chains: usize,
    pub draws_per_chain: usize,
    pub acceptance: Vec<BlockAcceptance>,
    pub chain_corrections: Vec<Option<CorrectionReport>>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub not_converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSample {
    pub names: CoefficientNames,
    pub x_dim: usize,
    pub z_dim: usize,
    pub iterations: usize,
    pub chains: Vec<ChainDraws>,
    /// Split R-hat per coefficient.
    pub rhat: Vec<f64>,
    /// Effective sample size per coefficient.
    pub ess: Vec<f64>,
    pub not_converged: bool,
    pub warnings: Vec<String>,
}

impl PosteriorSample {
    pub fn dim(&self) -> usize {
        self.names.all().len()
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    /// Pooled draws of one coefficient.
    pub fn coefficient(&self, idx: usize) -> Vec<f64> {
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter().map(move |d| d[idx]))
            .collect()
    }

    pub fn chain_mean(&self, chain: usize) -> Vec<f64> {
        mean_of(&self.chains[chain].draws)
    }

    /// One row per kept draw: `iteration` followed by every coefficient.
    pub fn write_chain_csv<W: Write>(&self, chain: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iteration".to_string()];
        header.extend(self.names.all());
        w.write_record(&header)?;
        let c = &self.chains[chain];
        for (it, draw) in c.iterations.iter().zip(&c.draws) {
            let mut row = vec![it.to_string()];
            row.extend(draw.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn diagnostics(&self) -> McmcDiagnostics {
        McmcDiagnostics {
            chains: self.chains.len(),
            draws_per_chain: self.chains.first().map_or(0, |c| c.draws.len()),
            acceptance: self.chains.iter().map(|c| c.acceptance).collect(),
            chain_corrections: self.chains.iter().map(|c| c.correction).collect(),
            rhat: self.rhat.clone(),
            ess: self.ess.clone(),
            not_converged: self.not_converged,
            warnings: self.warnings.clone(),
        }
    }
}

fn mean_of(draws: &[Vec<f64>]) -> Vec<f64> {
    let d = draws.first().map_or(0, Vec::len);
    let mut m = vec![0.0; d];
    for draw in draws {
        for (a, b) in m.iter_mut().zip(draw) {
            *a += b;
        }
    }
    let n = draws.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BlockKind {
    Beta,
    Gamma(Class),
}

/// One coefficient block together with per-subject caches at its current
/// value.
struct Block<'a> {
    kind: BlockKind,
    design: &'a DMatrix<f64>,
    coef: DVector<f64>,
    priors: Vec<Prior>,
    log_prior: f64,
    eta: DVector<f64>,
    prob: Vec<f64>,
    softplus: Vec<f64>,
    eta_prop: DVector<f64>,
    prob_prop: Vec<f64>,
    softplus_prop: Vec<f64>,
    /// Lower Cholesky factor of the proposal shape.
    shape: DMatrix<f64>,
    log_scale: f64,
    rounds: usize,
    window: (usize, usize),
    kept: (usize, usize),
}

#[inline]
fn logistic_and_softplus(e: f64) -> (f64, f64) {
    let a = (-e.abs()).exp();
    let sp = e.max(0.0) + a.ln_1p();
    let p = if e >= 0.0 { 1.0 / (1.0 + a) } else { a / (1.0 + a) };
    (clamp_prob(p), sp)
}

impl<'a> Block<'a> {
    fn new(kind: BlockKind, design: &'a DMatrix<f64>, coef: &[f64], priors: Vec<Prior>) -> Self {
        let n = design.nrows();
        let coef = DVector::from_column_slice(coef);
        let log_prior = coef.iter().zip(&priors).map(|(&v, p)| p.ln_density(v)).sum();
        let eta = design * &coef;
        let (prob, softplus) = eta.iter().map(|&e| logistic_and_softplus(e)).unzip();
        let d = coef.len();
        Self {
            kind,
            design,
            coef,
            priors,
            log_prior,
            eta,
            prob,
            softplus,
            eta_prop: DVector::zeros(n),
            prob_prop: vec![0.0; n],
            softplus_prop: vec![0.0; n],
            shape: DMatrix::identity(d, d),
            log_scale: 0.0,
            rounds: 0,
            window: (0, 0),
            kept: (0, 0),
        }
    }

    #[inline]
    fn member(&self, latent: Class) -> bool {
        match self.kind {
            BlockKind::Beta => true,
            BlockKind::Gamma(j) => latent == j,
        }
    }

    #[inline]
    fn response(&self, latent: Class, ystar: Class) -> bool {
        match self.kind {
            BlockKind::Beta => latent == Class::One,
            BlockKind::Gamma(_) => ystar == Class::One,
        }
    }

    /// Conditional information of the block given the latent classes.
    fn information(&self, latent: &[Class]) -> DMatrix<f64> {
        let d = self.coef.len();
        let mut info = DMatrix::zeros(d, d);
        for (i, &l) in latent.iter().enumerate() {
            if !self.member(l) {
                continue;
            }
            let p = self.prob[i];
            let c = p * (1.0 - p);
            for a in 0..d {
                let ca = c * self.design[(i, a)];
                for b in 0..=a {
                    info[(a, b)] += ca * self.design[(i, b)];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        info
    }

    fn reshape(&mut self, latent: &[Class]) {
        let d = self.coef.len();
        let mut info = self.information(latent);
        // A block with no members still needs a usable proposal.
        for a in 0..d {
            info[(a, a)] += 1e-8;
        }
        let cov = invert_information(info).matrix;
        self.shape = cov
            .cholesky()
            .map(|c| c.l())
            .unwrap_or_else(|| DMatrix::identity(d, d));
    }

    fn adapt(&mut self, latent: &[Class]) {
        let (acc, prop) = self.window;
        if prop > 0 {
            self.rounds += 1;
            let rate = acc as f64 / prop as f64;
            self.log_scale += (rate - TARGET_ACCEPTANCE) / (self.rounds as f64).sqrt();
        }
        self.window = (0, 0);
        self.reshape(latent);
    }

    fn update(&mut self, rng: &mut StreamRng, latent: &[Class], ystar: &[Class], counting: bool) {
        let d = self.coef.len();
        let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale = self.log_scale.exp() * 2.38 / (d as f64).sqrt();
        let proposal = &self.coef + (&self.shape * eps) * scale;
        let prop_prior: f64 = proposal
            .iter()
            .zip(&self.priors)
            .map(|(&v, p)| p.ln_density(v))
            .sum();
        let u: f64 = rng.random();

        let mut accepted = false;
        if prop_prior.is_finite() {
            self.eta_prop.gemv(1.0, self.design, &proposal, 0.0);
            let mut ll_prop = 0.0;
            let mut ll_cur = 0.0;
            for (i, (&l, &k)) in latent.iter().zip(ystar).enumerate() {
                if !self.member(l) {
                    continue;
                }
                let e = self.eta_prop[i];
                let (p, sp) = logistic_and_softplus(e);
                self.prob_prop[i] = p;
                self.softplus_prop[i] = sp;
                if self.response(l, k) {
                    ll_prop += e;
                    ll_cur += self.eta[i];
                }
                ll_prop -= sp;
                ll_cur -= self.softplus[i];
            }
            let log_ratio = ll_prop + prop_prior - ll_cur - self.log_prior;
            if u.ln() < log_ratio {
                accepted = true;
                for (i, &l) in latent.iter().enumerate() {
                    if !self.member(l) {
                        let (p, sp) = logistic_and_softplus(self.eta_prop[i]);
                        self.prob_prop[i] = p;
                        self.softplus_prop[i] = sp;
                    }
                }
                self.coef = proposal;
                self.log_prior = prop_prior;
                std::mem::swap(&mut self.eta, &mut self.eta_prop);
                std::mem::swap(&mut self.prob, &mut self.prob_prop);
                std::mem::swap(&mut self.softplus, &mut self.softplus_prop);
            }
        }
        self.window.1 += 1;
        self.window.0 += accepted as usize;
        if counting {
            self.kept.1 += 1;
            self.kept.0 += accepted as usize;
        }
    }

    fn acceptance(&self) -> f64 {
        if self.kept.1 == 0 {
            0.0
        } else {
            self.kept.0 as f64 / self.kept.1 as f64
        }
    }
}

fn draw_latent(
    rng: &mut StreamRng,
    latent: &mut [Class],
    ystar: &[Class],
    pi1: &[f64],
    g1: &[f64],
    g2: &[f64],
) {
    for (i, (l, &k)) in latent.iter_mut().zip(ystar).enumerate() {
        let (o1, o2) = match k {
            Class::One => (g1[i], g2[i]),
            Class::Two => (1.0 - g1[i], 1.0 - g2[i]),
        };
        let a = o1 * pi1[i];
        let b = o2 * (1.0 - pi1[i]);
        let u: f64 = rng.random();
        *l = if u * (a + b) < a { Class::One } else { Class::Two };
    }
}

struct RawChain {
    iterations: Vec<usize>,
    draws: Vec<Vec<f64>>,
    acceptance: BlockAcceptance,
}

fn chain_start(
    data: &ObservedDataset,
    config: &McmcConfig,
    priors: &[Prior],
    chain: usize,
    rng: &mut StreamRng,
) -> Result<ParameterSet> {
    let start = match &config.init {
        ChainInit::Given { params } => params[chain % params.len()].clone(),
        ChainInit::NaiveStart => {
            let base = naive_start(data)?;
            let mut flat = base.flatten();
            let jitter_gamma = !config.fix_observation;
            for (c, v) in flat.iter_mut().enumerate() {
                if c < data.x_dim() || jitter_gamma {
                    *v += rng.random_range(-INIT_JITTER..INIT_JITTER);
                }
                if let Some((lo, hi)) = priors[c].bounds() {
                    let margin = 1e-6 * (hi - lo);
                    *v = v.clamp(lo + margin, hi - margin);
                }
            }
            ParameterSet::from_flat(&flat, data.x_dim(), data.z_dim())?
        }
    };
    start.check_against(data)?;
    let lp: f64 = start
        .flatten()
        .iter()
        .zip(priors)
        .map(|(&v, p)| p.ln_density(v))
        .sum();
    if !lp.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "chain {chain} starts outside the prior support"
        )));
    }
    Ok(start)
}

fn run_chain(
    data: &ObservedDataset,
    priors: &[Prior],
    config: &McmcConfig,
    chain: usize,
) -> Result<RawChain> {
    let mut rng = stream_rng(config.seed, chain as u64, stream::MCMC_CHAIN);
    let start = chain_start(data, config, priors, chain, &mut rng)?;
    let (xd, zd) = (data.x_dim(), data.z_dim());
    let mut beta = Block::new(BlockKind::Beta, data.x(), &start.beta, priors[..xd].to_vec());
    let mut g1 = Block::new(
        BlockKind::Gamma(Class::One),
        data.z(),
        &start.gamma1,
        priors[xd..xd + zd].to_vec(),
    );
    let mut g2 = Block::new(
        BlockKind::Gamma(Class::Two),
        data.z(),
        &start.gamma2,
        priors[xd + zd..].to_vec(),
    );

    let ystar = data.ystar();
    let mut latent = vec![Class::One; data.n()];
    draw_latent(&mut rng, &mut latent, ystar, &beta.prob, &g1.prob, &g2.prob);
    beta.reshape(&latent);
    if !config.fix_observation {
        g1.reshape(&latent);
        g2.reshape(&latent);
    }

    let keep = config.draws_per_chain();
    let mut iterations = Vec::with_capacity(keep);
    let mut draws = Vec::with_capacity(keep);
    for t in 0..config.iterations {
        draw_latent(&mut rng, &mut latent, ystar, &beta.prob, &g1.prob, &g2.prob);
        let counting = t >= config.burn_in;
        beta.update(&mut rng, &latent, ystar, counting);
        if !config.fix_observation {
            g1.update(&mut rng, &latent, ystar, counting);
            g2.update(&mut rng, &latent, ystar, counting);
        }
        if t < config.burn_in && (t + 1) % config.adapt_window == 0 {
            beta.adapt(&latent);
            if !config.fix_observation {
                g1.adapt(&latent);
                g2.adapt(&latent);
            }
        }
        if counting && (t - config.burn_in + 1) % config.thin == 0 && draws.len() < keep {
            let mut draw = Vec::with_capacity(xd + 2 * zd);
            draw.extend(beta.coef.iter());
            draw.extend(g1.coef.iter());
            draw.extend(g2.coef.iter());
            draws.push(draw);
            iterations.push(t);
        }
    }

    Ok(RawChain {
        iterations,
        draws,
        acceptance: BlockAcceptance {
            beta: beta.acceptance(),
            gamma1: if config.fix_observation { f64::NAN } else { g1.acceptance() },
            gamma2: if config.fix_observation { f64::NAN } else { g2.acceptance() },
        },
    })
}

/// Draws from the posterior of both mechanisms.
pub fn sample_posterior(
    data: &ObservedDataset,
    prior: &PriorSpec,
    config: &McmcConfig,
) -> Result<PosteriorSample> {
    config.validate()?;
    prior.validate()?;
    let names = data.coefficient_names();
    let priors = prior.resolve(&names);
    let (xd, zd) = (data.x_dim(), data.z_dim());

    let raw: Vec<Result<RawChain>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(data, &priors, config, c))
        .collect();

    let mut warnings = Vec::new();
    let mut chains = Vec::with_capacity(config.chains);
    for (c, r) in raw.into_iter().enumerate() {
        let RawChain {
            iterations,
            mut draws,
            acceptance,
        } = r?;
        let correction = if config.fix_observation {
            None
        } else {
            let mean = ParameterSet::from_flat(&mean_of(&draws), xd, zd)?;
            let (_, report) = correct_label_switching(&mean, data)?;
            if report.flipped {
                for d in draws.iter_mut() {
                    let t = ParameterSet::from_flat(d, xd, zd)?.transpose();
                    *d = t.flatten();
                }
            }
            if report.ambiguous {
                warnings.push(format!("chain {c}: label orientation is ambiguous"));
            }
            Some(report)
        };
        let rates = [
            ("beta", acceptance.beta),
            ("gamma1", acceptance.gamma1),
            ("gamma2", acceptance.gamma2),
        ];
        for (block, rate) in rates {
            if rate.is_finite() && !(ACCEPTANCE_WARN_LOW..=ACCEPTANCE_WARN_HIGH).contains(&rate) {
                warnings.push(format!("chain {c}: {block} acceptance rate {rate:.3} outside [0.05, 0.7]"));
            }
        }
        chains.push(ChainDraws {
            iterations,
            draws,
            acceptance,
            correction,
        });
    }

    let d = xd + 2 * zd;
    let per_coef: Vec<Vec<Vec<f64>>> = (0..d)
        .map(|k| {
            chains
                .iter()
                .map(|c| c.draws.iter().map(|v| v[k]).collect())
                .collect()
        })
        .collect();
    let rhat: Vec<f64> = per_coef.iter().map(|c| split_rhat(c)).collect();
    let ess: Vec<f64> = per_coef.iter().map(|c| effective_sample_size(c)).collect();
    let not_converged = rhat.iter().any(|r| *r > RHAT_LIMIT);
    if not_converged {
        warnings.push(format!("split R-hat above {RHAT_LIMIT} for at least one coefficient"));
    }

    Ok(PosteriorSample {
        names,
        x_dim: xd,
        z_dim: zd,
        iterations: config.iterations,
        chains,
        rhat,
        ess,
        not_converged,
        warnings,
    })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Split R-hat. Chains are halved; constant coefficients report 1.
///
/// Values below 1 are sampling noise and are reported as 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            return f64::NAN;
        }
        halves.push(&c[..h]);
        halves.push(&c[c.len() - h..]);
    }
    let len = halves[0].len() as f64;
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| mean_var(h)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let (_, var_means) = mean_var(&means);
    let b = len * var_means;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (len - 1.0) / len * w + b / len;
    (var_plus / w).sqrt().max(1.0)
}

/// Multi-chain effective sample size with Geyer's initial positive sequence.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return f64::NAN;
    }
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(&c[..n])).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    let total = (m * n) as f64;
    if w <= 0.0 {
        return total;
    }
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let b_over_n = if m > 1 { mean_var(&means).1 } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;

    let autocov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&stats)
            .map(|(c, (mean, _))| {
                (0..n - lag)
                    .map(|t| (c[t] - mean) * (c[t + lag] - mean))
                    .sum::<f64>()
                    / n as f64
            })
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| 1.0 - (w - autocov(lag)) / var_plus;

    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    total / tau.max(1.0 / total.ln().max(1.0))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Posterior means as estimates, posterior SDs as standard errors, and
/// classification rates at the posterior mean.
pub fn summarize_posterior(sample: &PosteriorSample, data: &ObservedDataset) -> Result<FitResult> {
    if sample.total_draws() == 0 {
        return Err(Error::InvalidConfig("posterior sample is empty".into()));
    }
    let d = sample.dim();
    let pooled: Vec<Vec<f64>> = (0..d).map(|k| sample.coefficient(k)).collect();
    let stats: Vec<(f64, f64)> = pooled.iter().map(|c| mean_var(c)).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let sds: Vec<f64> = stats.iter().map(|s| s.1.sqrt()).collect();
    let medians: Vec<f64> = pooled
        .iter()
        .map(|c| {
            let mut s = c.clone();
            s.sort_by(|a, b| a.total_cmp(b));
            quantile_sorted(&s, 0.5)
        })
        .collect();
    let total = pooled[0].len();
    let mut cov = DMatrix::zeros(d, d);
    if total > 1 {
        for a in 0..d {
            for b in 0..=a {
                let c = (0..total)
                    .map(|t| (pooled[a][t] - means[a]) * (pooled[b][t] - means[b]))
                    .sum::<f64>()
                    / (total - 1) as f64;
                cov[(a, b)] = c;
                cov[(b, a)] = c;
            }
        }
    }

    let params = ParameterSet::from_flat(&means, sample.x_dim, sample.z_dim)?;
    let rates = average_classification_rates(&params, data)?;
    let prevalence = mean_prevalence(&params, data)?;
    let loglik = observed_loglik(&params, data)?;
    let mut warnings = sample.warnings.clone();
    if !data.is_identifiable() {
        warnings.push(format!(
            "only {} distinct covariate patterns; at least 7 are needed for identifiability",
            data.distinct_covariate_patterns()
        ));
    }

    Ok(FitResult {
        method: Method::Mcmc,
        n: data.n(),
        names: sample.names.clone(),
        beta: params.beta.clone(),
        gamma1: Some(params.gamma1.clone()),
        gamma2: Some(params.gamma2.clone()),
        covariance: Some(cov),
        standard_errors: sds,
        medians: Some(medians),
        rates,
        prevalence,
        correction: None,
        loglik,
        converged: !sample.not_converged,
        iterations: sample.iterations,
        rank_deficient: false,
        warnings,
        mcmc: Some(sample.diagnostics()),
        loglik_trace: Vec::new(),
    })
}

/// Samples and summarizes in one call.
pub fn fit_mcmc(data: &ObservedDataset, prior: &PriorSpec, config: &McmcConfig) -> Result<(FitResult, PosteriorSample)> {
    let sample = sample_posterior(data, prior, config)?;
    let fit = summarize_posterior(&sample, data)?;
    Ok((fit, sample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::logistic;
    use approx::assert_abs_diff_eq;

    fn synth(n: usize, seed: u64, truth: &ParameterSet) -> ObservedDataset {
        let mut rng = stream_rng(seed, 0, 77);
        let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = DMatrix::from_fn(n, 1, |_, _| (2.5 + rng.sample::<f64, _>(StandardNormal)).abs());
        let ys = (0..n)
            .map(|i| {
                let y1 = rng.random::<f64>() < logistic(truth.beta[0] + truth.beta[1] * x[(i, 0)]);
                let g = if y1 { &truth.gamma1 } else { &truth.gamma2 };
                if rng.random::<f64>() < logistic(g[0] + g[1] * z[(i, 0)]) {
                    Class::One
                } else {
                    Class::Two
                }
            })
            .collect();
        ObservedDataset::new(ys, x, z).unwrap()
    }

    fn truth() -> ParameterSet {
        ParameterSet::new(vec![1.0, -2.0], vec![0.5, 1.0], vec![-0.5, -1.0])
    }

    fn sample_with_draws(draws: Vec<Vec<f64>>) -> PosteriorSample {
        let names = CoefficientNames {
            beta: vec!["beta_0".into()],
            gamma1: vec!["gamma_110".into()],
            gamma2: vec!["gamma_120".into()],
        };
        PosteriorSample {
            names,
            x_dim: 1,
            z_dim: 1,
            iterations: draws.len(),
            chains: vec![ChainDraws {
                iterations: (0..draws.len()).collect(),
                draws,
                acceptance: BlockAcceptance { beta: 0.3, gamma1: 0.3, gamma2: 0.3 },
                correction: None,
            }],
            rhat: vec![1.0; 3],
            ess: vec![3.0; 3],
            not_converged: false,
            warnings: vec![],
        }
    }

    fn intercept_data() -> ObservedDataset {
        let ys = (0..20).map(|i| if i % 3 == 0 { Class::Two } else { Class::One }).collect();
        ObservedDataset::new(ys, DMatrix::zeros(20, 0), DMatrix::zeros(20, 0)).unwrap()
    }

    #[test]
    fn summary_of_constant_and_simple_draws() {
        let d = intercept_data();
        let s = sample_with_draws(vec![vec![0.5, 2.0, -2.0]; 5]);
        let f = summarize_posterior(&s, &d).unwrap();
        assert_eq!(f.beta, vec![0.5]);
        assert_eq!(f.standard_errors, vec![0.0; 3]);

        let s = sample_with_draws(vec![vec![1.0, 2.0, -2.0], vec![2.0, 2.0, -2.0], vec![3.0, 2.0, -2.0]]);
        let f = summarize_posterior(&s, &d).unwrap();
        assert_abs_diff_eq!(f.beta[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.standard_errors[0], 1.0, epsilon = 1e-15);
        assert_eq!(f.medians.unwrap()[0], 2.0);
    }

    #[test]
    fn rhat_and_ess_behave() {
        let a: Vec<f64> = (0..1000).map(|t| ((t * 7919) % 1000) as f64 / 1000.0).collect();
        let b: Vec<f64> = (0..1000).map(|t| ((t * 104729) % 1000) as f64 / 1000.0).collect();
        let r = split_rhat(&[a.clone(), b.clone()]);
        assert!((1.0..1.05).contains(&r));
        let shifted: Vec<f64> = b.iter().map(|v| v + 5.0).collect();
        assert!(split_rhat(&[a.clone(), shifted]) > 1.1);
        assert_eq!(split_rhat(&[vec![1.0; 10], vec![1.0; 10]]), 1.0);
        let ess = effective_sample_size(&[a, b]);
        assert!(ess > 100.0);
    }

    #[test]
    fn config_validation() {
        let bad = McmcConfig { burn_in: 10, iterations: 10, ..McmcConfig::default() };
        assert!(bad.validate().is_err());
        let bad = McmcConfig { thin: 0, ..McmcConfig::default() };
        assert!(bad.validate().is_err());
        assert!(McmcConfig::default().validate().is_ok());
    }

    fn small_config(seed: u64) -> McmcConfig {
        McmcConfig {
            chains: 2,
            iterations: 1500,
            burn_in: 500,
            thin: 2,
            seed,
            ..McmcConfig::default()
        }
    }

    #[test]
    fn seeded_runs_are_identical_and_counts_match() {
        let d = synth(400, 1, &truth());
        let cfg = small_config(3);
        let a = sample_posterior(&d, &PriorSpec::default(), &cfg).unwrap();
        let b = sample_posterior(&d, &PriorSpec::default(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_draws(), 2 * (1500 - 500) / 2);
        assert!(a.rhat.iter().all(|r| *r >= 1.0 - 1e-6));
    }

    #[test]
    fn uniform_support_is_respected() {
        let d = synth(300, 2, &truth());
        let s = sample_posterior(&d, &PriorSpec::uniform(-3.0, 3.0), &small_config(4)).unwrap();
        for c in &s.chains {
            for draw in &c.draws {
                assert!(draw.iter().all(|v| (-3.0..=3.0).contains(v)));
            }
        }
    }

    #[test]
    fn start_outside_support_is_rejected() {
        let d = synth(100, 3, &truth());
        let cfg = McmcConfig {
            init: ChainInit::Given {
                params: vec![ParameterSet::new(vec![12.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0])],
            },
            ..small_config(1)
        };
        assert!(sample_posterior(&d, &PriorSpec::default(), &cfg).is_err());
    }

    #[test]
    fn chains_from_both_modes_agree_after_correction() {
        let d = synth(3000, 5, &truth());
        let cfg = McmcConfig {
            chains: 2,
            iterations: 3000,
            burn_in: 1000,
            thin: 1,
            seed: 11,
            init: ChainInit::Given {
                params: vec![truth(), truth().transpose()],
            },
            ..McmcConfig::default()
        };
        let s = sample_posterior(&d, &PriorSpec::default(), &cfg).unwrap();
        assert!(!s.chains[0].correction.unwrap().flipped);
        assert!(s.chains[1].correction.unwrap().flipped);
        for k in 0..s.dim() {
            let a: Vec<f64> = s.chains[0].draws.iter().map(|v| v[k]).collect();
            let b: Vec<f64> = s.chains[1].draws.iter().map(|v| v[k]).collect();
            let (ma, _) = mean_var(&a);
            let (mb, _) = mean_var(&b);
            let pooled = s.coefficient(k);
            let (_, var) = mean_var(&pooled);
            let se = (var / s.ess[k]).sqrt();
            assert!((ma - mb).abs() < 3.0 * se * 2f64.sqrt(), "coef {k}: {ma} vs {mb}, se {se}");
        }
    }

    #[test]
    fn sampler_matches_grid_oracle_on_two_coefficients() {
        let mut rng = stream_rng(21, 0, 77);
        let n = 40;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g1 = crate::model::logit(0.9);
        let g2 = crate::model::logit(0.15);
        let ys = (0..n)
            .map(|i| {
                let y1 = rng.random::<f64>() < logistic(0.5 - 1.0 * x[(i, 0)]);
                let g = if y1 { g1 } else { g2 };
                if rng.random::<f64>() < logistic(g) { Class::One } else { Class::Two }
            })
            .collect();
        let d = ObservedDataset::new(ys, x, DMatrix::zeros(n, 0)).unwrap();
        let at = |b0: f64, b1: f64| ParameterSet::new(vec![b0, b1], vec![g1], vec![g2]);

        // Brute-force posterior on a 201 x 201 grid over [-10, 10]^2.
        let pts: Vec<f64> = (0..201).map(|k| -10.0 + 0.1 * k as f64).collect();
        let mut logs = Vec::with_capacity(201 * 201);
        for &b0 in &pts {
            for &b1 in &pts {
                logs.push((b0, b1, observed_loglik(&at(b0, b1), &d).unwrap()));
            }
        }
        let top = logs.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut m0, mut m1) = (0.0, 0.0, 0.0);
        for &(b0, b1, l) in &logs {
            let w = (l - top).exp();
            z += w;
            m0 += w * b0;
            m1 += w * b1;
        }
        let oracle = [m0 / z, m1 / z];

        let cfg = McmcConfig {
            chains: 4,
            iterations: 12000,
            burn_in: 2000,
            seed: 8,
            fix_observation: true,
            init: ChainInit::Given { params: vec![at(0.0, 0.0), at(1.0, -1.0)] },
            ..McmcConfig::default()
        };
        let s = sample_posterior(&d, &PriorSpec::default(), &cfg).unwrap();
        assert!(s.chains.iter().all(|c| c.correction.is_none()));
        for (k, &target) in oracle.iter().enumerate() {
            let pooled = s.coefficient(k);
            let (mean, var) = mean_var(&pooled);
            let se = (var / s.ess[k]).sqrt();
            assert!((mean - target).abs() < 3.0 * se, "coef {k}: sampler {mean}, grid {target}, se {se}");
        }
        let g = s.coefficient(2);
        assert!(g.iter().all(|v| *v == g1));
    }

    #[test]
    fn perfect_classification_posterior_centres_on_logistic_mle() {
        let mut rng = stream_rng(31, 0, 77);
        let n = 400;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal).abs());
        let ys = (0..n)
            .map(|i| if rng.random::<f64>() < logistic(0.4 - 1.2 * x[(i, 0)]) { Class::One } else { Class::Two })
            .collect();
        let d = ObservedDataset::new(ys, x, z).unwrap();
        let mle = crate::em::naive_logistic(&d).unwrap().coefficients;
        let cfg = McmcConfig { chains: 2, iterations: 4000, burn_in: 1500, seed: 2, ..McmcConfig::default() };
        let prior = PriorSpec::all(Prior::Normal { location: 0.0, scale: 10.0 });
        let (fit, _) = fit_mcmc(&d, &prior, &cfg).unwrap();
        for c in 0..2 {
            let sd = fit.standard_errors[c];
            assert!((fit.beta[c] - mle[c]).abs() < 2.0 * sd, "coef {c}: {} vs {} (sd {sd})", fit.beta[c], mle[c]);
        }
        assert!(fit.rates.sens > 0.9 && fit.rates.spec > 0.9);
    }
}
