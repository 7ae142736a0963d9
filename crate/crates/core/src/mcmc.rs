//! Adaptive Metropolis-within-Gibbs sampler for the country parameters.
//!
//! The five globals are updated one at a time by Gaussian random walks on
//! `(logit q, mu, ln sigma_b, ln sigma_w, ln alpha)`. The latent batch means
//! and within-batch prevalences of the summaries survey are integrated out
//! of the global updates and drawn exactly from their full conditionals at
//! every retained iteration, which gives the same joint posterior as
//! updating them inside the sweep. Proposal scales adapt during burn-in
//! and are frozen afterwards.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::diagnostics::{param_diagnostics, ParamDiagnostics};
use crate::error::{Error, Result};
use crate::model::{log_prior, CountryParams, ModelKind, PriorSpec, SurveyData, VariancePrior};
use crate::rng::{label, open01, Seed};
use crate::stats::{
    binomial_ln_pmf, gamma_ln_pdf, logistic, normal_ln_pdf_prec, normal_ln_pdf_var, quantile_sorted,
};

pub const PARAM_NAMES: [&str; 5] = ["q", "mu", "sigma_b", "sigma_w", "alpha"];

/// R-hat above this marks a fit as not converged.
pub const RHAT_LIMIT: f64 = 1.05;

/// How the baseline batch means enter the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Integrated out: each positive is N(mu, sigma_b^2 + sigma_w^2).
    #[default]
    Marginal,
    /// Kept as latent variables with Gibbs updates.
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    pub adapt_window: usize,
    pub target_accept: f64,
    #[serde(default)]
    pub baseline_mode: BaselineMode,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iterations: 16_000,
            n_burnin: 4_000,
            thin: 4,
            n_chains: 4,
            seed: 1,
            adapt_window: 50,
            target_accept: 0.44,
            baseline_mode: BaselineMode::Marginal,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_burnin >= self.n_iterations {
            return bad("n_burnin must be smaller than n_iterations");
        }
        if self.thin == 0 || self.n_chains == 0 || self.adapt_window == 0 {
            return bad("thin, n_chains and adapt_window must be at least 1");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        if self.draws_per_chain() == 0 {
            return bad("configuration retains no draws");
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.n_iterations - self.n_burnin) / self.thin
    }
}

/// Latent variables of the summaries survey for one retained draw.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LatentBlock {
    pub batch_mus: Vec<f64>,
    pub p_within: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub name: String,
    pub rhat: Option<f64>,
    pub ess: f64,
}

/// Retained draws of all chains, stored chain-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    model: Option<ModelKind>,
    n_chains: usize,
    draws: Vec<CountryParams>,
    latents: Vec<LatentBlock>,
    /// Per chain, acceptance rate of each global block after burn-in.
    acceptance: Vec<[f64; 5]>,
    diagnostics: Vec<ParamDiagnostics>,
    warnings: Vec<String>,
}

impl PosteriorSample {
    /// Assemble a sample from chain-major draws of equal-length chains.
    pub fn from_draws(draws: Vec<CountryParams>, n_chains: usize) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::InvalidData("posterior has no draws".into()));
        }
        if n_chains == 0 || !draws.len().is_multiple_of(n_chains) {
            return Err(Error::InvalidData(format!(
                "{} draws cannot be split into {n_chains} equal chains",
                draws.len()
            )));
        }
        for (i, d) in draws.iter().enumerate() {
            d.validate()
                .map_err(|e| Error::InvalidData(format!("draw {}: {e}", i + 1)))?;
        }
        let mut s = PosteriorSample {
            model: None,
            n_chains,
            draws,
            latents: Vec::new(),
            acceptance: Vec::new(),
            diagnostics: Vec::new(),
            warnings: Vec::new(),
        };
        s.refresh_diagnostics();
        Ok(s)
    }

    fn refresh_diagnostics(&mut self) {
        self.diagnostics = (0..5)
            .map(|k| param_diagnostics(&self.chains_of(|p| param_value(p, k))))
            .collect();
        self.warnings.retain(|w| !w.starts_with("R-hat"));
        for (name, d) in PARAM_NAMES.iter().zip(&self.diagnostics) {
            if let Some(r) = d.rhat {
                if !(r <= RHAT_LIMIT) {
                    self.warnings
                        .push(format!("R-hat for {name} is {r:.3}, above {RHAT_LIMIT}"));
                }
            }
        }
    }

    pub fn model(&self) -> Option<ModelKind> {
        self.model
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn draws_per_chain(&self) -> usize {
        self.draws.len() / self.n_chains
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn draws(&self) -> &[CountryParams] {
        &self.draws
    }

    /// Summaries-survey latents per draw; empty when not sampled.
    pub fn latents(&self) -> &[LatentBlock] {
        &self.latents
    }

    pub fn acceptance(&self) -> &[[f64; 5]] {
        &self.acceptance
    }

    pub fn diagnostics(&self) -> &[ParamDiagnostics] {
        &self.diagnostics
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// False when any parameter has R-hat above [`RHAT_LIMIT`].
    pub fn converged(&self) -> bool {
        self.diagnostics
            .iter()
            .all(|d| d.rhat.is_none_or(|r| r <= RHAT_LIMIT))
    }

    /// Values of `f` per draw, split by chain.
    pub fn chains_of(&self, f: impl Fn(&CountryParams) -> f64) -> Vec<Vec<f64>> {
        self.draws
            .chunks(self.draws_per_chain())
            .map(|c| c.iter().map(&f).collect())
            .collect()
    }

    /// Keep every `step`-th draw of each chain.
    pub fn thinned(&self, step: usize) -> Result<PosteriorSample> {
        let step = step.max(1);
        let per = self.draws_per_chain();
        let mut draws = Vec::new();
        let mut latents = Vec::new();
        for c in 0..self.n_chains {
            for i in (0..per).step_by(step) {
                draws.push(self.draws[c * per + i]);
                if !self.latents.is_empty() {
                    latents.push(self.latents[c * per + i].clone());
                }
            }
        }
        let mut s = PosteriorSample::from_draws(draws, self.n_chains)?;
        s.model = self.model;
        s.latents = latents;
        s.acceptance = self.acceptance.clone();
        Ok(s)
    }
}

fn param_value(p: &CountryParams, k: usize) -> f64 {
    match k {
        0 => p.q,
        1 => p.mu,
        2 => p.sigma_b,
        3 => p.sigma_w,
        _ => p.alpha,
    }
}

/// Posterior mean and central 95% interval for each parameter and for phi.
pub fn summarize(sample: &PosteriorSample) -> Vec<ParamSummary> {
    let mut names: Vec<&str> = PARAM_NAMES.to_vec();
    names.push("phi");
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mut v: Vec<f64> = sample
                .draws()
                .iter()
                .map(|p| if k < 5 { param_value(p, k) } else { p.phi() })
                .collect();
            // shifted by the first draw so a constant series averages exactly
            let mean = v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / v.len() as f64;
            v.sort_by(f64::total_cmp);
            ParamSummary {
                name: name.to_string(),
                mean,
                lo: quantile_sorted(&v, 0.025),
                hi: quantile_sorted(&v, 0.975),
            }
        })
        .collect()
}

/// R-hat and effective sample size per global parameter.
pub fn diagnostics(sample: &PosteriorSample) -> Vec<ParamReport> {
    PARAM_NAMES
        .iter()
        .zip(sample.diagnostics())
        .map(|(n, d)| ParamReport {
            name: n.to_string(),
            rhat: d.rhat,
            ess: d.ess,
        })
        .collect()
}

// ---------------------------------------------------------------------------
// target density

struct SummaryTerm {
    n: f64,
    x: f64,
    mean: f64,
    sum_sq: f64,
    /// ln C(N, x) + ln Gamma(N - x + 2)
    constant: f64,
}

struct Target {
    model: ModelKind,
    mode: BaselineMode,
    priors: PriorSpec,
    // baseline
    n_base: u64,
    ys: Vec<f64>,
    y_mean: f64,
    y_ss: f64,
    // summaries
    summaries: Vec<SummaryTerm>,
}

/// Pieces of the log target that change with different blocks.
#[derive(Clone, Copy)]
struct Parts {
    /// Baseline binomial, depends on q (and alpha in the combined model).
    binom: f64,
    /// Normal and SD terms, depends on mu, sigma_b, sigma_w.
    normal: f64,
    /// Beta-binomial terms of the summaries survey, depends on alpha.
    alpha: f64,
}

impl Parts {
    fn total(&self) -> f64 {
        self.binom + self.normal + self.alpha
    }
}

impl Target {
    fn new(
        model: ModelKind,
        data: &SurveyData,
        priors: PriorSpec,
        mode: BaselineMode,
    ) -> Result<Self> {
        let baseline = if model.uses_baseline() {
            Some(data.baseline.as_ref().ok_or_else(|| {
                Error::ShapeMismatch(format!("{model:?} model requires baseline data"))
            })?)
        } else {
            None
        };
        let summaries = if model.uses_summaries() {
            Some(data.summaries.as_ref().ok_or_else(|| {
                Error::ShapeMismatch(format!("{model:?} model requires summaries data"))
            })?)
        } else {
            None
        };
        let ys = baseline
            .map(|b| b.log_concentrations().to_vec())
            .unwrap_or_default();
        let y_mean = if ys.is_empty() {
            0.0
        } else {
            ys.iter().sum::<f64>() / ys.len() as f64
        };
        let y_ss = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum();
        let summaries = summaries
            .map(|s| {
                s.batches()
                    .iter()
                    .map(|b| SummaryTerm {
                        n: b.n_sampled as f64,
                        x: b.n_positive as f64,
                        mean: b.mean_log,
                        sum_sq: b.sum_sq(),
                        constant: crate::stats::ln_choose(b.n_sampled, b.n_positive)
                            + ln_gamma((b.n_sampled - b.n_positive) as f64 + 2.0),
                    })
                    .collect()
            })
            .unwrap_or_default();
        Ok(Target {
            model,
            mode,
            priors,
            n_base: baseline.map_or(0, |b| b.n_batches()),
            ys,
            y_mean,
            y_ss,
            summaries,
        })
    }

    fn binom(&self, p: &CountryParams) -> f64 {
        if !self.model.uses_baseline() {
            return 0.0;
        }
        let success = match self.model {
            ModelKind::BaselineOnly => p.q,
            _ => p.q * p.mean_within_prevalence(),
        };
        binomial_ln_pmf(self.ys.len() as u64, self.n_base, success)
    }

    fn normal(&self, p: &CountryParams, base_latents: &[f64]) -> f64 {
        let mut total = 0.0;
        let (sb2, sw2) = (p.sigma_b * p.sigma_b, p.sigma_w * p.sigma_w);
        if !self.ys.is_empty() {
            match self.mode {
                BaselineMode::Marginal => {
                    let n = self.ys.len() as f64;
                    let v = sb2 + sw2;
                    let d = self.y_mean - p.mu;
                    total += -0.5 * n * (std::f64::consts::TAU * v).ln()
                        - 0.5 * (self.y_ss + n * d * d) / v;
                }
                BaselineMode::Latent => {
                    let (tw, tb) = (1.0 / sw2, 1.0 / sb2);
                    for (y, m) in self.ys.iter().zip(base_latents) {
                        total += normal_ln_pdf_prec(*y, *m, tw) + normal_ln_pdf_prec(*m, p.mu, tb);
                    }
                }
            }
        }
        let tau_w = 1.0 / sw2;
        for s in &self.summaries {
            total += normal_ln_pdf_var(s.mean, p.mu, sb2 + sw2 / s.x);
            if s.x >= 2.0 {
                if s.sum_sq <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                total += gamma_ln_pdf(s.sum_sq, 0.5 * (s.x - 1.0), 0.5 * tau_w);
            }
        }
        total
    }

    fn alpha(&self, p: &CountryParams) -> f64 {
        let a = p.alpha;
        if self.summaries.is_empty() {
            return 0.0;
        }
        // 1 / B(alpha, 2) = alpha (alpha + 1)
        let ln_b = a.ln() + (a + 1.0).ln();
        self.summaries
            .iter()
            .map(|s| s.constant + ln_gamma(s.x + a) - ln_gamma(s.n + a + 2.0) + ln_b)
            .sum()
    }

    fn parts(&self, p: &CountryParams, base_latents: &[f64]) -> Parts {
        Parts {
            binom: self.binom(p),
            normal: self.normal(p, base_latents),
            alpha: self.alpha(p),
        }
    }

    /// Log prior in transformed coordinates.
    fn prior_jac(&self, p: &CountryParams) -> f64 {
        log_prior(p, &self.priors)
            + p.q.ln()
            + (1.0 - p.q).ln()
            + p.sigma_b.ln()
            + p.sigma_w.ln()
            + p.alpha.ln()
    }
}

fn to_params(theta: &[f64; 5]) -> CountryParams {
    CountryParams {
        q: logistic(theta[0]),
        mu: theta[1],
        sigma_b: theta[2].exp(),
        sigma_w: theta[3].exp(),
        alpha: theta[4].exp(),
    }
}

fn to_theta(p: &CountryParams) -> [f64; 5] {
    [
        (p.q / (1.0 - p.q)).ln(),
        p.mu,
        p.sigma_b.ln(),
        p.sigma_w.ln(),
        p.alpha.ln(),
    ]
}

// ---------------------------------------------------------------------------
// initial values

fn data_driven_start(target: &Target) -> CountryParams {
    let q = if target.n_base > 0 {
        (target.ys.len() as f64 + 1.0) / (target.n_base as f64 + 2.0)
    } else {
        0.5
    };
    let means: Vec<f64> = target
        .ys
        .iter()
        .copied()
        .chain(target.summaries.iter().map(|s| s.mean))
        .collect();
    let mu = if means.is_empty() {
        0.0
    } else {
        means.iter().sum::<f64>() / means.len() as f64
    };
    let total_var = if means.len() >= 2 {
        crate::stats::variance(&means)
    } else {
        1.0
    };
    let (ss, dof) = target
        .summaries
        .iter()
        .filter(|s| s.x >= 2.0)
        .fold((0.0, 0.0), |(a, b), s| (a + s.sum_sq, b + s.x - 1.0));
    let sigma_w = if dof > 0.0 && ss > 0.0 {
        (ss / dof).sqrt()
    } else {
        (0.5 * total_var).sqrt().max(0.1)
    };
    let sigma_b = (total_var - 0.5 * sigma_w * sigma_w)
        .max(0.01 * total_var)
        .sqrt()
        .max(0.1);
    let alpha = if target.summaries.is_empty() {
        5.0
    } else {
        let m =
            target.summaries.iter().map(|s| s.x / s.n).sum::<f64>() / target.summaries.len() as f64;
        (2.0 * m / (1.0 - m).max(1e-3)).clamp(0.1, 1e3)
    };
    let mut p = CountryParams {
        q: q.clamp(0.01, 0.99),
        mu,
        sigma_b,
        sigma_w,
        alpha: alpha.min(0.5 * target.priors.alpha_upper),
    };
    if let VariancePrior::UniformOnSd { upper } = target.priors.variance_prior {
        p.sigma_b = p.sigma_b.min(0.5 * upper);
        p.sigma_w = p.sigma_w.min(0.5 * upper);
    }
    p
}

fn jitter(theta: &[f64; 5], rng: &mut ChaCha8Rng) -> [f64; 5] {
    let spread = [0.3, 0.2, 0.2, 0.2, 0.3];
    let mut out = *theta;
    for k in 0..5 {
        let z: f64 = StandardNormal.sample(rng);
        out[k] += spread[k] * z;
    }
    out
}

// ---------------------------------------------------------------------------
// sampler

struct ChainOutput {
    draws: Vec<CountryParams>,
    latents: Vec<LatentBlock>,
    acceptance: [f64; 5],
}

const INITIAL_LOG_SCALE: [f64; 5] = [-1.5, -2.0, -1.5, -2.0, -1.0];
const MAX_START_ATTEMPTS: usize = 100;

fn run_chain(
    target: &Target,
    cfg: &McmcConfig,
    chain: usize,
    summaries: Option<&crate::model::PositiveBatchSummaries>,
) -> Result<ChainOutput> {
    let mut rng = Seed::new(cfg.seed)
        .child(label::CHAIN)
        .child(chain as u64)
        .rng();
    let base = to_theta(&data_driven_start(target));

    let latent_mode = target.mode == BaselineMode::Latent;
    let mut theta = base;
    let mut base_latents: Vec<f64> = if latent_mode {
        target.ys.clone()
    } else {
        Vec::new()
    };
    let mut found = false;
    for _ in 0..MAX_START_ATTEMPTS {
        theta = jitter(&base, &mut rng);
        let p = to_params(&theta);
        let lp = target.parts(&p, &base_latents).total() + target.prior_jac(&p);
        if lp.is_finite() {
            found = true;
            break;
        }
    }
    if !found {
        let zero_sd: Vec<String> = summaries
            .map(|s| {
                s.zero_sd_batches()
                    .iter()
                    .map(|i| (i + 1).to_string())
                    .collect()
            })
            .unwrap_or_default();
        let hint = if zero_sd.is_empty() {
            String::new()
        } else {
            format!("; summaries batches with SD = 0: {}", zero_sd.join(", "))
        };
        return Err(Error::NonFinitePosterior(format!(
            "chain {chain} found no starting point with finite log density after {MAX_START_ATTEMPTS} attempts{hint}"
        )));
    }

    let mut params = to_params(&theta);
    let mut parts = target.parts(&params, &base_latents);
    let mut prior = target.prior_jac(&params);
    let mut log_scale = INITIAL_LOG_SCALE;
    let mut window_accepts = [0usize; 5];
    let mut post_accepts = [0usize; 5];
    let mut n_windows = 0usize;

    let per = cfg.draws_per_chain();
    let mut draws = Vec::with_capacity(per);
    let mut latents = Vec::with_capacity(if summaries.is_some() { per } else { 0 });

    for iter in 0..cfg.n_iterations {
        for k in 0..5 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let mut prop = theta;
            prop[k] += log_scale[k].exp() * z;
            let pp = to_params(&prop);
            let mut new_parts = parts;
            match k {
                0 => new_parts.binom = target.binom(&pp),
                1..=3 => new_parts.normal = target.normal(&pp, &base_latents),
                _ => {
                    new_parts.binom = target.binom(&pp);
                    new_parts.alpha = target.alpha(&pp);
                }
            }
            let new_prior = target.prior_jac(&pp);
            let log_ratio = new_parts.total() + new_prior - parts.total() - prior;
            let u = open01(&mut rng);
            if log_ratio.is_finite() && u.ln() < log_ratio || log_ratio == f64::INFINITY {
                theta = prop;
                params = pp;
                parts = new_parts;
                prior = new_prior;
                if iter < cfg.n_burnin {
                    window_accepts[k] += 1;
                } else {
                    post_accepts[k] += 1;
                }
            }
        }

        if latent_mode {
            let (tw, tb) = (params.tau_w(), params.tau_b());
            let prec = tw + tb;
            let sd = prec.recip().sqrt();
            for (m, y) in base_latents.iter_mut().zip(&target.ys) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *m = (tw * y + tb * params.mu) / prec + sd * z;
            }
            parts.normal = target.normal(&params, &base_latents);
        }

        if iter < cfg.n_burnin && (iter + 1) % cfg.adapt_window == 0 {
            n_windows += 1;
            let step = (1.0 / (n_windows as f64).sqrt()).min(0.5);
            for k in 0..5 {
                let rate = window_accepts[k] as f64 / cfg.adapt_window as f64;
                if rate > cfg.target_accept {
                    log_scale[k] += step;
                } else {
                    log_scale[k] -= step;
                }
            }
            window_accepts = [0; 5];
        }

        if iter >= cfg.n_burnin
            && (iter + 1 - cfg.n_burnin).is_multiple_of(cfg.thin)
            && draws.len() < per
        {
            draws.push(params);
            if let Some(s) = summaries {
                latents.push(draw_summary_latents(&params, s, &mut rng)?);
            }
        }
    }

    let kept = (cfg.n_iterations - cfg.n_burnin) as f64;
    let mut acceptance = [0.0; 5];
    for k in 0..5 {
        acceptance[k] = post_accepts[k] as f64 / kept;
    }
    Ok(ChainOutput {
        draws,
        latents,
        acceptance,
    })
}

/// Exact draw of the summaries-survey latents from their full conditionals.
pub fn draw_summary_latents<R: Rng + ?Sized>(
    params: &CountryParams,
    data: &crate::model::PositiveBatchSummaries,
    rng: &mut R,
) -> Result<LatentBlock> {
    let (tw, tb) = (params.tau_w(), params.tau_b());
    let mut out = LatentBlock {
        batch_mus: Vec::with_capacity(data.len()),
        p_within: Vec::with_capacity(data.len()),
    };
    for b in data.batches() {
        let x = b.n_positive as f64;
        let prec = x * tw + tb;
        let z: f64 = StandardNormal.sample(rng);
        out.batch_mus
            .push((x * tw * b.mean_log + tb * params.mu) / prec + z / prec.sqrt());
        let beta = Beta::new(x + params.alpha, (b.n_sampled - b.n_positive) as f64 + 2.0)
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
        out.p_within.push(beta.sample(rng));
    }
    Ok(out)
}

/// Sample the posterior of `model` given `data` and `priors`.
///
/// Chains run in parallel on the current rayon pool; every chain draws from
/// its own sub-stream of `cfg.seed`, so results do not depend on scheduling.
pub fn fit(
    model: ModelKind,
    data: &SurveyData,
    priors: &PriorSpec,
    cfg: &McmcConfig,
) -> Result<PosteriorSample> {
    cfg.validate()?;
    priors.validate()?;
    let target = Target::new(model, data, *priors, cfg.baseline_mode)?;
    let summaries = if model.uses_summaries() {
        data.summaries.as_ref()
    } else {
        None
    };
    let outputs: Vec<ChainOutput> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(&target, cfg, c, summaries))
        .collect::<Result<_>>()?;

    let mut draws = Vec::with_capacity(cfg.n_chains * cfg.draws_per_chain());
    let mut latents = Vec::new();
    let mut acceptance = Vec::with_capacity(cfg.n_chains);
    for o in outputs {
        draws.extend(o.draws);
        latents.extend(o.latents);
        acceptance.push(o.acceptance);
    }
    let mut sample = PosteriorSample::from_draws(draws, cfg.n_chains)?;
    sample.model = Some(model);
    sample.latents = latents;
    sample.acceptance = acceptance;
    if let Some(s) = summaries {
        let zero = s.zero_sd_batches();
        if !zero.is_empty() {
            sample
                .warnings
                .push(format!("summaries batches with SD = 0: {zero:?}"));
        }
    }
    Ok(sample)
}

// ---------------------------------------------------------------------------
// persistence

#[derive(Debug, Serialize, Deserialize)]
struct DrawRow {
    chain: usize,
    iteration: usize,
    q: f64,
    mu: f64,
    sigma_b: f64,
    sigma_w: f64,
    alpha: f64,
}

/// One row per retained draw: `chain,iteration,q,mu,sigma_b,sigma_w,alpha`.
pub fn write_draws_csv<W: std::io::Write>(out: W, sample: &PosteriorSample) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let per = sample.draws_per_chain();
    for (i, p) in sample.draws().iter().enumerate() {
        w.serialize(DrawRow {
            chain: i / per,
            iteration: i % per,
            q: p.q,
            mu: p.mu,
            sigma_b: p.sigma_b,
            sigma_w: p.sigma_w,
            alpha: p.alpha,
        })?;
    }
    w.flush().map_err(|e| Error::io("<draws>", e))?;
    Ok(())
}

/// Read draws written by [`write_draws_csv`]. Chains must be contiguous,
/// numbered from zero and of equal length.
pub fn read_draws_csv<R: std::io::Read>(input: R, source: &str) -> Result<PosteriorSample> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut draws = Vec::new();
    let mut chain_lengths: Vec<usize> = Vec::new();
    for (i, row) in rdr.deserialize::<DrawRow>().enumerate() {
        let line = i as u64 + 2;
        let row = row.map_err(|e| Error::Schema {
            path: source.to_string(),
            line,
            message: e.to_string(),
        })?;
        if row.chain == chain_lengths.len() {
            chain_lengths.push(0);
        } else if row.chain + 1 != chain_lengths.len() {
            return Err(Error::Schema {
                path: source.to_string(),
                line,
                message: format!("chain {} out of order", row.chain),
            });
        }
        chain_lengths[row.chain] += 1;
        let p = CountryParams {
            q: row.q,
            mu: row.mu,
            sigma_b: row.sigma_b,
            sigma_w: row.sigma_w,
            alpha: row.alpha,
        };
        p.validate().map_err(|e| Error::Schema {
            path: source.to_string(),
            line,
            message: e.to_string(),
        })?;
        draws.push(p);
    }
    if chain_lengths.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InvalidData(format!(
            "{source}: chains have unequal lengths {chain_lengths:?}"
        )));
    }
    PosteriorSample::from_draws(draws, chain_lengths.len().max(1))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub model: Option<ModelKind>,
    pub n_chains: usize,
    pub draws_per_chain: usize,
    pub parameters: Vec<ParamSummary>,
    pub diagnostics: Vec<ParamReport>,
    pub acceptance: Vec<[f64; 5]>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

pub fn fit_report(sample: &PosteriorSample) -> FitReport {
    FitReport {
        model: sample.model(),
        n_chains: sample.n_chains(),
        draws_per_chain: sample.draws_per_chain(),
        parameters: summarize(sample),
        diagnostics: diagnostics(sample),
        acceptance: sample.acceptance().to_vec(),
        converged: sample.converged(),
        warnings: sample.warnings().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        loglik_baseline, loglik_summaries_marginal, BaselineSurvey, BatchSummary,
        PositiveBatchSummaries,
    };

    fn small_data() -> SurveyData {
        SurveyData {
            baseline: Some(BaselineSurvey::new(40, vec![1.2, 2.5, 3.1, 2.2, 1.9]).unwrap()),
            summaries: Some(
                PositiveBatchSummaries::new(vec![
                    BatchSummary {
                        n_sampled: 10,
                        n_positive: 9,
                        mean_log: 2.1,
                        sd_log: Some(0.7),
                    },
                    BatchSummary {
                        n_sampled: 5,
                        n_positive: 1,
                        mean_log: 3.0,
                        sd_log: None,
                    },
                ])
                .unwrap(),
            ),
        }
    }

    fn quick(seed: u64) -> McmcConfig {
        McmcConfig {
            n_iterations: 3000,
            n_burnin: 1000,
            thin: 2,
            n_chains: 2,
            seed,
            ..McmcConfig::default()
        }
    }

    #[test]
    fn target_parts_match_model_likelihoods() {
        let data = small_data();
        let t = Target::new(
            ModelKind::Combined,
            &data,
            PriorSpec::default(),
            BaselineMode::Marginal,
        )
        .unwrap();
        let p = CountryParams::new(0.2, 2.2, 0.6, 0.8, 12.0).unwrap();
        let expected = loglik_baseline(&p, data.baseline.as_ref().unwrap(), false)
            + loglik_summaries_marginal(&p, data.summaries.as_ref().unwrap());
        let got = t.parts(&p, &[]).total();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");

        let t = Target::new(
            ModelKind::BaselineOnly,
            &data,
            PriorSpec::default(),
            BaselineMode::Marginal,
        )
        .unwrap();
        let expected = loglik_baseline(&p, data.baseline.as_ref().unwrap(), true);
        assert!((t.parts(&p, &[]).total() - expected).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let mut c = McmcConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.draws_per_chain(), 3000);
        c.n_burnin = c.n_iterations;
        assert!(c.validate().is_err());
        let c = McmcConfig {
            thin: 0,
            ..McmcConfig::default()
        };
        assert!(c.validate().is_err());
        let c = McmcConfig {
            target_accept: 1.0,
            ..McmcConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn shape_mismatch() {
        let data = SurveyData {
            baseline: small_data().baseline,
            summaries: None,
        };
        let e = fit(ModelKind::Combined, &data, &PriorSpec::default(), &quick(1)).unwrap_err();
        assert!(matches!(e, Error::ShapeMismatch(_)));
    }

    #[test]
    fn draw_counts_and_determinism() {
        let data = small_data();
        let a = fit(ModelKind::Combined, &data, &PriorSpec::default(), &quick(3)).unwrap();
        let b = fit(ModelKind::Combined, &data, &PriorSpec::default(), &quick(3)).unwrap();
        assert_eq!(a.len(), 2 * 1000);
        assert_eq!(a.draws_per_chain(), 1000);
        assert_eq!(a.latents().len(), a.len());
        assert_eq!(a.latents()[0].batch_mus.len(), 2);
        assert_eq!(a, b);
        let c = fit(ModelKind::Combined, &data, &PriorSpec::default(), &quick(4)).unwrap();
        assert_ne!(a.draws(), c.draws());
    }

    #[test]
    fn zero_sd_batch_is_rejected() {
        let mut data = small_data();
        data.summaries = Some(
            PositiveBatchSummaries::new(vec![BatchSummary {
                n_sampled: 5,
                n_positive: 3,
                mean_log: 2.0,
                sd_log: Some(0.0),
            }])
            .unwrap(),
        );
        let e = fit(ModelKind::Combined, &data, &PriorSpec::default(), &quick(1)).unwrap_err();
        assert!(e.is_numerical());
        assert!(e.to_string().contains("SD = 0"), "{e}");
    }

    #[test]
    fn summarize_constant_draws() {
        let p = CountryParams::new(0.15, 2.4, 0.66, 0.74, 85.0).unwrap();
        let s = PosteriorSample::from_draws(vec![p; 10], 1).unwrap();
        let table = summarize(&s);
        assert_eq!(table.len(), 6);
        for row in &table[..5] {
            assert_eq!(row.lo, row.hi);
            assert_eq!(row.lo, row.mean);
        }
        assert!((table[5].mean - 0.557).abs() < 5e-4);
        assert!(diagnostics(&s)[0].rhat.is_none());
    }

    #[test]
    fn draws_csv_round_trip() {
        let data = small_data();
        let s = fit(ModelKind::Combined, &data, &PriorSpec::default(), &quick(5)).unwrap();
        let mut buf = Vec::new();
        write_draws_csv(&mut buf, &s).unwrap();
        let back = read_draws_csv(buf.as_slice(), "d.csv").unwrap();
        assert_eq!(back.draws(), s.draws());
        assert_eq!(back.n_chains(), 2);
        let bad = "chain,iteration,q,mu,sigma_b,sigma_w,alpha\n0,0,1.5,0,1,1,1\n";
        let e = read_draws_csv(bad.as_bytes(), "d.csv").unwrap_err();
        assert!(e.to_string().starts_with("d.csv:2:"), "{e}");
    }

    #[test]
    fn latent_baseline_mode_agrees_with_marginal() {
        let data = SurveyData {
            baseline: Some(
                BaselineSurvey::new(60, vec![1.2, 2.5, 3.1, 2.2, 1.9, 2.8, 0.7, 2.0, 2.6, 1.5])
                    .unwrap(),
            ),
            summaries: None,
        };
        let cfg = McmcConfig {
            n_iterations: 40_000,
            n_burnin: 4_000,
            thin: 2,
            n_chains: 2,
            seed: 9,
            ..McmcConfig::default()
        };
        let priors = PriorSpec::uniform_sd(10.0);
        let marg = fit(ModelKind::BaselineOnly, &data, &priors, &cfg).unwrap();
        let lat = fit(
            ModelKind::BaselineOnly,
            &data,
            &priors,
            &McmcConfig {
                baseline_mode: BaselineMode::Latent,
                ..cfg
            },
        )
        .unwrap();
        let mean = |s: &PosteriorSample, f: fn(&CountryParams) -> f64| {
            s.draws().iter().map(f).sum::<f64>() / s.len() as f64
        };
        let mu = (mean(&marg, |p| p.mu), mean(&lat, |p| p.mu));
        assert!((mu.0 - mu.1).abs() < 0.05, "{mu:?}");
        let total_sd = |p: &CountryParams| (p.sigma_b.powi(2) + p.sigma_w.powi(2)).sqrt();
        let sd = (mean(&marg, total_sd), mean(&lat, total_sd));
        assert!((sd.0 - sd.1).abs() < 0.08, "{sd:?}");
    }
}
