//! Batch acceptance criteria `n/c/m` and batch posteriors conditional on
//! the outcome of testing.
//!
//! A batch is tested by quantifying `n` carcasses drawn independently from
//! it; it is accepted when at most `c` of them exceed `m` cfu/g. A sampled
//! carcass exceeds `m` only if it is contaminated, so the per-sample
//! exceedance probability is `p_j (1 - Phi((log10 m - mu_j) / sigma_w))`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::mc_standard_error;
use crate::error::{Error, Result};
use crate::mcmc::PosteriorSample;
use crate::model::BatchParams;
use crate::rng::Seed;
use crate::stats::{binomial_cdf, normal_sf};

/// Importance-weight ESS below which a conditional report carries a warning.
pub const MIN_WEIGHT_ESS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub n: u32,
    pub c: u32,
    /// Threshold in cfu/g.
    pub m: f64,
}

impl Criterion {
    pub fn new(n: u32, c: u32, m: f64) -> Result<Self> {
        let crit = Criterion { n, c, m };
        crit.check().map_err(|reason| Error::InvalidCriterion {
            input: crit.to_string(),
            reason,
        })?;
        Ok(crit)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.n == 0 {
            return Err("n must be at least 1".into());
        }
        if self.c > self.n {
            return Err(format!("c = {} exceeds n = {}", self.c, self.n));
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err("m must be a positive number".into());
        }
        Ok(())
    }

    pub fn log10_m(&self) -> f64 {
        self.m.log10()
    }

    /// The grid of 20 criteria `n in {5, 10}`, `c in 0..=4`, `m in {100, 1000}`.
    pub fn standard_grid() -> Vec<Criterion> {
        let mut out = Vec::with_capacity(20);
        for n in [5, 10] {
            for m in [100.0, 1000.0] {
                for c in 0..=4 {
                    out.push(Criterion { n, c, m });
                }
            }
        }
        out
    }
}

impl Default for Criterion {
    fn default() -> Self {
        Criterion {
            n: 5,
            c: 1,
            m: 1000.0,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.n, self.c, self.m)
    }
}

impl FromStr for Criterion {
    type Err = Error;

    /// Parse `"n/c/m"`, e.g. `"5/1/1000"`.
    fn from_str(s: &str) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidCriterion {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let parts: Vec<&str> = s.trim().split('/').collect();
        if parts.len() != 3 {
            return Err(invalid("expected the form n/c/m"));
        }
        let n: u32 = parts[0]
            .trim()
            .parse()
            .map_err(|_| invalid("n is not a count"))?;
        let c: u32 = parts[1]
            .trim()
            .parse()
            .map_err(|_| invalid("c is not a count"))?;
        let m: f64 = parts[2]
            .trim()
            .parse()
            .map_err(|_| invalid("m is not a number"))?;
        let crit = Criterion { n, c, m };
        crit.check().map_err(|r| invalid(&r))?;
        Ok(crit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum McStatus {
    Met,
    #[value(name = "not_met", alias = "not-met")]
    NotMet,
    #[value(name = "not_applied", alias = "not-applied")]
    NotApplied,
}

/// Probability that one sampled carcass exceeds `m` cfu/g.
pub fn p_sample_exceeds(batch: &BatchParams, sigma_w: f64, m: f64) -> f64 {
    if !batch.contaminated {
        return 0.0;
    }
    exceed_prob(batch.p_within, batch.mu_batch, sigma_w, m.log10())
}

#[inline]
pub(crate) fn exceed_prob(p_within: f64, mu_batch: f64, sigma_w: f64, log10_m: f64) -> f64 {
    p_within * normal_sf((log10_m - mu_batch) / sigma_w)
}

/// Probability that a batch passes the criterion. Uncontaminated batches
/// always pass.
pub fn p_mc_met(batch: &BatchParams, sigma_w: f64, crit: &Criterion) -> f64 {
    if !batch.contaminated {
        return 1.0;
    }
    met_prob(batch.p_within, batch.mu_batch, sigma_w, crit)
}

#[inline]
pub(crate) fn met_prob(p_within: f64, mu_batch: f64, sigma_w: f64, crit: &Criterion) -> f64 {
    if crit.c >= crit.n {
        return 1.0;
    }
    binomial_cdf(
        crit.c,
        crit.n,
        exceed_prob(p_within, mu_batch, sigma_w, crit.log10_m()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedBatch {
    /// Index of the posterior draw the batch was simulated from.
    pub draw: usize,
    pub batch: BatchParams,
    /// Probability that the batch passes the criterion.
    pub p_met: f64,
    /// Unnormalized importance weight for the requested status.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedBatches {
    pub status: McStatus,
    pub criterion: Criterion,
    pub batches_per_draw: usize,
    pub batches: Vec<WeightedBatch>,
}

fn status_weight(status: McStatus, p_met: f64) -> f64 {
    match status {
        McStatus::Met => p_met,
        McStatus::NotMet => 1.0 - p_met,
        McStatus::NotApplied => 1.0,
    }
}

/// Simulate `l` batches per posterior draw and weight them by the
/// probability of the requested testing outcome.
///
/// Batches of a draw come from a sub-stream keyed by its parameter values,
/// so results depend neither on thread count nor on the order of the draws.
pub fn conditional_batch_draws<R: rand::RngCore + ?Sized>(
    posterior: &PosteriorSample,
    status: McStatus,
    crit: &Criterion,
    l: usize,
    rng: &mut R,
) -> Result<WeightedBatches> {
    if posterior.is_empty() {
        return Err(Error::InvalidData("posterior has no draws".into()));
    }
    let l = l.max(1);
    let base = Seed::from_rng(rng);
    let per_draw: Vec<Vec<WeightedBatch>> = posterior
        .draws()
        .par_iter()
        .enumerate()
        .map(|(t, params)| {
            let mut r = base.child_keyed(&params.stream_key()).rng();
            (0..l)
                .map(|_| {
                    let batch = BatchParams::draw(params, &mut r);
                    let p_met = p_mc_met(&batch, params.sigma_w, crit);
                    WeightedBatch {
                        draw: t,
                        batch,
                        p_met,
                        weight: status_weight(status, p_met),
                    }
                })
                .collect()
        })
        .collect();
    let batches: Vec<WeightedBatch> = per_draw.into_iter().flatten().collect();
    if batches.iter().all(|b| b.weight <= 0.0) {
        return Err(Error::DegenerateConditioning(format!(
            "no simulated batch can have status {status:?} under criterion {crit}"
        )));
    }
    Ok(WeightedBatches {
        status,
        criterion: *crit,
        batches_per_draw: l,
        batches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Monte Carlo standard error, accounting for autocorrelation of the
    /// posterior draws.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalReport {
    pub status: McStatus,
    pub criterion: String,
    pub n_draws: usize,
    pub batches_per_draw: usize,
    /// P(I_j = 1 | data, status).
    pub p_contaminated: Estimate,
    /// E(mu_j | data, status).
    pub mean_mu: Estimate,
    /// 2.5%, 50% and 97.5% weighted quantiles of mu_j.
    pub mu_quantiles: [f64; 3],
    pub mean_p_within: Estimate,
    /// E(mu_j | data, status, I_j = 1); absent when no weight falls on
    /// contaminated batches.
    pub mean_mu_given_contaminated: Option<Estimate>,
    pub mean_p_within_given_contaminated: Option<Estimate>,
    /// P(MC met | data), unconditional on status.
    pub p_mc_met: Estimate,
    /// Kish effective sample size of the importance weights.
    pub weight_ess: f64,
    pub warnings: Vec<String>,
}

/// Ratio estimate `sum(w g) / sum(w)` with a linearized standard error over
/// per-draw totals.
fn ratio_estimate(
    draws: &WeightedBatches,
    n_draws: usize,
    n_chains: usize,
    g: impl Fn(&WeightedBatch) -> f64,
    w: impl Fn(&WeightedBatch) -> f64,
) -> Option<Estimate> {
    let mut num = vec![0.0; n_draws];
    let mut den = vec![0.0; n_draws];
    for b in &draws.batches {
        let wb = w(b);
        if wb > 0.0 {
            num[b.draw] += wb * g(b);
            den[b.draw] += wb;
        }
    }
    let (sn, sd): (f64, f64) = (num.iter().sum(), den.iter().sum());
    if !(sd > 0.0) {
        return None;
    }
    let ratio = sn / sd;
    let mean_den = sd / n_draws as f64;
    let resid: Vec<f64> = num
        .iter()
        .zip(&den)
        .map(|(a, b)| (a - ratio * b) / mean_den)
        .collect();
    Some(Estimate {
        mean: ratio,
        se: mc_standard_error(&resid, n_chains),
    })
}

fn weighted_quantiles(mut pairs: Vec<(f64, f64)>, probs: [f64; 3]) -> [f64; 3] {
    pairs.retain(|(_, w)| *w > 0.0);
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut out = [f64::NAN; 3];
    for (k, &prob) in probs.iter().enumerate() {
        let target = prob * total;
        let mut acc = 0.0;
        for &(v, w) in &pairs {
            acc += w;
            if acc >= target {
                out[k] = v;
                break;
            }
        }
        if out[k].is_nan() {
            out[k] = pairs.last().map_or(f64::NAN, |p| p.0);
        }
    }
    out
}

/// Weighted summaries of a conditional batch sample.
pub fn conditional_summaries(
    draws: &WeightedBatches,
    posterior: &PosteriorSample,
) -> Result<ConditionalReport> {
    let n_draws = posterior.len();
    if draws.batches.iter().any(|b| b.draw >= n_draws) {
        return Err(Error::ShapeMismatch(
            "weighted batches do not belong to this posterior".into(),
        ));
    }
    let n_chains = posterior.n_chains();
    let wsum: f64 = draws.batches.iter().map(|b| b.weight).sum();
    let wsq: f64 = draws.batches.iter().map(|b| b.weight * b.weight).sum();
    if !(wsum > 0.0) {
        return Err(Error::DegenerateConditioning("all weights are zero".into()));
    }
    let weight_ess = wsum * wsum / wsq;
    let indicator = |b: &WeightedBatch| if b.batch.contaminated { 1.0 } else { 0.0 };
    let w = |b: &WeightedBatch| b.weight;
    let w_contam = |b: &WeightedBatch| b.weight * indicator(b);
    let est = |g: &dyn Fn(&WeightedBatch) -> f64, wf: &dyn Fn(&WeightedBatch) -> f64| {
        ratio_estimate(draws, n_draws, n_chains, g, wf)
    };
    let p_contaminated = est(&indicator, &w).expect("weights are positive");
    let mean_mu = est(&|b| b.batch.mu_batch, &w).expect("weights are positive");
    let mean_p_within = est(&|b| b.batch.p_within, &w).expect("weights are positive");
    let p_mc_met = est(&|b| b.p_met, &|_| 1.0).expect("uniform weights");
    let mean_mu_given_contaminated = est(&|b| b.batch.mu_batch, &w_contam);
    let mean_p_within_given_contaminated = est(&|b| b.batch.p_within, &w_contam);
    let mu_quantiles = weighted_quantiles(
        draws
            .batches
            .iter()
            .map(|b| (b.batch.mu_batch, b.weight))
            .collect(),
        [0.025, 0.5, 0.975],
    );
    let mut warnings = Vec::new();
    if weight_ess < MIN_WEIGHT_ESS {
        warnings.push(format!(
            "importance weights have effective sample size {weight_ess:.1}, below {MIN_WEIGHT_ESS}"
        ));
    }
    Ok(ConditionalReport {
        status: draws.status,
        criterion: draws.criterion.to_string(),
        n_draws,
        batches_per_draw: draws.batches_per_draw,
        p_contaminated,
        mean_mu,
        mu_quantiles,
        mean_p_within,
        mean_mu_given_contaminated,
        mean_p_within_given_contaminated,
        p_mc_met,
        weight_ess,
        warnings,
    })
}
