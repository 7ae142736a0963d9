//! Synthetic surveys from known parameters, and a brute-force grid
//! posterior used to check the sampler.

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    draw_contaminated_batch, log_prior, loglik_baseline, summary_stat_ln_density, BaselineSurvey,
    BatchParams, BatchSummary, CountryParams, ModelKind, PositiveBatchSummaries, PriorSpec,
    SurveyData,
};
use crate::rng::{label, open01, Seed};
use crate::stats::{beta_ln_pdf, binomial_ln_pmf, logistic, normal_ln_pdf_prec};

/// Summaries batches that draw no positives are redrawn up to this many times.
pub const MAX_RETRIES_PER_BATCH: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `sigma_b = 0` is allowed here: every batch then has mean `mu`.
    pub params: CountryParams,
    pub n_baseline_batches: u64,
    /// Carcasses sampled per batch of the summaries survey.
    pub batch_plan: Vec<u64>,
}

impl GroundTruth {
    /// Survey sizes of the published data with parameters at the combined
    /// posterior means: 617 baseline batches and 20 positive batches of 5 to
    /// 25 carcasses. `mu` is the two-decimal value 2.37 rather than the
    /// rounded 2.4.
    pub fn calibrated_default() -> Self {
        GroundTruth {
            params: CountryParams {
                q: 0.15,
                mu: 2.37,
                sigma_b: 0.66,
                sigma_w: 0.74,
                alpha: 85.0,
            },
            n_baseline_batches: 617,
            batch_plan: (0..20).map(|i| 5 + (i * 20 + 9) / 19).collect(),
        }
    }

    /// Same parameters with 10,000 baseline batches and 200 positive batches.
    pub fn calibrated_large() -> Self {
        let base = Self::calibrated_default();
        GroundTruth {
            n_baseline_batches: 10_000,
            batch_plan: (0..10).flat_map(|_| base.batch_plan.clone()).collect(),
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let mut check = *p;
        if p.sigma_b == 0.0 {
            check.sigma_b = 1.0;
        }
        check
            .validate()
            .map_err(|e| Error::InvalidParams(format!("ground truth: {e}")))?;
        if self.batch_plan.contains(&0) {
            return Err(Error::InvalidParams(
                "batch sample sizes must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub baseline: BaselineSurvey,
    pub summaries: PositiveBatchSummaries,
    /// Summaries batches redrawn because no carcass was positive.
    pub retries: usize,
}

impl SyntheticData {
    pub fn survey(&self) -> SurveyData {
        SurveyData {
            baseline: Some(self.baseline.clone()),
            summaries: Some(self.summaries.clone()),
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Simulate both surveys from `truth`.
///
/// Baseline: every batch is contaminated with probability `q`; its single
/// carcass is positive with probability `p_j` and then measured as
/// `N(mu_j, sigma_w^2)`. Summaries: batches are contaminated by
/// construction; `x ~ Binomial(N, p_j)` carcasses are positive, and a batch
/// with `x = 0` is redrawn.
pub fn generate(truth: &GroundTruth, seed: u64) -> Result<SyntheticData> {
    truth.validate()?;
    let p = &truth.params;
    let root = Seed::new(seed).child(label::SYNTH);

    let mut rng = root.child(0).rng();
    let mut ys = Vec::new();
    for _ in 0..truth.n_baseline_batches {
        let b = BatchParams::draw(p, &mut rng);
        let positive = b.contaminated && open01(&mut rng) < b.p_within;
        let z = normal(&mut rng);
        if positive {
            ys.push(b.mu_batch + p.sigma_w * z);
        }
    }
    let baseline = BaselineSurvey::new(truth.n_baseline_batches, ys)?;

    let mut rng = root.child(1).rng();
    let mut retries = 0;
    let mut batches = Vec::with_capacity(truth.batch_plan.len());
    for (j, &n) in truth.batch_plan.iter().enumerate() {
        let mut attempts = 0;
        let (x, mu_j) = loop {
            let (pw, mu_j) = draw_contaminated_batch(p, &mut rng);
            let x = Binomial::new(n, pw)
                .map_err(|e| Error::InvalidParams(e.to_string()))?
                .sample(&mut rng);
            if x > 0 {
                break (x, mu_j);
            }
            attempts += 1;
            if attempts >= MAX_RETRIES_PER_BATCH {
                return Err(Error::InvalidParams(format!(
                    "summaries batch {} had no positives in {attempts} attempts",
                    j + 1
                )));
            }
        };
        retries += attempts;
        let values: Vec<f64> = (0..x)
            .map(|_| mu_j + p.sigma_w * normal(&mut rng))
            .collect();
        let mean = values.iter().sum::<f64>() / x as f64;
        let sd = (x >= 2).then(|| crate::stats::variance(&values).sqrt());
        batches.push(BatchSummary {
            n_sampled: n,
            n_positive: x,
            mean_log: mean,
            sd_log: sd,
        });
    }
    Ok(SyntheticData {
        baseline,
        summaries: PositiveBatchSummaries::new(batches)?,
        retries,
    })
}

// ---------------------------------------------------------------------------
// grid oracle

/// Largest grid the oracle evaluates.
pub const MAX_GRID_CELLS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    /// Number of equally spaced nodes; 1 pins the parameter at `lo`.
    pub n: usize,
}

impl Axis {
    pub fn fixed(value: f64) -> Self {
        Axis {
            lo: value,
            hi: value,
            n: 1,
        }
    }

    pub fn span(lo: f64, hi: f64, n: usize) -> Self {
        Axis { lo, hi, n }
    }

    fn nodes(&self) -> Vec<f64> {
        if self.n <= 1 {
            return vec![self.lo];
        }
        let h = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n).map(|i| self.lo + i as f64 * h).collect()
    }

    fn weights(&self) -> Vec<f64> {
        if self.n <= 1 {
            return vec![1.0];
        }
        let h = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n)
            .map(|i| {
                if i == 0 || i == self.n - 1 {
                    0.5 * h
                } else {
                    h
                }
            })
            .collect()
    }
}

/// Parameter grid in the order `q, mu, sigma_b, sigma_w, alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: [Axis; 5],
    /// Nodes of the quadrature over each latent batch mean.
    pub quad_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    pub nodes: [Vec<f64>; 5],
    weights: [Vec<f64>; 5],
    /// Normalized density at every cell, last axis fastest.
    pub density: Vec<f64>,
}

impl GridPosterior {
    /// Marginal density of parameter `k` at its nodes.
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        let dims: Vec<usize> = self.nodes.iter().map(Vec::len).collect();
        let mut out = vec![0.0; dims[k]];
        for (cell, d) in self.density.iter().enumerate() {
            let idx = unravel(cell, &dims);
            let w: f64 = (0..5)
                .filter(|&a| a != k)
                .map(|a| self.weights[a][idx[a]])
                .product();
            out[idx[k]] += w * d;
        }
        out
    }

    /// Marginal CDF of parameter `k` at `x`, integrating the piecewise-linear
    /// marginal density.
    pub fn marginal_cdf(&self, k: usize, x: f64) -> f64 {
        let nodes = &self.nodes[k];
        let dens = self.marginal(k);
        cdf_from_nodes(nodes, &dens, x)
    }
}

/// Axis indices of a flat cell index, last axis fastest.
fn unravel(cell: usize, dims: &[usize]) -> [usize; 5] {
    let mut idx = [0usize; 5];
    let mut rem = cell;
    for (i, &d) in idx.iter_mut().zip(dims).rev() {
        *i = rem % d;
        rem /= d;
    }
    idx
}

pub(crate) fn cdf_from_nodes(nodes: &[f64], dens: &[f64], x: f64) -> f64 {
    if nodes.len() < 2 || x <= nodes[0] {
        return if x >= nodes[nodes.len() - 1] {
            1.0
        } else {
            0.0
        };
    }
    let mut acc = 0.0;
    for i in 1..nodes.len() {
        let (a, b) = (nodes[i - 1], nodes[i]);
        let (fa, fb) = (dens[i - 1], dens[i]);
        if x >= b {
            acc += 0.5 * (fa + fb) * (b - a);
        } else {
            let t = x - a;
            let fx = fa + (fb - fa) * t / (b - a);
            acc += 0.5 * (fa + fx) * t;
            return acc.min(1.0);
        }
    }
    acc.min(1.0)
}

/// Kolmogorov-Smirnov distance between a sample and the marginal `k` of a
/// grid posterior.
pub fn ks_distance(sample: &[f64], grid: &GridPosterior, k: usize) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let nodes = &grid.nodes[k];
    let dens = grid.marginal(k);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf_from_nodes(nodes, &dens, x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn log_trapezoid(log_values: &[f64], h: f64) -> f64 {
    let m = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let last = log_values.len() - 1;
    let s: f64 = log_values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = if i == 0 || i == last { 0.5 } else { 1.0 };
            w * (v - m).exp()
        })
        .sum();
    m + (s * h).ln()
}

/// ln of the integral over p of Binomial(x | N, p) Beta(p | alpha, 2), by
/// the trapezoid rule in logit p.
fn ln_prevalence_integral(b: &BatchSummary, alpha: f64) -> f64 {
    const NODES: usize = 4001;
    const HALF_WIDTH: f64 = 40.0;
    let h = 2.0 * HALF_WIDTH / (NODES - 1) as f64;
    let vals: Vec<f64> = (0..NODES)
        .map(|i| {
            let t = -HALF_WIDTH + i as f64 * h;
            let p = logistic(t);
            let jac = p * (1.0 - p);
            if !(p > 0.0 && p < 1.0) {
                return f64::NEG_INFINITY;
            }
            binomial_ln_pmf(b.n_positive, b.n_sampled, p) + beta_ln_pdf(p, alpha, 2.0) + jac.ln()
        })
        .collect();
    log_trapezoid(&vals, h)
}

/// ln of the integral over the batch mean of the summary-statistic density
/// times the batch-mean prior, by the trapezoid rule on +-10 conditional
/// standard deviations.
fn ln_batch_mean_integral(b: &BatchSummary, p: &CountryParams, points: usize) -> f64 {
    let (tw, tb) = (p.tau_w(), p.tau_b());
    let x = b.n_positive as f64;
    let prec = x * tw + tb;
    let centre = (x * tw * b.mean_log + tb * p.mu) / prec;
    let sd = prec.recip().sqrt();
    let points = points.max(3);
    let h = 20.0 * sd / (points - 1) as f64;
    let vals: Vec<f64> = (0..points)
        .map(|i| {
            let m = centre - 10.0 * sd + i as f64 * h;
            summary_stat_ln_density(b, m, tw) + normal_ln_pdf_prec(m, p.mu, tb)
        })
        .collect();
    log_trapezoid(&vals, h)
}

/// Posterior density on a parameter grid by direct quadrature of the
/// unnormalized posterior, normalized with the trapezoid rule.
///
/// Latent batch means and prevalences of the summaries survey are integrated
/// numerically rather than in closed form, so the result is independent of
/// the collapsed likelihood used by the sampler. Meant for tiny data sets.
pub fn grid_posterior_oracle(
    model: ModelKind,
    data: &SurveyData,
    priors: &PriorSpec,
    grid: &GridSpec,
) -> Result<GridPosterior> {
    let cells: usize = grid.axes.iter().map(|a| a.n.max(1)).product();
    if cells > MAX_GRID_CELLS {
        return Err(Error::GridTooLarge {
            cells,
            limit: MAX_GRID_CELLS,
        });
    }
    let baseline = if model.uses_baseline() {
        Some(
            data.baseline
                .as_ref()
                .ok_or_else(|| Error::ShapeMismatch("baseline data required".into()))?,
        )
    } else {
        None
    };
    let summaries = if model.uses_summaries() {
        Some(
            data.summaries
                .as_ref()
                .ok_or_else(|| Error::ShapeMismatch("summaries data required".into()))?,
        )
    } else {
        None
    };
    let nodes: [Vec<f64>; 5] = std::array::from_fn(|k| grid.axes[k].nodes());
    let weights: [Vec<f64>; 5] = std::array::from_fn(|k| grid.axes[k].weights());
    let dims: Vec<usize> = nodes.iter().map(Vec::len).collect();

    // prevalence integrals depend on alpha only
    let prevalence: Vec<Vec<f64>> = nodes[4]
        .par_iter()
        .map(|&a| {
            summaries.map_or_else(Vec::new, |s| {
                s.batches()
                    .iter()
                    .map(|b| ln_prevalence_integral(b, a))
                    .collect()
            })
        })
        .collect();

    let log_post: Vec<f64> = (0..cells)
        .into_par_iter()
        .map(|cell| {
            let idx = unravel(cell, &dims);
            let p = CountryParams {
                q: nodes[0][idx[0]],
                mu: nodes[1][idx[1]],
                sigma_b: nodes[2][idx[2]],
                sigma_w: nodes[3][idx[3]],
                alpha: nodes[4][idx[4]],
            };
            if p.validate().is_err() {
                return f64::NEG_INFINITY;
            }
            let mut lp = log_prior(&p, priors);
            if let Some(b) = baseline {
                lp += loglik_baseline(&p, b, model == ModelKind::BaselineOnly);
            }
            if let Some(s) = summaries {
                for (j, b) in s.batches().iter().enumerate() {
                    lp += ln_batch_mean_integral(b, &p, grid.quad_points) + prevalence[idx[4]][j];
                }
            }
            lp
        })
        .collect();

    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinitePosterior(
            "posterior vanishes on the whole grid".into(),
        ));
    }
    let mut density: Vec<f64> = log_post.iter().map(|v| (v - max).exp()).collect();
    let mut total = 0.0;
    for (cell, d) in density.iter().enumerate() {
        let idx = unravel(cell, &dims);
        let w: f64 = (0..5).map(|a| weights[a][idx[a]]).product();
        total += w * d;
    }
    for d in &mut density {
        *d /= total;
    }
    Ok(GridPosterior {
        nodes,
        weights,
        density,
    })
}
