//! Domain types, unit transforms, priors and log-likelihoods for the
//! baseline-only, positives-only and combined models.
//!
//! Concentrations are on the log10 cfu/g scale everywhere past ingestion.
//! A country is described by the batch prevalence `q`, the mean log
//! concentration `mu` of contaminated carcasses, the between- and
//! within-batch standard deviations `sigma_b`, `sigma_w`, and `alpha`, the
//! first shape of the Beta(alpha, 2) law of within-batch prevalence.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::open01;
use crate::stats::{
    beta_ln_pdf, binomial_ln_pmf, gamma_ln_pdf, normal_ln_pdf_prec, normal_ln_pdf_var,
    normal_quantile,
};

/// log10 of the assumed skin weight (100 g) of a whole carcass.
pub const LOG10_SKIN_GRAMS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountryParams {
    pub q: f64,
    pub mu: f64,
    pub sigma_b: f64,
    pub sigma_w: f64,
    pub alpha: f64,
}

impl CountryParams {
    pub fn new(q: f64, mu: f64, sigma_b: f64, sigma_w: f64, alpha: f64) -> Result<Self> {
        let p = CountryParams {
            q,
            mu,
            sigma_b,
            sigma_w,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParams(what.to_string()));
        if !(0.0..=1.0).contains(&self.q) {
            return bad("q must lie in [0, 1]");
        }
        if !self.mu.is_finite() {
            return bad("mu must be finite");
        }
        if !(self.sigma_b > 0.0 && self.sigma_b.is_finite()) {
            return bad("sigma_b must be positive");
        }
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return bad("sigma_w must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        Ok(())
    }

    fn in_support(&self) -> bool {
        (0.0..=1.0).contains(&self.q)
            && self.mu.is_finite()
            && self.sigma_b > 0.0
            && self.sigma_w > 0.0
            && self.alpha > 0.0
            && self.sigma_b.is_finite()
            && self.sigma_w.is_finite()
            && self.alpha.is_finite()
    }

    pub fn tau_b(&self) -> f64 {
        1.0 / (self.sigma_b * self.sigma_b)
    }

    pub fn tau_w(&self) -> f64 {
        1.0 / (self.sigma_w * self.sigma_w)
    }

    /// Bit patterns of the five parameters, used to key random streams.
    pub fn stream_key(&self) -> [u64; 5] {
        [self.q, self.mu, self.sigma_b, self.sigma_w, self.alpha].map(f64::to_bits)
    }

    /// Share of the total log-concentration variance that is within batches.
    pub fn phi(&self) -> f64 {
        let w = self.sigma_w * self.sigma_w;
        w / (w + self.sigma_b * self.sigma_b)
    }

    /// E(p_j | alpha) for p_j ~ Beta(alpha, 2).
    pub fn mean_within_prevalence(&self) -> f64 {
        self.alpha / (self.alpha + 2.0)
    }
}

/// Latent state of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchParams {
    pub contaminated: bool,
    pub p_within: f64,
    pub mu_batch: f64,
}

impl BatchParams {
    /// Draw a batch from its prior given the country parameters.
    /// Consumes exactly four uniforms so that streams stay aligned.
    pub fn draw<R: Rng + ?Sized>(params: &CountryParams, rng: &mut R) -> Self {
        let contaminated = open01(rng) < params.q;
        let (p_within, mu_batch) = draw_contaminated_batch(params, rng);
        BatchParams {
            contaminated,
            p_within,
            mu_batch,
        }
    }
}

/// Draw `(p_j, mu_j)` for a batch known to be contaminated. Consumes exactly
/// three uniforms.
///
/// Beta(alpha, 2) is sampled as `U1^(1/alpha) * U2^(1/(alpha+1))`, the
/// product of independent Beta(alpha, 1) and Beta(alpha + 1, 1) variates.
pub fn draw_contaminated_batch<R: Rng + ?Sized>(params: &CountryParams, rng: &mut R) -> (f64, f64) {
    let u1 = open01(rng);
    let u2 = open01(rng);
    let p = (u1.ln() / params.alpha).exp() * (u2.ln() / (params.alpha + 1.0)).exp();
    let mu_batch = params.mu + params.sigma_b * normal_quantile(open01(rng));
    (p, mu_batch)
}

/// One carcass per batch: `n_batches` sampled, `n_positive` positive, with a
/// log10 cfu/g measurement for each positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSurvey {
    n_batches: u64,
    log_concentrations: Vec<f64>,
}

impl BaselineSurvey {
    pub fn new(n_batches: u64, log_concentrations: Vec<f64>) -> Result<Self> {
        if log_concentrations.len() as u64 > n_batches {
            return Err(Error::InvalidData(format!(
                "{} positives out of {} batches",
                log_concentrations.len(),
                n_batches
            )));
        }
        if let Some(bad) = log_concentrations.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite concentration {bad}"
            )));
        }
        Ok(BaselineSurvey {
            n_batches,
            log_concentrations,
        })
    }

    pub fn empty() -> Self {
        BaselineSurvey {
            n_batches: 0,
            log_concentrations: Vec::new(),
        }
    }

    pub fn n_batches(&self) -> u64 {
        self.n_batches
    }

    pub fn n_positive(&self) -> u64 {
        self.log_concentrations.len() as u64
    }

    pub fn log_concentrations(&self) -> &[f64] {
        &self.log_concentrations
    }
}

/// Summary of the positive carcasses of one batch from a positives-only survey.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub n_sampled: u64,
    pub n_positive: u64,
    pub mean_log: f64,
    /// Sample SD (n - 1 denominator); absent when only one carcass was positive.
    pub sd_log: Option<f64>,
}

impl BatchSummary {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidData(m));
        if self.n_positive == 0 || self.n_positive > self.n_sampled {
            return bad(format!(
                "need 1 <= n_positive <= n_sampled, got {} of {}",
                self.n_positive, self.n_sampled
            ));
        }
        if !self.mean_log.is_finite() {
            return bad("non-finite mean".into());
        }
        match self.sd_log {
            Some(sd) if !(sd >= 0.0 && sd.is_finite()) => bad(format!("invalid SD {sd}")),
            None if self.n_positive >= 2 => bad(format!(
                "SD is required when {} carcasses are positive",
                self.n_positive
            )),
            _ => Ok(()),
        }
    }

    /// Sum of squared deviations, `(x - 1) * SD^2`.
    pub fn sum_sq(&self) -> f64 {
        let sd = self.sd_log.unwrap_or(0.0);
        (self.n_positive as f64 - 1.0) * sd * sd
    }

    fn has_zero_sd(&self) -> bool {
        self.n_positive >= 2 && self.sd_log == Some(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PositiveBatchSummaries {
    batches: Vec<BatchSummary>,
}

impl PositiveBatchSummaries {
    pub fn new(batches: Vec<BatchSummary>) -> Result<Self> {
        for (i, b) in batches.iter().enumerate() {
            b.validate()
                .map_err(|e| Error::InvalidData(format!("summary batch {}: {e}", i + 1)))?;
        }
        Ok(PositiveBatchSummaries { batches })
    }

    pub fn batches(&self) -> &[BatchSummary] {
        &self.batches
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Indices of batches reporting SD = 0 with two or more positives. Such
    /// batches make the likelihood vanish.
    pub fn zero_sd_batches(&self) -> Vec<usize> {
        self.batches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.has_zero_sd())
            .map(|(i, _)| i)
            .collect()
    }
}

/// The data sets available to a fit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurveyData {
    pub baseline: Option<BaselineSurvey>,
    pub summaries: Option<PositiveBatchSummaries>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One carcass per batch, within-batch prevalence fixed at 1.
    #[value(name = "baseline")]
    BaselineOnly,
    /// Several carcasses per batch, positive batches only.
    #[value(name = "positives")]
    PositivesOnly,
    Combined,
}

impl ModelKind {
    pub fn uses_baseline(self) -> bool {
        matches!(self, ModelKind::BaselineOnly | ModelKind::Combined)
    }

    pub fn uses_summaries(self) -> bool {
        matches!(self, ModelKind::PositivesOnly | ModelKind::Combined)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariancePrior {
    /// tau = sigma^-2 ~ Gamma(shape, rate) for both variance components.
    GammaOnPrecision { shape: f64, rate: f64 },
    /// sigma ~ Uniform(0, upper) for both standard deviations.
    UniformOnSd { upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub variance_prior: VariancePrior,
    pub alpha_upper: f64,
    pub mu_precision: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            variance_prior: VariancePrior::GammaOnPrecision {
                shape: 0.001,
                rate: 0.001,
            },
            alpha_upper: 1.0e4,
            mu_precision: 1.0e-4,
        }
    }
}

impl PriorSpec {
    pub fn uniform_sd(upper: f64) -> Self {
        PriorSpec {
            variance_prior: VariancePrior::UniformOnSd { upper },
            ..PriorSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.variance_prior {
            VariancePrior::GammaOnPrecision { shape, rate } => shape > 0.0 && rate > 0.0,
            VariancePrior::UniformOnSd { upper } => upper > 0.0 && upper.is_finite(),
        };
        if !ok || !(self.alpha_upper > 0.0) || !(self.mu_precision > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid prior {self:?}")));
        }
        Ok(())
    }

    fn sd_ln_density(&self, sigma: f64) -> f64 {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return f64::NEG_INFINITY;
        }
        match self.variance_prior {
            VariancePrior::GammaOnPrecision { shape, rate } => {
                // density of tau carried over to sigma: |d tau / d sigma| = 2 sigma^-3
                let tau = 1.0 / (sigma * sigma);
                gamma_ln_pdf(tau, shape, rate) + std::f64::consts::LN_2 - 3.0 * sigma.ln()
            }
            VariancePrior::UniformOnSd { upper } => {
                if sigma <= upper {
                    -upper.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

fn finite_or_err(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::InvalidData(format!("non-finite {what}: {x}")))
    }
}

/// Whole-carcass log10 count to log10 cfu per gram of skin.
pub fn transform_baseline(raw_log10_per_carcass: f64) -> Result<f64> {
    Ok(finite_or_err(raw_log10_per_carcass, "baseline measurement")? - LOG10_SKIN_GRAMS)
}

/// Inverse of [`transform_baseline`].
pub fn untransform_baseline(log10_cfu_per_g: f64) -> f64 {
    log10_cfu_per_g + LOG10_SKIN_GRAMS
}

/// log10 cfu/ml of 400 ml rinse water to log10 cfu/g: `+ log10(400) - log10(100)`.
pub fn transform_rinse(raw_log10_per_ml: f64) -> Result<f64> {
    Ok(finite_or_err(raw_log10_per_ml, "rinse measurement")? + 4.0_f64.log10())
}

/// Log-likelihood of the baseline survey.
///
/// Batch means are integrated out: with one carcass per batch, a positive
/// measurement is N(mu, sigma_b^2 + sigma_w^2). The prevalence factor is
/// Binomial(J' | N', q) when every carcass of a contaminated batch is
/// assumed positive, Binomial(J' | N', q alpha / (alpha + 2)) otherwise.
pub fn loglik_baseline(
    params: &CountryParams,
    data: &BaselineSurvey,
    assume_full_within_prevalence: bool,
) -> f64 {
    if !params.in_support() {
        return f64::NEG_INFINITY;
    }
    let success = if assume_full_within_prevalence {
        params.q
    } else {
        params.q * params.mean_within_prevalence()
    };
    let total_var = params.sigma_b * params.sigma_b + params.sigma_w * params.sigma_w;
    binomial_ln_pmf(data.n_positive(), data.n_batches(), success)
        + data
            .log_concentrations()
            .iter()
            .map(|&y| normal_ln_pdf_var(y, params.mu, total_var))
            .sum::<f64>()
}

/// Log density of (batch mean, SD) given the batch mean and within-batch
/// precision: the mean is N(mu_j, precision x tau_w) and the sum of squares
/// `(x-1) SD^2` is Gamma((x-1)/2, rate tau_w/2). Single positives carry only
/// the mean term.
pub fn summary_stat_ln_density(batch: &BatchSummary, mu_batch: f64, tau_w: f64) -> f64 {
    let x = batch.n_positive as f64;
    let mean_term = normal_ln_pdf_prec(batch.mean_log, mu_batch, x * tau_w);
    mean_term + sd_term(batch, tau_w)
}

fn sd_term(batch: &BatchSummary, tau_w: f64) -> f64 {
    if batch.n_positive < 2 {
        return 0.0;
    }
    let dof = batch.n_positive as f64 - 1.0;
    let ss = batch.sum_sq();
    if ss <= 0.0 {
        return f64::NEG_INFINITY;
    }
    gamma_ln_pdf(ss, 0.5 * dof, 0.5 * tau_w)
}

/// Joint log-likelihood of the positives-only survey and its latent batch
/// means and within-batch prevalences, including their hierarchical priors.
pub fn loglik_summaries(
    params: &CountryParams,
    batch_mus: &[f64],
    p_within: &[f64],
    data: &PositiveBatchSummaries,
) -> Result<f64> {
    let n = data.len();
    if batch_mus.len() != n || p_within.len() != n {
        return Err(Error::InvalidData(format!(
            "expected {n} latent values, got {} batch means and {} prevalences",
            batch_mus.len(),
            p_within.len()
        )));
    }
    if !params.in_support() {
        return Ok(f64::NEG_INFINITY);
    }
    let (tau_w, tau_b) = (params.tau_w(), params.tau_b());
    let mut total = 0.0;
    for ((b, &mu_j), &p) in data.batches().iter().zip(batch_mus).zip(p_within) {
        total += binomial_ln_pmf(b.n_positive, b.n_sampled, p)
            + summary_stat_ln_density(b, mu_j, tau_w)
            + normal_ln_pdf_prec(mu_j, params.mu, tau_b)
            + beta_ln_pdf(p, params.alpha, 2.0);
    }
    Ok(total)
}

/// Log-likelihood of the positives-only survey with the latent batch means
/// and prevalences integrated out analytically: the batch mean is
/// N(mu, sigma_b^2 + sigma_w^2 / x) and the positive count is
/// Beta-Binomial(N, alpha, 2).
pub fn loglik_summaries_marginal(params: &CountryParams, data: &PositiveBatchSummaries) -> f64 {
    if !params.in_support() {
        return f64::NEG_INFINITY;
    }
    let tau_w = params.tau_w();
    let sb2 = params.sigma_b * params.sigma_b;
    let sw2 = params.sigma_w * params.sigma_w;
    let a = params.alpha;
    // ln B(alpha, 2) = -ln(alpha) - ln(alpha + 1)
    let ln_beta_prior = -(a.ln() + (a + 1.0).ln());
    data.batches()
        .iter()
        .map(|b| {
            let (n, x) = (b.n_sampled as f64, b.n_positive as f64);
            let ln_bb = crate::stats::ln_choose(b.n_sampled, b.n_positive)
                + ln_gamma(x + a)
                + ln_gamma(n - x + 2.0)
                - ln_gamma(n + a + 2.0)
                - ln_beta_prior;
            ln_bb + normal_ln_pdf_var(b.mean_log, params.mu, sb2 + sw2 / x) + sd_term(b, tau_w)
        })
        .sum()
}

/// Log prior density over (q, mu, sigma_b, sigma_w, alpha) in their natural
/// units; `-inf` outside the support.
pub fn log_prior(params: &CountryParams, spec: &PriorSpec) -> f64 {
    if !(0.0..=1.0).contains(&params.q) || !params.mu.is_finite() {
        return f64::NEG_INFINITY;
    }
    if !(params.alpha > 0.0 && params.alpha <= spec.alpha_upper) {
        return f64::NEG_INFINITY;
    }
    normal_ln_pdf_prec(params.mu, 0.0, spec.mu_precision)
        + spec.sd_ln_density(params.sigma_b)
        + spec.sd_ln_density(params.sigma_w)
        - spec.alpha_upper.ln()
}

/// Normal Q-Q pairs `(theoretical, sample)`: standardized sorted values
/// against standard normal quantiles at plotting positions (i - 0.5) / n.
pub fn qq_points(values: &[f64]) -> Result<Vec<(f64, f64)>> {
    let n = values.len();
    if n < 3 {
        return Err(Error::InvalidData(format!(
            "need at least 3 values for a Q-Q plot, got {n}"
        )));
    }
    let m = crate::stats::mean(values);
    let sd = crate::stats::variance(values).sqrt();
    if !(sd > 0.0) {
        return Err(Error::InvalidData("values have zero spread".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let prob = (i as f64 + 0.5) / n as f64;
            (normal_quantile(prob), (v - m) / sd)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table2() -> CountryParams {
        CountryParams::new(0.15, 2.4, 0.66, 0.74, 85.0).unwrap()
    }

    #[test]
    fn baseline_transform() {
        assert_eq!(transform_baseline(4.0).unwrap(), 2.0);
        assert_eq!(transform_baseline(2.0).unwrap(), 0.0);
        assert!((transform_baseline(5.31).unwrap() - 3.31).abs() < 1e-15);
        assert!(transform_baseline(f64::NAN).is_err());
        assert!(transform_baseline(f64::INFINITY).is_err());
        for &v in &[-3.7, 0.0, 1.25, 8.0] {
            assert_eq!(untransform_baseline(transform_baseline(v).unwrap()), v);
        }
    }

    #[test]
    fn rinse_transform() {
        let l4 = 4.0_f64.log10();
        assert!((transform_rinse(2.0).unwrap() - 2.602_059_991_327_962).abs() < 1e-15);
        assert!((transform_rinse(0.0).unwrap() - 0.602_059_991_327_962).abs() < 1e-15);
        assert!(transform_rinse(-l4).unwrap().abs() < 1e-15);
        assert!(transform_rinse(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn phi_at_table2_point() {
        assert!((table2().phi() - 0.557).abs() < 5e-4);
    }

    #[test]
    fn param_validation() {
        assert!(CountryParams::new(1.2, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(CountryParams::new(0.2, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(CountryParams::new(0.2, 0.0, 1.0, -1.0, 1.0).is_err());
        assert!(CountryParams::new(0.2, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(CountryParams::new(0.2, f64::NAN, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn baseline_binomial_part() {
        let p = CountryParams::new(0.5, 2.0, 1.0, 1.0, 10.0).unwrap();
        let data = BaselineSurvey::new(2, vec![2.0]).unwrap();
        let ll = loglik_baseline(&p, &data, true);
        // Binomial(1 | 2, 0.5) = 0.5 and N(2 | 2, var 2)
        let expected = 0.5_f64.ln() + normal_ln_pdf_var(2.0, 2.0, 2.0);
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn baseline_binomial_mle() {
        let data = BaselineSurvey::new(617, vec![2.0; 88]).unwrap();
        let at = |q: f64| {
            let p = CountryParams::new(q, 2.0, 0.5, 0.5, 1.0).unwrap();
            loglik_baseline(&p, &data, true)
        };
        let grid: Vec<f64> = (1..10_000).map(|i| i as f64 / 10_000.0).collect();
        let best = grid
            .iter()
            .copied()
            .max_by(|a, b| at(*a).total_cmp(&at(*b)))
            .unwrap();
        assert!((best - 88.0 / 617.0).abs() < 1e-4, "{best}");
    }

    #[test]
    fn combined_prevalence_limit() {
        let data = BaselineSurvey::new(617, vec![1.5, 2.5, 3.0]).unwrap();
        let mut p = table2();
        p.alpha = 1e12;
        let full = loglik_baseline(&p, &data, true);
        let combined = loglik_baseline(&p, &data, false);
        assert!((full - combined).abs() < 1e-8);
        p.alpha = 2.0;
        assert!(loglik_baseline(&p, &data, false) != full);
    }

    #[test]
    fn combined_success_probability_increases_with_alpha() {
        let q = 0.3;
        let mut last = 0.0;
        for a in [0.1, 1.0, 5.0, 50.0, 500.0] {
            let p = CountryParams::new(q, 0.0, 1.0, 1.0, a).unwrap();
            let s = p.q * p.mean_within_prevalence();
            assert!(s > last);
            last = s;
        }
    }

    #[test]
    fn off_support_is_neg_infinity() {
        let data = BaselineSurvey::new(10, vec![1.0, 2.0]).unwrap();
        let mut p = table2();
        p.sigma_w = 0.0;
        assert_eq!(loglik_baseline(&p, &data, true), f64::NEG_INFINITY);
        let s = PositiveBatchSummaries::new(vec![BatchSummary {
            n_sampled: 5,
            n_positive: 4,
            mean_log: 2.0,
            sd_log: Some(0.5),
        }])
        .unwrap();
        assert_eq!(loglik_summaries_marginal(&p, &s), f64::NEG_INFINITY);
        assert_eq!(
            loglik_summaries(&p, &[2.0], &[0.9], &s).unwrap(),
            f64::NEG_INFINITY
        );
        let ok = table2();
        assert!(loglik_baseline(&ok, &data, false).is_finite());
        assert!(loglik_summaries_marginal(&ok, &s).is_finite());
    }

    #[test]
    fn single_positive_has_no_sd_term() {
        let b = BatchSummary {
            n_sampled: 5,
            n_positive: 1,
            mean_log: 2.3,
            sd_log: None,
        };
        let tau_w = 1.7;
        assert!(
            (summary_stat_ln_density(&b, 2.0, tau_w) - normal_ln_pdf_prec(2.3, 2.0, tau_w)).abs()
                < 1e-14
        );
    }

    #[test]
    fn full_prevalence_full_count_binomial_is_zero() {
        assert_eq!(binomial_ln_pmf(7, 7, 1.0), 0.0);
    }

    #[test]
    fn zero_sd_is_rejected_by_likelihood() {
        let s = PositiveBatchSummaries::new(vec![BatchSummary {
            n_sampled: 5,
            n_positive: 3,
            mean_log: 2.0,
            sd_log: Some(0.0),
        }])
        .unwrap();
        assert_eq!(s.zero_sd_batches(), vec![0]);
        assert_eq!(loglik_summaries_marginal(&table2(), &s), f64::NEG_INFINITY);
    }

    #[test]
    fn summary_validation() {
        let b = |n, x, sd| BatchSummary {
            n_sampled: n,
            n_positive: x,
            mean_log: 1.0,
            sd_log: sd,
        };
        assert!(PositiveBatchSummaries::new(vec![b(5, 0, None)]).is_err());
        assert!(PositiveBatchSummaries::new(vec![b(5, 6, Some(1.0))]).is_err());
        assert!(PositiveBatchSummaries::new(vec![b(5, 3, None)]).is_err());
        assert!(PositiveBatchSummaries::new(vec![b(5, 3, Some(-0.1))]).is_err());
        assert!(PositiveBatchSummaries::new(vec![b(5, 1, None), b(5, 5, Some(0.3))]).is_ok());
        assert!(BaselineSurvey::new(2, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn prior_values() {
        let spec = PriorSpec::default();
        let mut p = table2();
        p.q = 1.2;
        assert_eq!(log_prior(&p, &spec), f64::NEG_INFINITY);

        // flat alpha prior contributes -ln(1e4) wherever alpha is in range
        let mut a = table2();
        a.alpha = 5000.0;
        let mut b = a;
        b.alpha = 20.0;
        assert!((log_prior(&a, &spec) - log_prior(&b, &spec)).abs() < 1e-12);
        let without_alpha = normal_ln_pdf_prec(a.mu, 0.0, 1e-4)
            + spec.sd_ln_density(a.sigma_b)
            + spec.sd_ln_density(a.sigma_w);
        assert!((log_prior(&a, &spec) - without_alpha - (1e-4_f64).ln()).abs() < 1e-12);
        a.alpha = 2e4;
        assert_eq!(log_prior(&a, &spec), f64::NEG_INFINITY);

        let uni = PriorSpec::uniform_sd(10.0);
        let at = |sb: f64| {
            let mut p = table2();
            p.sigma_b = sb;
            log_prior(&p, &uni)
        };
        assert_eq!(at(0.1), at(9.5));
        assert_eq!(at(10.5), f64::NEG_INFINITY);
    }

    #[test]
    fn gamma_prior_on_precision_integrates_to_one_over_sigma() {
        // numerically integrate the induced sigma density for a proper Gamma(2, 1)
        let spec = PriorSpec {
            variance_prior: VariancePrior::GammaOnPrecision {
                shape: 2.0,
                rate: 1.0,
            },
            ..PriorSpec::default()
        };
        let n = 200_000;
        let (lo, hi) = (1e-3_f64.ln(), 1e3_f64.ln());
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|i| {
                let s = (lo + i as f64 * h).exp();
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * spec.sd_ln_density(s).exp() * s * h
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn qq_three_points() {
        let pts = qq_points(&[-1.0, 0.0, 1.0]).unwrap();
        let expected = [1.0 / 6.0, 0.5, 5.0 / 6.0].map(normal_quantile);
        for ((t, s), e) in pts.iter().zip(expected) {
            assert!((t - e).abs() < 1e-12);
            assert!(s.abs() <= 1.0 + 1e-12);
        }
        // symmetric input gives antisymmetric pairs
        let sym = qq_points(&[-2.0, -0.5, 0.5, 2.0, 0.0]).unwrap();
        let n = sym.len();
        for i in 0..n {
            assert!((sym[i].0 + sym[n - 1 - i].0).abs() < 1e-12);
            assert!((sym[i].1 + sym[n - 1 - i].1).abs() < 1e-12);
        }
        assert!(qq_points(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn qq_standard_normal_sample_is_near_identity() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = crate::rng::Seed::new(5).rng();
        let v: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let pts = qq_points(&v).unwrap();
        let central = &pts[250..4750];
        let worst = central
            .iter()
            .map(|(t, s)| (t - s).abs())
            .fold(0.0_f64, f64::max);
        assert!(worst < 0.1, "{worst}");
    }

    #[test]
    fn batch_draw_beta_alpha2_moments() {
        let params = CountryParams::new(0.3, 1.0, 0.5, 0.5, 3.0).unwrap();
        let mut rng = crate::rng::Seed::new(11).rng();
        let n = 200_000;
        let draws: Vec<BatchParams> = (0..n)
            .map(|_| BatchParams::draw(&params, &mut rng))
            .collect();
        let p: Vec<f64> = draws.iter().map(|b| b.p_within).collect();
        let mu: Vec<f64> = draws.iter().map(|b| b.mu_batch).collect();
        let frac = draws.iter().filter(|b| b.contaminated).count() as f64 / n as f64;
        // Beta(3, 2): mean 0.6, variance 0.04
        assert!((crate::stats::mean(&p) - 0.6).abs() < 3e-3);
        assert!((crate::stats::variance(&p) - 0.04).abs() < 1e-3);
        assert!((crate::stats::mean(&mu) - 1.0).abs() < 5e-3);
        assert!((crate::stats::variance(&mu).sqrt() - 0.5).abs() < 5e-3);
        assert!((frac - 0.3).abs() < 5e-3);
    }

    #[test]
    fn summary_density_is_sufficient_for_raw_values() {
        let ys = [1.7, 2.9, 2.2];
        let mean = ys.iter().sum::<f64>() / 3.0;
        let sd = (ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / 2.0).sqrt();
        let b = BatchSummary {
            n_sampled: 10,
            n_positive: 3,
            mean_log: mean,
            sd_log: Some(sd),
        };
        let mut raw = Vec::new();
        let mut summ = Vec::new();
        for i in 0..60 {
            let mu_j = -1.0 + 6.0 * i as f64 / 59.0;
            for k in 0..60 {
                let tau_w = 0.1 + 9.9 * k as f64 / 59.0;
                raw.push(
                    ys.iter()
                        .map(|&y| normal_ln_pdf_prec(y, mu_j, tau_w))
                        .sum::<f64>(),
                );
                summ.push(summary_stat_ln_density(&b, mu_j, tau_w));
            }
        }
        let normalize = |v: &mut Vec<f64>| {
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            v.iter_mut().for_each(|x| *x -= lse);
        };
        normalize(&mut raw);
        normalize(&mut summ);
        let err = raw
            .iter()
            .zip(&summ)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }
}
