//! Relative risk measures for batch criteria and their nested Monte Carlo
//! estimators.
//!
//! For fixed country parameters the inner simulation draws `L` contaminated
//! batches `(p_l, mu_l)` and then `M` servings per batch, giving a mean
//! serving risk `s_l`. With `pm_l` the closed-form probability that batch
//! `l` passes the criterion:
//!
//! ```text
//! P(ill)         = q mean_l(p_l s_l)
//! P(MC met)      = 1 - q mean_l(1 - pm_l)
//! P(ill, MC met) = q mean_l(p_l s_l pm_l)
//! RR             = P(ill, MC met) / P(MC met) / P(ill)
//! MRRR           = RR P(MC met)
//! ```
//!
//! All three share one batch/serving ensemble, so `RR = 1` exactly when
//! `c = n`. Criteria evaluated on the same posterior draw share the
//! ensemble as well.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{met_prob, Criterion};
use crate::diagnostics::mc_standard_error;
use crate::error::{Error, Result};
use crate::mcmc::PosteriorSample;
use crate::model::{draw_contaminated_batch, CountryParams};
use crate::qmra::{mean_serving_risk, ServingModel};
use crate::rng::Seed;
use crate::stats::quantile_sorted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarloPlan {
    /// Batches per parameter draw.
    pub l: usize,
    /// Servings per batch.
    pub m: usize,
}

impl Default for MonteCarloPlan {
    fn default() -> Self {
        MonteCarloPlan { l: 40, m: 10 }
    }
}

impl MonteCarloPlan {
    pub fn new(l: usize, m: usize) -> Result<Self> {
        if l == 0 || m == 0 {
            return Err(Error::InvalidConfig(format!(
                "Monte Carlo plan needs L >= 1 and M >= 1, got L={l}, M={m}"
            )));
        }
        Ok(MonteCarloPlan { l, m })
    }

    /// One batch and one serving per parameter draw.
    pub fn single() -> Self {
        MonteCarloPlan { l: 1, m: 1 }
    }
}

/// Simulated contaminated batches for one parameter vector.
struct Ensemble {
    p: Vec<f64>,
    mu: Vec<f64>,
    /// Mean serving risk per batch.
    serving: Vec<f64>,
}

fn ensemble<S: ServingModel, R: RngCore + ?Sized>(
    params: &CountryParams,
    p_fixed: Option<f64>,
    plan: MonteCarloPlan,
    model: Option<&S>,
    rng: &mut R,
) -> Ensemble {
    let mut p = Vec::with_capacity(plan.l);
    let mut mu = Vec::with_capacity(plan.l);
    for _ in 0..plan.l {
        let (pl, ml) = draw_contaminated_batch(params, rng);
        p.push(p_fixed.unwrap_or(pl));
        mu.push(ml);
    }
    let serving = match model {
        Some(s) => mu
            .iter()
            .map(|&m| mean_serving_risk(s, m, params.sigma_w, plan.m, rng))
            .collect(),
        None => Vec::new(),
    };
    Ensemble { p, mu, serving }
}

impl Ensemble {
    fn ill(&self, q: f64) -> f64 {
        q * mean_of(self.p.iter().zip(&self.serving).map(|(p, s)| p * s))
    }

    fn met_probs(&self, sigma_w: f64, crit: &Criterion) -> Vec<f64> {
        self.p
            .iter()
            .zip(&self.mu)
            .map(|(&p, &m)| met_prob(p, m, sigma_w, crit))
            .collect()
    }
}

fn mean_of(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    it.sum::<f64>() / n as f64
}

/// Per-draw risk quantities for one criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawRisk {
    pub p_ill: f64,
    pub p_met: f64,
    pub p_ill_and_met: f64,
}

impl DrawRisk {
    fn from_ensemble(e: &Ensemble, params: &CountryParams, crit: &Criterion) -> Self {
        let q = params.q;
        let pm = e.met_probs(params.sigma_w, crit);
        DrawRisk {
            p_ill: e.ill(q),
            p_met: 1.0 - q * mean_of(pm.iter().map(|v| 1.0 - v)),
            p_ill_and_met: q * mean_of(
                e.p.iter()
                    .zip(&e.serving)
                    .zip(&pm)
                    .map(|((p, s), m)| p * s * m),
            ),
        }
    }

    pub fn rr(&self) -> Result<f64> {
        if !(self.p_ill > 0.0) {
            return Err(Error::UndefinedRatio(format!(
                "probability of illness is {}",
                self.p_ill
            )));
        }
        if !(self.p_met > 0.0) {
            return Err(Error::UndefinedRatio(
                "no batch can meet the criterion".into(),
            ));
        }
        Ok(self.p_ill_and_met / self.p_met / self.p_ill)
    }

    pub fn mrrr(&self) -> Result<f64> {
        Ok(self.rr()? * self.p_met)
    }
}

/// `q (1/L) sum_l p_l (1/M) sum_m P0(ill | serving)`.
pub fn p_ill_unconditional<S: ServingModel, R: RngCore + ?Sized>(
    params: &CountryParams,
    plan: MonteCarloPlan,
    model: &S,
    rng: &mut R,
) -> f64 {
    if params.q == 0.0 {
        return 0.0;
    }
    ensemble(params, None, plan, Some(model), rng).ill(params.q)
}

/// `q (1/L) sum_l P(MC met | batch l) + 1 - q`. Draws the same batches as the
/// other estimators for a given stream but no servings.
pub fn p_mc_met_param<R: RngCore + ?Sized>(
    params: &CountryParams,
    crit: &Criterion,
    plan: MonteCarloPlan,
    rng: &mut R,
) -> f64 {
    let e = ensemble::<crate::qmra::QmraSpec, _>(params, None, plan, None, rng);
    let pm = e.met_probs(params.sigma_w, crit);
    1.0 - params.q * mean_of(pm.iter().map(|v| 1.0 - v))
}

/// `q (1/L) sum_l p_l s_l P(MC met | batch l)`.
pub fn p_ill_and_met<S: ServingModel, R: RngCore + ?Sized>(
    params: &CountryParams,
    crit: &Criterion,
    plan: MonteCarloPlan,
    model: &S,
    rng: &mut R,
) -> f64 {
    let e = ensemble(params, None, plan, Some(model), rng);
    DrawRisk::from_ensemble(&e, params, crit).p_ill_and_met
}

/// All per-draw quantities from one shared ensemble.
pub fn draw_risk<S: ServingModel, R: RngCore + ?Sized>(
    params: &CountryParams,
    crit: &Criterion,
    p_fixed: Option<f64>,
    plan: MonteCarloPlan,
    model: &S,
    rng: &mut R,
) -> DrawRisk {
    let e = ensemble(params, p_fixed, plan, Some(model), rng);
    DrawRisk::from_ensemble(&e, params, crit)
}

/// Relative risk for accepted batches at fixed country parameters.
pub fn rr_param<S: ServingModel, R: RngCore + ?Sized>(
    params: &CountryParams,
    crit: &Criterion,
    plan: MonteCarloPlan,
    model: &S,
    rng: &mut R,
) -> Result<f64> {
    draw_risk(params, crit, None, plan, model, rng).rr()
}

/// Minimum relative residual risk, `RR P(MC met)`. `p_fixed` replaces every
/// simulated within-batch prevalence, keeping the random stream unchanged.
pub fn mrrr_param<S: ServingModel, R: RngCore + ?Sized>(
    params: &CountryParams,
    crit: &Criterion,
    p_fixed: Option<f64>,
    plan: MonteCarloPlan,
    model: &S,
    rng: &mut R,
) -> Result<f64> {
    if let Some(p) = p_fixed {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParams(format!(
                "p_fixed = {p} is not a probability"
            )));
        }
    }
    draw_risk(params, crit, p_fixed, plan, model, rng).mrrr()
}

/// Per-draw risk for every criterion, one shared ensemble per draw. Each
/// draw's stream is keyed by its parameter values, which makes the
/// per-draw results independent of draw order.
fn per_draw_risks<S: ServingModel, R: RngCore + ?Sized>(
    sample: &PosteriorSample,
    criteria: &[Criterion],
    plan: MonteCarloPlan,
    model: &S,
    rng: &mut R,
) -> Vec<Vec<DrawRisk>> {
    let base = Seed::from_rng(rng);
    sample
        .draws()
        .par_iter()
        .map(|params| {
            let mut r = base.child_keyed(&params.stream_key()).rng();
            let e = ensemble(params, None, plan, Some(model), &mut r);
            criteria
                .iter()
                .map(|c| DrawRisk::from_ensemble(&e, params, c))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRr {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    /// Monte Carlo standard error of `mean`.
    pub se: f64,
    pub mrrr_mean: f64,
    pub reject_mean: f64,
    /// RR per retained draw, in draw order, undefined draws omitted.
    pub rr: Vec<f64>,
    /// `1 - P(MC met)` for the same draws as `rr`.
    pub reject: Vec<f64>,
    /// Draws where RR was undefined.
    pub n_excluded: usize,
}

fn summarize_series(
    risks: &[DrawRisk],
    n_chains: usize,
) -> std::result::Result<(PosteriorRr, f64), String> {
    let mut rr = Vec::with_capacity(risks.len());
    let mut reject = Vec::with_capacity(risks.len());
    let mut mrrr = Vec::with_capacity(risks.len());
    for d in risks {
        if let Ok(v) = d.rr() {
            rr.push(v);
            reject.push(1.0 - d.p_met);
            mrrr.push(v * d.p_met);
        }
    }
    let n_excluded = risks.len() - rr.len();
    if rr.is_empty() {
        return Err(format!("RR undefined at all {} draws", risks.len()));
    }
    let mean = rr.iter().sum::<f64>() / rr.len() as f64;
    let mut sorted = rr.clone();
    sorted.sort_by(f64::total_cmp);
    let se = if n_excluded == 0 {
        mc_standard_error(&rr, n_chains)
    } else {
        mc_standard_error(&rr, 1)
    };
    let summary = PosteriorRr {
        mean,
        lo: quantile_sorted(&sorted, 0.025),
        hi: quantile_sorted(&sorted, 0.975),
        se,
        mrrr_mean: mrrr.iter().sum::<f64>() / mrrr.len() as f64,
        reject_mean: reject.iter().sum::<f64>() / reject.len() as f64,
        rr,
        reject,
        n_excluded,
    };
    // ratio of integrated probabilities over the same draws
    let t = risks.len() as f64;
    let (ill, met, joint) = risks.iter().fold((0.0, 0.0, 0.0), |(a, b, c), d| {
        (a + d.p_ill, b + d.p_met, c + d.p_ill_and_met)
    });
    let rpr = if ill > 0.0 && met > 0.0 {
        t * joint / (met * ill)
    } else {
        f64::NAN
    };
    Ok((summary, rpr))
}

/// Posterior distribution of RR over the retained draws (the outer loop of
/// the two-dimensional simulation).
pub fn posterior_rr<S: ServingModel, R: RngCore + ?Sized>(
    sample: &PosteriorSample,
    crit: &Criterion,
    plan: MonteCarloPlan,
    model: &S,
    rng: &mut R,
) -> Result<PosteriorRr> {
    if sample.is_empty() {
        return Err(Error::InvalidData("posterior has no draws".into()));
    }
    let risks: Vec<DrawRisk> = per_draw_risks(sample, std::slice::from_ref(crit), plan, model, rng)
        .into_iter()
        .map(|v| v[0])
        .collect();
    summarize_series(&risks, sample.n_chains())
        .map(|(s, _)| s)
        .map_err(Error::UndefinedRatio)
}

/// Relative posterior risk: the ratio of the posterior probabilities of
/// illness with and without the criterion, parameter uncertainty integrated
/// before the ratio is taken.
///
/// The inner plan only needs to be unbiased, so `MonteCarloPlan::single()`
/// suffices when the posterior has many draws.
pub fn rpr<S: ServingModel, R: RngCore + ?Sized>(
    sample: &PosteriorSample,
    crit: &Criterion,
    plan: MonteCarloPlan,
    model: &S,
    rng: &mut R,
) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidData("posterior has no draws".into()));
    }
    let base = Seed::from_rng(rng);
    let risks: Vec<DrawRisk> = sample
        .draws()
        .par_iter()
        .map(|params| {
            let mut r = base.child_keyed(&params.stream_key()).rng();
            draw_risk(params, crit, None, plan, model, &mut r)
        })
        .collect();
    let t = risks.len() as f64;
    let (ill, met, joint) = risks.iter().fold((0.0, 0.0, 0.0), |(a, b, c), d| {
        (a + d.p_ill, b + d.p_met, c + d.p_ill_and_met)
    });
    if !(ill > 0.0) || !(met > 0.0) {
        return Err(Error::UndefinedRatio(format!(
            "posterior probability of illness {} or of acceptance {} is zero",
            ill / t,
            met / t
        )));
    }
    Ok(t * joint / (met * ill))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskGridCell {
    pub criterion: Criterion,
    pub rr_mean: f64,
    pub rr_lo: f64,
    pub rr_hi: f64,
    pub rpr: f64,
    pub mrrr_mean: f64,
    pub reject_pct_mean: f64,
    pub mc_se: f64,
    pub n_excluded: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskGrid {
    pub cells: Vec<RiskGridCell>,
    /// Per-draw `(reject, rr)` series, one per cell.
    pub series: Vec<PosteriorRr>,
}

/// Every measure for every criterion, on one shared simulation per draw.
/// Cells whose measures are undefined carry an error message and NaNs.
pub fn rr_grid<S: ServingModel, R: RngCore + ?Sized>(
    sample: &PosteriorSample,
    criteria: &[Criterion],
    plan: MonteCarloPlan,
    model: &S,
    rng: &mut R,
) -> Result<RiskGrid> {
    if criteria.is_empty() {
        return Err(Error::InvalidConfig("no criteria requested".into()));
    }
    if sample.is_empty() {
        return Err(Error::InvalidData("posterior has no draws".into()));
    }
    let per_draw = per_draw_risks(sample, criteria, plan, model, rng);
    let mut cells = Vec::with_capacity(criteria.len());
    let mut series = Vec::with_capacity(criteria.len());
    for (k, crit) in criteria.iter().enumerate() {
        let risks: Vec<DrawRisk> = per_draw.iter().map(|v| v[k]).collect();
        match summarize_series(&risks, sample.n_chains()) {
            Ok((s, rpr)) => {
                cells.push(RiskGridCell {
                    criterion: *crit,
                    rr_mean: s.mean,
                    rr_lo: s.lo,
                    rr_hi: s.hi,
                    rpr,
                    mrrr_mean: s.mrrr_mean,
                    reject_pct_mean: 100.0 * s.reject_mean,
                    mc_se: s.se,
                    n_excluded: s.n_excluded,
                    error: None,
                });
                series.push(s);
            }
            Err(msg) => {
                cells.push(RiskGridCell {
                    criterion: *crit,
                    rr_mean: f64::NAN,
                    rr_lo: f64::NAN,
                    rr_hi: f64::NAN,
                    rpr: f64::NAN,
                    mrrr_mean: f64::NAN,
                    reject_pct_mean: f64::NAN,
                    mc_se: f64::NAN,
                    n_excluded: risks.len(),
                    error: Some(msg),
                });
                series.push(PosteriorRr {
                    mean: f64::NAN,
                    lo: f64::NAN,
                    hi: f64::NAN,
                    se: f64::NAN,
                    mrrr_mean: f64::NAN,
                    reject_mean: f64::NAN,
                    rr: Vec::new(),
                    reject: Vec::new(),
                    n_excluded: risks.len(),
                });
            }
        }
    }
    Ok(RiskGrid { cells, series })
}

/// `n,c,m,rr_mean,rr_lo,rr_hi,rpr,mrrr_mean,reject_pct_mean,mc_se`
pub fn write_grid_csv<W: std::io::Write>(out: W, cells: &[RiskGridCell]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n",
        "c",
        "m",
        "rr_mean",
        "rr_lo",
        "rr_hi",
        "rpr",
        "mrrr_mean",
        "reject_pct_mean",
        "mc_se",
    ])?;
    for c in cells {
        w.write_record([
            c.criterion.n.to_string(),
            c.criterion.c.to_string(),
            c.criterion.m.to_string(),
            c.rr_mean.to_string(),
            c.rr_lo.to_string(),
            c.rr_hi.to_string(),
            c.rpr.to_string(),
            c.mrrr_mean.to_string(),
            c.reject_pct_mean.to_string(),
            c.mc_se.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<grid>", e))?;
    Ok(())
}

/// `criterion,index,reject,rr`, one row per draw per cell.
pub fn write_series_csv<W: std::io::Write>(out: W, grid: &RiskGrid) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["criterion", "index", "reject", "rr"])?;
    for (cell, s) in grid.cells.iter().zip(&grid.series) {
        let name = cell.criterion.to_string();
        for (i, (rj, rr)) in s.reject.iter().zip(&s.rr).enumerate() {
            w.write_record([name.clone(), i.to_string(), rj.to_string(), rr.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<series>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmra::{Dist, DoseResponse, QmraSpec, Scaled};
    use crate::stats::{binomial_cdf, normal_sf};

    fn table2() -> CountryParams {
        CountryParams::new(0.15, 2.4, 0.66, 0.74, 85.0).unwrap()
    }

    fn step_spec() -> QmraSpec {
        QmraSpec {
            version: "step".into(),
            serving_weight: Dist::Fixed { value: 1.0 },
            transfer: Dist::Fixed { value: 1.0 },
            dose_response: DoseResponse::Step { threshold: 1 },
        }
    }

    #[test]
    fn zero_prevalence() {
        let mut p = table2();
        p.q = 0.0;
        let spec = QmraSpec::default();
        let mut rng = Seed::new(1).rng();
        let plan = MonteCarloPlan::default();
        assert_eq!(p_ill_unconditional(&p, plan, &spec, &mut rng), 0.0);
        assert_eq!(
            p_mc_met_param(&p, &Criterion::default(), plan, &mut rng),
            1.0
        );
        let e = mrrr_param(&p, &Criterion::default(), None, plan, &spec, &mut rng).unwrap_err();
        assert!(matches!(e, Error::UndefinedRatio(_)));
    }

    #[test]
    fn sure_acceptance_gives_unit_rr() {
        let spec = QmraSpec::default();
        let all = Criterion::new(5, 5, 100.0).unwrap();
        for seed in 0..20 {
            let mut rng = Seed::new(seed).rng();
            let d = draw_risk(
                &table2(),
                &all,
                None,
                MonteCarloPlan::default(),
                &spec,
                &mut rng,
            );
            assert_eq!(d.p_met, 1.0);
            assert_eq!(d.p_ill_and_met, d.p_ill);
            assert_eq!(d.rr().unwrap(), 1.0);
        }
        let mut r1 = Seed::new(3).rng();
        let mut r2 = Seed::new(3).rng();
        let plan = MonteCarloPlan::default();
        assert_eq!(
            p_ill_and_met(&table2(), &all, plan, &spec, &mut r1),
            p_ill_unconditional(&table2(), plan, &spec, &mut r2)
        );
        assert_eq!(p_mc_met_param(&table2(), &all, plan, &mut r1), 1.0);
    }

    #[test]
    fn no_transfer_no_risk() {
        let spec = QmraSpec {
            transfer: Dist::Fixed { value: 0.0 },
            ..QmraSpec::default()
        };
        let mut rng = Seed::new(4).rng();
        let plan = MonteCarloPlan::default();
        assert_eq!(
            p_ill_and_met(&table2(), &Criterion::default(), plan, &spec, &mut rng),
            0.0
        );
        assert!(rr_param(&table2(), &Criterion::default(), plan, &spec, &mut rng).is_err());
    }

    #[test]
    fn mrrr_identity_and_scaling() {
        let spec = QmraSpec::default();
        let scaled = Scaled {
            inner: spec.clone(),
            k: 0.3,
        };
        let plan = MonteCarloPlan::default();
        let crit = Criterion::default();
        for seed in 0..10 {
            let rr = rr_param(&table2(), &crit, plan, &spec, &mut Seed::new(seed).rng()).unwrap();
            let pm = p_mc_met_param(&table2(), &crit, plan, &mut Seed::new(seed).rng());
            let mrrr = mrrr_param(
                &table2(),
                &crit,
                None,
                plan,
                &spec,
                &mut Seed::new(seed).rng(),
            )
            .unwrap();
            assert!((mrrr - rr * pm).abs() <= 1e-12);
            let rr_k =
                rr_param(&table2(), &crit, plan, &scaled, &mut Seed::new(seed).rng()).unwrap();
            assert!((rr_k - rr).abs() <= 1e-12);
        }
    }

    #[test]
    fn fixed_prevalence_uses_same_stream() {
        let spec = QmraSpec::default();
        let plan = MonteCarloPlan::new(5, 3).unwrap();
        let crit = Criterion::default();
        let a = mrrr_param(
            &table2(),
            &crit,
            Some(1.0),
            plan,
            &spec,
            &mut Seed::new(6).rng(),
        )
        .unwrap();
        let b = mrrr_param(
            &table2(),
            &crit,
            Some(1.0),
            plan,
            &spec,
            &mut Seed::new(6).rng(),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(mrrr_param(
            &table2(),
            &crit,
            Some(1.5),
            plan,
            &spec,
            &mut Seed::new(6).rng()
        )
        .is_err());
    }

    /// Serving risk of the step chain given mu_j: P(Poisson(10^y) >= 1) with
    /// y ~ N(mu_j, sigma_w^2), by quadrature.
    fn step_serving_risk(mu_j: f64, sigma_w: f64) -> f64 {
        let n = 400;
        let h = 16.0 / n as f64;
        (0..=n)
            .map(|i| {
                let z = -8.0 + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                let dens = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                w * h * dens * -(-(10f64.powf(mu_j + sigma_w * z))).exp_m1()
            })
            .sum()
    }

    /// Brute-force expectations over (p, mu_j): returns (ill, ill_and_met).
    fn step_oracle(params: &CountryParams, crit: &Criterion) -> (f64, f64) {
        let np = 200;
        let nm = 200;
        let (mut ill, mut joint) = (0.0, 0.0);
        let a = params.alpha;
        // Beta(a, 2) density: a (a + 1) p^(a-1) (1 - p), midpoint rule
        for i in 0..np {
            let p = (i as f64 + 0.5) / np as f64;
            let fp = a * (a + 1.0) * p.powf(a - 1.0) * (1.0 - p) / np as f64;
            for j in 0..nm {
                let z = -8.0 + 16.0 * (j as f64 + 0.5) / nm as f64;
                let fz =
                    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() * 16.0 / nm as f64;
                let mu_j = params.mu + params.sigma_b * z;
                let s = step_serving_risk(mu_j, params.sigma_w);
                let pe = p * normal_sf((crit.log10_m() - mu_j) / params.sigma_w);
                let pm = binomial_cdf(crit.c, crit.n, pe);
                ill += fp * fz * p * s;
                joint += fp * fz * p * s * pm;
            }
        }
        (params.q * ill, params.q * joint)
    }

    #[test]
    fn step_dose_response_matches_oracle() {
        let params = CountryParams::new(0.3, -0.5, 0.5, 0.6, 4.0).unwrap();
        let crit = Criterion::new(5, 1, 1.0).unwrap();
        let (ill_exact, joint_exact) = step_oracle(&params, &crit);
        let spec = step_spec();
        let reps = 4000;
        let plan = MonteCarloPlan::new(5, 4).unwrap();
        let (mut ill, mut joint) = (Vec::new(), Vec::new());
        for r in 0..reps {
            let d = draw_risk(&params, &crit, None, plan, &spec, &mut Seed::new(r).rng());
            ill.push(d.p_ill);
            joint.push(d.p_ill_and_met);
        }
        let check = |v: &[f64], exact: f64| {
            let m = crate::stats::mean(v);
            let se = (crate::stats::variance(v) / v.len() as f64).sqrt();
            assert!((m - exact).abs() < 3.0 * se, "{m} vs {exact} (se {se})");
        };
        check(&ill, ill_exact);
        check(&joint, joint_exact);
    }

    #[test]
    fn large_alpha_reduces_to_serving_mean() {
        let mut params = table2();
        params.alpha = 1e9;
        params.sigma_b = 1e-9;
        let spec = step_spec();
        let plan = MonteCarloPlan::new(1, 20_000).unwrap();
        let v = p_ill_unconditional(&params, plan, &spec, &mut Seed::new(8).rng());
        let exact = params.q * step_serving_risk(params.mu, params.sigma_w);
        assert!((v - exact).abs() < 0.01 * params.q, "{v} vs {exact}");
    }

    #[test]
    fn rao_blackwellized_compliance_matches_indicator() {
        use crate::rng::open01;
        let params = table2();
        let crit = Criterion::default();
        let plan = MonteCarloPlan::new(20, 1).unwrap();
        let reps = 3000;
        let mut rb = Vec::new();
        let mut ind = Vec::new();
        for r in 0..reps {
            let mut rng = Seed::new(r).rng();
            rb.push(p_mc_met_param(&params, &crit, plan, &mut rng));
            let mut rng = Seed::new(r).rng();
            let e = ensemble::<QmraSpec, _>(&params, None, plan, None, &mut rng);
            let mut rng = Seed::new(10_000 + r).rng();
            let mut passed = 0.0;
            for (p, mu) in e.p.iter().zip(&e.mu) {
                let pe = crate::criteria::exceed_prob(*p, *mu, params.sigma_w, crit.log10_m());
                let k = (0..crit.n).filter(|_| open01(&mut rng) < pe).count() as u32;
                if k <= crit.c {
                    passed += 1.0;
                }
            }
            ind.push(1.0 - params.q * (1.0 - passed / plan.l as f64));
        }
        let (a, b) = (crate::stats::mean(&rb), crate::stats::mean(&ind));
        let se = (crate::stats::variance(&ind) / reps as f64).sqrt();
        assert!((a - b).abs() < 3.0 * se, "{a} vs {b}");
        assert!(crate::stats::variance(&rb) < crate::stats::variance(&ind));
    }

    #[test]
    fn grid_shares_draws_with_posterior_rr() {
        let post = PosteriorSample::from_draws(vec![table2(); 40], 2).unwrap();
        let spec = QmraSpec::default();
        let plan = MonteCarloPlan::new(8, 4).unwrap();
        let crits = vec![
            Criterion::new(5, 0, 1000.0).unwrap(),
            Criterion::default(),
            Criterion::new(5, 5, 1000.0).unwrap(),
        ];
        let grid = rr_grid(&post, &crits, plan, &spec, &mut Seed::new(1).rng()).unwrap();
        let single = posterior_rr(&post, &crits[1], plan, &spec, &mut Seed::new(1).rng()).unwrap();
        assert_eq!(grid.series[1], single);
        assert!(grid.cells[0].rr_mean <= grid.cells[1].rr_mean);
        assert_eq!(grid.cells[2].rr_mean, 1.0);
        assert_eq!(grid.cells[2].rpr, 1.0);
        assert_eq!(grid.cells[2].reject_pct_mean, 0.0);
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &grid.cells).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,c,m,rr_mean,rr_lo,rr_hi,rpr,mrrr_mean,reject_pct_mean,mc_se\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn grid_records_cell_errors() {
        let mut p = table2();
        p.q = 0.0;
        let post = PosteriorSample::from_draws(vec![p; 4], 1).unwrap();
        let grid = rr_grid(
            &post,
            &[Criterion::default()],
            MonteCarloPlan::new(2, 2).unwrap(),
            &QmraSpec::default(),
            &mut Seed::new(1).rng(),
        )
        .unwrap();
        assert!(grid.cells[0].error.is_some());
        assert_eq!(grid.cells[0].n_excluded, 4);
    }
}
