//! Serving-level risk chain: carcass concentration to dose to illness.
//!
//! A serving from a contaminated carcass of batch `j` has log concentration
//! `y_c ~ N(mu_j, sigma_w^2)`, weight `w`, cell count `n_c ~ Poisson(w 10^y_c)`
//! and ingested dose `d ~ Binomial(n_c, r)`. By Poisson thinning `d` is
//! Poisson(w 10^y_c r) and `n_c - d` is an independent Poisson remainder,
//! so both are drawn by inversion from a fixed number of uniforms per
//! serving. That keeps random streams aligned between runs that differ only
//! in parameters, and makes the dose nondecreasing in `mu_j` for a fixed
//! stream.
//!
//! Any type implementing [`ServingModel`] can replace the default chain.

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BatchParams;
use crate::rng::open01;
use crate::stats::{normal_quantile, poisson_quantile};

/// Expected cells per serving above which the count is capped.
pub const SATURATION_CELLS: f64 = 1.0e12;

/// Uniform draws consumed by one serving simulation.
pub const UNIFORMS_PER_SERVING: usize = 5;

const DEFAULT_SPEC_JSON: &str = include_str!("../assets/qmra_default_v1.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Fixed {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// `ln x` uniform on `[ln low, ln high]`.
    LogUniform {
        low: f64,
        high: f64,
    },
}

impl Dist {
    /// Quantile function on (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Dist::Fixed { value } => value,
            Dist::Uniform { low, high } => low + (high - low) * u,
            Dist::LogUniform { low, high } => low * (high / low).powf(u),
        }
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            Dist::Fixed { value } => (value, value),
            Dist::Uniform { low, high } | Dist::LogUniform { low, high } => (low, high),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let (low, high) = self.support();
        let ok = low.is_finite()
            && high.is_finite()
            && low <= high
            && (!matches!(self, Dist::LogUniform { .. }) || low > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "{what}: invalid distribution {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DoseResponse {
    /// Approximate Beta-Poisson `1 - (1 + d/b)^(-a)`.
    BetaPoisson { a: f64, b: f64 },
    /// Illness with certainty once `d >= threshold`.
    Step { threshold: u64 },
}

impl DoseResponse {
    pub fn p_ill(&self, d: u64) -> f64 {
        if d == 0 {
            return 0.0;
        }
        match *self {
            DoseResponse::BetaPoisson { a, b } => -(-a * (d as f64 / b).ln_1p()).exp_m1(),
            DoseResponse::Step { threshold } => {
                if d >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmraSpec {
    #[serde(default)]
    pub version: String,
    /// Serving weight in grams.
    pub serving_weight: Dist,
    /// Per-cell transfer probability into the consumed serving.
    pub transfer: Dist,
    pub dose_response: DoseResponse,
}

impl Default for QmraSpec {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_SPEC_JSON).expect("bundled QMRA config is valid")
    }
}

impl QmraSpec {
    pub fn validate(&self) -> Result<()> {
        self.serving_weight.validate("serving_weight")?;
        self.transfer.validate("transfer")?;
        let (wl, _) = self.serving_weight.support();
        if !(wl > 0.0) {
            return Err(Error::InvalidConfig(
                "serving weights must be positive".into(),
            ));
        }
        let (rl, rh) = self.transfer.support();
        if rl < 0.0 || rh > 1.0 {
            return Err(Error::InvalidConfig(
                "transfer probability must lie in [0, 1]".into(),
            ));
        }
        if let DoseResponse::BetaPoisson { a, b } = self.dose_response {
            if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "Beta-Poisson parameters must be positive, got a={a}, b={b}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: QmraSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServingParams {
    pub y_c: f64,
    pub w: f64,
    pub n_c: u64,
    pub r: f64,
    pub d: u64,
    /// Expected cell count was capped at [`SATURATION_CELLS`].
    pub saturated: bool,
}

/// Uniforms and derived quantities shared by the full and dose-only paths.
struct ServingCore {
    y_c: f64,
    w: f64,
    r: f64,
    lambda: f64,
    saturated: bool,
    d: u64,
    remainder_seed: u64,
}

fn serving_core<R: Rng + ?Sized>(
    spec: &QmraSpec,
    mu_batch: f64,
    sigma_w: f64,
    rng: &mut R,
) -> ServingCore {
    let y_c = mu_batch + sigma_w * normal_quantile(open01(rng));
    let w = spec.serving_weight.quantile(open01(rng));
    let r = spec.transfer.quantile(open01(rng));
    let u_dose = open01(rng);
    let remainder_seed = rng.next_u64();
    let raw = w * 10f64.powf(y_c);
    let saturated = !(raw <= SATURATION_CELLS);
    let lambda = if saturated { SATURATION_CELLS } else { raw };
    let d = poisson_quantile(lambda * r, u_dose);
    ServingCore {
        y_c,
        w,
        r,
        lambda,
        saturated,
        d,
        remainder_seed,
    }
}

/// A serving-level model mapping a contaminated batch to a probability of
/// illness per serving.
pub trait ServingModel: Sync {
    /// Simulate one serving from a contaminated carcass of a batch with mean
    /// log concentration `mu_batch`.
    fn draw<R: Rng + ?Sized>(&self, mu_batch: f64, sigma_w: f64, rng: &mut R) -> ServingParams;

    fn p_ill_given_dose(&self, d: u64) -> f64;

    /// Probability of illness for one simulated serving. Must consume the same
    /// stream as [`ServingModel::draw`].
    fn serving_risk<R: Rng + ?Sized>(&self, mu_batch: f64, sigma_w: f64, rng: &mut R) -> f64 {
        self.p_ill_given_dose(self.draw(mu_batch, sigma_w, rng).d)
    }
}

impl ServingModel for QmraSpec {
    fn draw<R: Rng + ?Sized>(&self, mu_batch: f64, sigma_w: f64, rng: &mut R) -> ServingParams {
        let c = serving_core(self, mu_batch, sigma_w, rng);
        let rest_mean = c.lambda * (1.0 - c.r);
        let rest = if rest_mean > 0.0 {
            let mut small = SmallRng::seed_from_u64(c.remainder_seed);
            Poisson::new(rest_mean).map_or(0, |p| p.sample(&mut small) as u64)
        } else {
            0
        };
        ServingParams {
            y_c: c.y_c,
            w: c.w,
            n_c: c.d.saturating_add(rest),
            r: c.r,
            d: c.d,
            saturated: c.saturated,
        }
    }

    fn p_ill_given_dose(&self, d: u64) -> f64 {
        self.dose_response.p_ill(d)
    }

    fn serving_risk<R: Rng + ?Sized>(&self, mu_batch: f64, sigma_w: f64, rng: &mut R) -> f64 {
        self.dose_response
            .p_ill(serving_core(self, mu_batch, sigma_w, rng).d)
    }
}

/// Dose-response multiplied by a constant `k`. Relative risk measures are
/// invariant under this change.
#[derive(Debug, Clone)]
pub struct Scaled<S> {
    pub inner: S,
    pub k: f64,
}

impl<S: ServingModel> ServingModel for Scaled<S> {
    fn draw<R: Rng + ?Sized>(&self, mu_batch: f64, sigma_w: f64, rng: &mut R) -> ServingParams {
        self.inner.draw(mu_batch, sigma_w, rng)
    }

    fn p_ill_given_dose(&self, d: u64) -> f64 {
        self.k * self.inner.p_ill_given_dose(d)
    }

    fn serving_risk<R: Rng + ?Sized>(&self, mu_batch: f64, sigma_w: f64, rng: &mut R) -> f64 {
        self.k * self.inner.serving_risk(mu_batch, sigma_w, rng)
    }
}

/// Simulate one serving from a contaminated batch.
pub fn draw_serving<R: Rng + ?Sized>(
    batch: &BatchParams,
    sigma_w: f64,
    spec: &QmraSpec,
    rng: &mut R,
) -> ServingParams {
    debug_assert!(
        batch.contaminated,
        "servings are only drawn from contaminated batches"
    );
    spec.draw(batch.mu_batch, sigma_w, rng)
}

pub fn p_ill_given_dose(d: u64, spec: &QmraSpec) -> f64 {
    spec.dose_response.p_ill(d)
}

/// Mean serving risk over `m` simulated servings, `(1/M) sum P0(ill | d)`,
/// without the prevalence factors.
pub fn mean_serving_risk<S: ServingModel, R: Rng + ?Sized>(
    model: &S,
    mu_batch: f64,
    sigma_w: f64,
    m: usize,
    rng: &mut R,
) -> f64 {
    let total: f64 = (0..m)
        .map(|_| model.serving_risk(mu_batch, sigma_w, rng))
        .sum();
    total / m as f64
}

/// `I_j p_j (1/M) sum P0(ill | d_m)`. Uncontaminated batches and batches with
/// zero within-batch prevalence return 0 without touching `rng`.
pub fn p_ill_serving_mc<S: ServingModel, R: Rng + ?Sized>(
    batch: &BatchParams,
    sigma_w: f64,
    model: &S,
    m: usize,
    rng: &mut R,
) -> f64 {
    if !batch.contaminated || batch.p_within == 0.0 {
        return 0.0;
    }
    batch.p_within * mean_serving_risk(model, batch.mu_batch, sigma_w, m.max(1), rng)
}
