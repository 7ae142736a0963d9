//! Scalar numerics shared by the model, the sampler and the risk code.

use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma_ur, ln_gamma};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail, accurate far into the tail.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF on (0, 1).
#[inline]
pub fn normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Log density of a normal with the given precision.
#[inline]
pub fn normal_ln_pdf_prec(x: f64, mean: f64, precision: f64) -> f64 {
    let d = x - mean;
    0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * d * d
}

/// Log density of a normal with the given variance.
#[inline]
pub fn normal_ln_pdf_var(x: f64, mean: f64, variance: f64) -> f64 {
    normal_ln_pdf_prec(x, mean, 1.0 / variance)
}

/// Log density of Gamma(shape, rate) at `x`.
pub fn gamma_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    if x == 0.0 {
        return match shape.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => rate.ln(),
            _ => f64::NEG_INFINITY,
        };
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log density of Beta(a, b) at `p`.
pub fn beta_ln_pdf(p: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NEG_INFINITY;
    }
    let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    ln_norm + xlogy(a - 1.0, p) + xlogy(b - 1.0, 1.0 - p)
}

/// `x * ln(y)` with the convention `0 * ln(0) = 0`.
#[inline]
pub fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Binomial log pmf with the `0 * ln 0 = 0` convention at p in {0, 1}.
pub fn binomial_ln_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n || !(0.0..=1.0).contains(&p) {
        return f64::NEG_INFINITY;
    }
    ln_choose(n, k) + xlogy(k as f64, p) + xlogy((n - k) as f64, 1.0 - p)
}

/// P(X <= c) for X ~ Binomial(n, p).
pub fn binomial_cdf(c: u32, n: u32, p: f64) -> f64 {
    if c >= n {
        return 1.0;
    }
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    if n <= 60 {
        let q = 1.0 - p;
        let mut coef = 1.0_f64;
        let mut total = 0.0;
        for k in 0..=c {
            if k > 0 {
                coef = coef * f64::from(n - k + 1) / f64::from(k);
            }
            total += coef * p.powi(k as i32) * q.powi((n - k) as i32);
        }
        total.min(1.0)
    } else {
        let total: f64 = (0..=c)
            .map(|k| binomial_ln_pmf(u64::from(k), u64::from(n), p).exp())
            .sum();
        total.min(1.0)
    }
}

/// Below this mean the Poisson quantile is found by summing the pmf from zero.
const POISSON_DIRECT_LIMIT: f64 = 50.0;
/// Above this mean the Poisson quantile uses the normal approximation.
pub const POISSON_NORMAL_CROSSOVER: f64 = 1.0e7;

/// Smallest `k` with `P(X <= k) >= u` for X ~ Poisson(mean).
///
/// Monotone nondecreasing in `mean` for fixed `u`, which keeps common random
/// number comparisons ordered. Uses exact inversion up to
/// [`POISSON_NORMAL_CROSSOVER`], a normal approximation above it.
pub fn poisson_quantile(mean: f64, u: f64) -> u64 {
    if mean <= 0.0 || u <= 0.0 {
        return 0;
    }
    if mean < POISSON_DIRECT_LIMIT {
        let mut k = 0u64;
        let mut pmf = (-mean).exp();
        let mut cdf = pmf;
        while cdf < u {
            k += 1;
            pmf *= mean / k as f64;
            if pmf == 0.0 {
                break;
            }
            cdf += pmf;
        }
        return k;
    }
    let z = normal_quantile(u.min(1.0 - f64::EPSILON));
    if mean > POISSON_NORMAL_CROSSOVER {
        return (mean + mean.sqrt() * z + 0.5).floor().max(0.0) as u64;
    }
    // Cornish-Fisher start, then walk with the pmf recurrence.
    let start = (mean + mean.sqrt() * z + (z * z - 1.0) / 6.0)
        .floor()
        .max(0.0);
    let mut k = start as u64;
    let ln_pmf = |k: u64| k as f64 * mean.ln() - mean - ln_gamma(k as f64 + 1.0);
    let mut cdf = gamma_ur(k as f64 + 1.0, mean);
    let mut pmf = ln_pmf(k).exp();
    if cdf >= u {
        while k > 0 && cdf - pmf >= u {
            cdf -= pmf;
            pmf *= k as f64 / mean;
            k -= 1;
        }
    } else {
        while cdf < u {
            k += 1;
            pmf *= mean / k as f64;
            if pmf == 0.0 {
                break;
            }
            cdf += pmf;
        }
    }
    k
}

/// Type-7 (linear interpolation) quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

pub fn quantile(values: &[f64], prob: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, prob)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
