//! Convergence diagnostics: split R-hat and multi-chain effective sample
//! size with Geyer's initial monotone sequence truncation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    /// Absent with a single chain.
    pub rhat: Option<f64>,
    pub ess: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Variance below this is rounding noise from summing a constant series.
fn negligible(level: f64) -> f64 {
    1e-24 * (1.0 + level * level)
}

/// Between/within variance ratio for equal-length chains of length >= 2.
fn rhat_of(chains: &[&[f64]]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, &m)| sample_var(c, m))
        .sum::<f64>()
        / chains.len() as f64;
    let grand = mean(&means);
    let b_over_n = sample_var(&means, grand);
    if w <= negligible(grand) {
        return if b_over_n <= negligible(grand) {
            1.0
        } else {
            f64::INFINITY
        };
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Split R-hat: every chain is cut into two halves (the middle draw of an
/// odd-length chain is dropped) and the halves are compared. `None` for a
/// single chain or chains shorter than four draws.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    if chains.len() < 2 {
        return None;
    }
    let n = chains.iter().map(Vec::len).min()?;
    if n < 4 {
        return None;
    }
    let half = n / 2;
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[n - half..n]);
    }
    Some(rhat_of(&parts))
}

/// Autocovariance at `lag` with the `1/n` normalization.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Effective sample size of equal-length chains.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    if m == 0 {
        return 0.0;
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let total = (m * n) as f64;
    if n < 4 {
        return total;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let mean_acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let w = mean_acov(0) * nf / (nf - 1.0);
    if w <= negligible(mean(&means)) {
        return total;
    }
    let b_over_n = if m > 1 {
        sample_var(&means, mean(&means))
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    let rho = |lag: usize| 1.0 - (w - mean_acov(lag)) / var_plus;

    let mut rhos = vec![1.0, rho(1)];
    let mut t = 1;
    while t + 2 < n - 1 {
        let even = rho(t + 1);
        let odd = rho(t + 2);
        if even + odd < 0.0 {
            break;
        }
        rhos.push(even);
        rhos.push(odd);
        t += 2;
    }
    // initial monotone sequence over pair sums
    let mut k = 2;
    while k + 1 < rhos.len() {
        let prev = rhos[k - 2] + rhos[k - 1];
        if rhos[k] + rhos[k + 1] > prev {
            rhos[k] = prev / 2.0;
            rhos[k + 1] = prev / 2.0;
        }
        k += 2;
    }
    let tau = -1.0 + 2.0 * rhos.iter().sum::<f64>();
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

pub fn param_diagnostics(chains: &[Vec<f64>]) -> ParamDiagnostics {
    ParamDiagnostics {
        rhat: split_rhat(chains),
        ess: ess(chains),
    }
}

/// Split a chain-major series into `n_chains` equal chains.
pub fn split_chains(series: &[f64], n_chains: usize) -> Vec<Vec<f64>> {
    let n_chains = n_chains.max(1);
    let len = series.len() / n_chains;
    (0..n_chains)
        .map(|c| series[c * len..(c + 1) * len].to_vec())
        .collect()
}

/// Monte Carlo standard error of the mean of a chain-major series.
pub fn mc_standard_error(series: &[f64], n_chains: usize) -> f64 {
    if series.len() < 2 {
        return f64::NAN;
    }
    let chains = split_chains(series, n_chains);
    let e = ess(&chains).max(1.0);
    (sample_var(series, mean(series)) / e).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = crate::rng::Seed::new(seed).rng();
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn identical_iid_chains_have_unit_rhat() {
        let c = iid(1, 4000);
        let r = split_rhat(&[c.clone(), c.clone(), c]).unwrap();
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn offset_chain_inflates_rhat() {
        let a = iid(1, 2000);
        let b: Vec<f64> = iid(2, 2000).iter().map(|v| v + 5.0).collect();
        assert!(split_rhat(&[a, b]).unwrap() > 2.0);
    }

    #[test]
    fn single_chain_has_no_rhat() {
        let d = param_diagnostics(&[iid(3, 1000)]);
        assert!(d.rhat.is_none());
        assert!(d.ess > 500.0);
    }

    #[test]
    fn ar1_ess_ratio() {
        // ESS/N for AR(1) with coefficient rho is (1 - rho) / (1 + rho)
        let rho: f64 = 0.5;
        let n = 50_000;
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|k| {
                let e = iid(10 + k, n);
                let mut x = vec![0.0; n];
                x[0] = e[0] / (1.0 - rho * rho).sqrt();
                for i in 1..n {
                    x[i] = rho * x[i - 1] + e[i];
                }
                x
            })
            .collect();
        let ratio = ess(&chains) / (4 * n) as f64;
        assert!((ratio - 1.0 / 3.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn iid_ess_near_total() {
        let chains: Vec<Vec<f64>> = (0..4).map(|k| iid(20 + k, 5000)).collect();
        let ratio = ess(&chains) / 20_000.0;
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn constant_chains() {
        let c = vec![0.3; 100];
        let d = param_diagnostics(&[c.clone(), c]);
        assert_eq!(d.rhat, Some(1.0));
        assert_eq!(d.ess, 200.0);
    }
}
