use proptest::prelude::*;

use batchrisk::criteria::{p_mc_met, Criterion};
use batchrisk::model::{
    log_prior, loglik_baseline, loglik_summaries_marginal, transform_baseline,
    untransform_baseline, BaselineSurvey, BatchParams, BatchSummary, CountryParams,
    PositiveBatchSummaries, PriorSpec,
};
use batchrisk::qmra::{p_ill_serving_mc, QmraSpec};
use batchrisk::risk::{draw_risk, MonteCarloPlan};
use batchrisk::rng::Seed;
use batchrisk::stats::binomial_cdf;

fn params() -> impl Strategy<Value = CountryParams> {
    (
        0.001f64..0.999,
        -2.0f64..6.0,
        0.05f64..3.0,
        0.05f64..3.0,
        0.05f64..500.0,
    )
        .prop_map(|(q, mu, sigma_b, sigma_w, alpha)| CountryParams {
            q,
            mu,
            sigma_b,
            sigma_w,
            alpha,
        })
}

fn batch() -> impl Strategy<Value = BatchParams> {
    (any::<bool>(), 0.0f64..=1.0, -2.0f64..7.0).prop_map(|(contaminated, p_within, mu_batch)| {
        BatchParams {
            contaminated,
            p_within,
            mu_batch,
        }
    })
}

fn criterion() -> impl Strategy<Value = Criterion> {
    (
        1u32..=12,
        prop_oneof![Just(100.0), Just(1000.0), 1.0f64..1e5],
    )
        .prop_flat_map(|(n, m)| (Just(n), 0..=n, Just(m)))
        .prop_map(|(n, c, m)| Criterion::new(n, c, m).unwrap())
}

fn data() -> (BaselineSurvey, PositiveBatchSummaries) {
    let baseline = BaselineSurvey::new(60, vec![1.5, 2.2, 3.1, 2.6, 1.9, 2.4]).unwrap();
    let summaries = PositiveBatchSummaries::new(vec![
        BatchSummary {
            n_sampled: 10,
            n_positive: 8,
            mean_log: 2.5,
            sd_log: Some(0.6),
        },
        BatchSummary {
            n_sampled: 6,
            n_positive: 1,
            mean_log: 1.8,
            sd_log: None,
        },
    ])
    .unwrap();
    (baseline, summaries)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn baseline_transform_inverts(y in -3.0f64..9.0) {
        let back = transform_baseline(untransform_baseline(y)).unwrap();
        prop_assert!((back - y).abs() <= 4.0 * f64::EPSILON * y.abs().max(1.0));
    }

    #[test]
    fn likelihoods_finite_inside_support(p in params()) {
        let (b, s) = data();
        prop_assert!(loglik_baseline(&p, &b, true).is_finite());
        prop_assert!(loglik_baseline(&p, &b, false).is_finite());
        prop_assert!(loglik_summaries_marginal(&p, &s).is_finite());
        prop_assert!(log_prior(&p, &PriorSpec::default()).is_finite());
    }

    #[test]
    fn likelihoods_neg_infinite_off_support(p in params(), which in 0usize..4, bad in -5.0f64..0.0) {
        let (_, s) = data();
        let mut off = p;
        match which {
            0 => off.q = 1.0 - bad + 1e-9,
            1 => off.sigma_b = bad,
            2 => off.sigma_w = bad,
            _ => off.alpha = bad,
        }
        prop_assert_eq!(loglik_summaries_marginal(&off, &s), f64::NEG_INFINITY);
        prop_assert_eq!(log_prior(&off, &PriorSpec::default()), f64::NEG_INFINITY);
    }

    #[test]
    fn combined_baseline_success_increases_with_alpha(p in params(), factor in 1.01f64..50.0) {
        // with no positives the binomial term is N' ln(1 - success)
        let empty = BaselineSurvey::new(100, vec![]).unwrap();
        let mut hi = p;
        hi.alpha *= factor;
        prop_assert!(loglik_baseline(&hi, &empty, false) < loglik_baseline(&p, &empty, false));
    }

    #[test]
    fn binomial_cdf_is_a_cdf(n in 1u32..80, c in 0u32..80, p in 0.0f64..=1.0, dp in 0.0f64..0.5) {
        let c = c.min(n);
        let v = binomial_cdf(c, n, p);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        if c < n {
            prop_assert!(binomial_cdf(c + 1, n, p) >= v - 1e-12);
        } else {
            prop_assert!((v - 1.0).abs() < 1e-12);
        }
        prop_assert!(binomial_cdf(c, n, (p + dp).min(1.0)) <= v + 1e-12);
    }

    #[test]
    fn compliance_monotone_in_n_and_c(b in batch(), sigma_w in 0.05f64..3.0, crit in criterion()) {
        let v = p_mc_met(&b, sigma_w, &crit);
        prop_assert!((0.0..=1.0).contains(&v));
        let more_n = Criterion::new(crit.n + 1, crit.c, crit.m).unwrap();
        prop_assert!(p_mc_met(&b, sigma_w, &more_n) <= v + 1e-12);
        if crit.c < crit.n {
            let more_c = Criterion::new(crit.n, crit.c + 1, crit.m).unwrap();
            prop_assert!(p_mc_met(&b, sigma_w, &more_c) >= v - 1e-12);
        }
        if !b.contaminated {
            prop_assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn serving_risk_monotone_in_batch_mean(mu in -1.0f64..5.0, step in 0.0f64..2.0, sigma_w in 0.1f64..1.5, seed in any::<u64>()) {
        let spec = QmraSpec::default();
        let lo = BatchParams { contaminated: true, p_within: 0.7, mu_batch: mu };
        let hi = BatchParams { mu_batch: mu + step, ..lo };
        let a = p_ill_serving_mc(&lo, sigma_w, &spec, 20, &mut Seed::new(seed).rng());
        let b = p_ill_serving_mc(&hi, sigma_w, &spec, 20, &mut Seed::new(seed).rng());
        prop_assert!(b >= a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn per_draw_identities(p in params(), crit in criterion(), seed in any::<u64>()) {
        let spec = QmraSpec::default();
        let plan = MonteCarloPlan::new(6, 4).unwrap();
        let d = draw_risk(&p, &crit, None, plan, &spec, &mut Seed::new(seed).rng());
        if let Ok(rr) = d.rr() {
            prop_assert!((d.mrrr().unwrap() - rr * d.p_met).abs() < 1e-12);
        }
        let full = Criterion::new(crit.n, crit.n, crit.m).unwrap();
        let f = draw_risk(&p, &full, None, plan, &spec, &mut Seed::new(seed).rng());
        prop_assert_eq!(f.p_met, 1.0);
        if f.p_ill > 0.0 {
            prop_assert_eq!(f.rr().unwrap(), 1.0);
        }
    }
}
