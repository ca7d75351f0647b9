mod common;

use choice_confound::estimation::{fit, FitConfig};
use choice_confound::evaluation::{
    detect_regularity_violations, lrt, mean_relative_position_with, relative_position,
};
use choice_confound::models::{Family, ModelSpec};
use choice_confound::stats::{chi2_sf, fisher_exact_two_sided};
use choice_confound::synthetic::pets_oracle;
use choice_confound::SampleWeights;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relative_position_is_rank_based(
        probs in prop::collection::vec(0.001f64..1.0, 2..8),
        pick in 0usize..8,
    ) {
        let chosen = pick % probs.len();
        let base = relative_position(&probs, chosen);
        prop_assert!((0.0..=1.0).contains(&base));
        // Any strictly increasing transform preserves ranks and ties.
        let cubed: Vec<f64> = probs.iter().map(|p| p.powi(3) + 7.0).collect();
        let logged: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        prop_assert_eq!(relative_position(&cubed, chosen), base);
        prop_assert_eq!(relative_position(&logged, chosen), base);
    }

    #[test]
    fn mean_relative_position_is_invariant_to_monotone_scores(seed in 0u64..500) {
        let ds = common::random_dataset(seed, 6, 40, 0, 0);
        let scores = |obs: usize| -> Vec<f64> {
            ds.observations()[obs].choice_set.iter().map(|&i| ((i * 7 + seed as usize) % 5) as f64).collect()
        };
        let a = mean_relative_position_with(&ds, |k| Ok(scores(k))).unwrap();
        let b = mean_relative_position_with(&ds, |k| Ok(scores(k).iter().map(|s| s.exp()).collect())).unwrap();
        prop_assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn fisher_is_symmetric(a in 0u64..40, b in 0u64..40, c in 0u64..40, d in 0u64..40) {
        let p = fisher_exact_two_sided([[a, b], [c, d]]);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&p));
        for q in [
            fisher_exact_two_sided([[a, c], [b, d]]),
            fisher_exact_two_sided([[c, d], [a, b]]),
            fisher_exact_two_sided([[b, a], [d, c]]),
        ] {
            prop_assert!((p - q).abs() <= 1e-9 * p.max(q), "{} vs {}", p, q);
        }
    }

    #[test]
    fn chi2_tail_is_a_decreasing_probability(x in 0.0f64..80.0, dx in 0.01f64..5.0, df in 1usize..30) {
        let (p, q) = (chi2_sf(x, df), chi2_sf(x + dx, df));
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(q <= p);
    }
}

#[test]
fn chi2_tail_known_values() {
    // Median of χ²₁ and the 5% point of χ²₂ = −2 ln 0.05.
    assert!((chi2_sf(0.454_936_423_119_572_8, 1) - 0.5).abs() < 1e-10);
    assert!((chi2_sf(-2.0 * 0.05f64.ln(), 2) - 0.05).abs() < 1e-12);
}

#[test]
fn nested_fits_do_not_lose_likelihood() {
    // A larger family contains the smaller one, so its fitted likelihood
    // is at least as good up to the penalty and optimizer tolerance.
    let cfg = FitConfig::default();
    for seed in 0..4 {
        let ds = common::random_dataset(seed, 5, 300, 2, 2);
        let w = SampleWeights::uniform(ds.len());
        for (small, big) in [(Family::Logit, Family::Mnl), (Family::Logit, Family::Cdm), (Family::Cl, Family::Lcl)] {
            let a = fit(&ModelSpec::for_dataset(small, &ds).unwrap(), &ds, &w, &cfg).unwrap();
            let b = fit(&ModelSpec::for_dataset(big, &ds).unwrap(), &ds, &w, &cfg).unwrap();
            assert!(
                b.log_likelihood >= a.log_likelihood - 0.05,
                "{small} {} vs {big} {}",
                a.log_likelihood,
                b.log_likelihood
            );
        }
    }
}

#[test]
fn lrt_detects_covariate_effects() {
    let sample = pets_oracle().sample(5000, 3).unwrap();
    let ds = &sample.dataset;
    let w = SampleWeights::uniform(ds.len());
    let cfg = FitConfig::default();
    let logit = fit(&ModelSpec::for_dataset(Family::Logit, ds).unwrap(), ds, &w, &cfg).unwrap();
    let mnl = fit(&ModelSpec::for_dataset(Family::Mnl, ds).unwrap(), ds, &w, &cfg).unwrap();
    let report = lrt(&logit, &mnl, ds).unwrap();
    assert!(report.statistic > 0.0);
    assert!(report.p_value < 1e-6, "p = {}", report.p_value);
    assert!(lrt(&mnl, &logit, ds).is_err());
}

#[test]
fn regularity_silent_for_a_single_logit() {
    // A logit never violates regularity; only false positives remain.
    let u = vec![vec![0.5, -0.2, 1.0, 0.0, -1.0]];
    let ds = common::mixture_dataset(4, &[1.0], &u, 20_000);
    let report = detect_regularity_violations(&ds, 20, 0.001, false).unwrap();
    assert!(report.n_tests > 0);
    assert!(report.findings.len() as f64 <= 0.01 * report.n_tests as f64 + 2.0);
}

#[test]
fn regularity_flags_pets_dog() {
    let ds = pets_oracle().sample(4000, 9).unwrap().dataset;
    let one = detect_regularity_violations(&ds, 10, 0.05, false).unwrap();
    let general = detect_regularity_violations(&ds, 10, 0.05, true).unwrap();
    assert_eq!(one.findings.len(), 1);
    assert_eq!(one.findings[0].item, "dog");
    assert_eq!(general.findings, one.findings);
}
