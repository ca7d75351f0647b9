mod common;

use choice_confound::evaluation::empirical_choice_prob;
use choice_confound::models::{ChoiceModel, Family, ModelSpec};
use choice_confound::propensity::{
    fit_affine_gaussian_arrays, fit_item_logistic, ipw_weights, normalized_ipw_loglik, set_propensity,
    weights_from_propensities, AffineGaussian, PerItemLogistic, PropensityModel,
};
use choice_confound::synthetic::pets_oracle;
use choice_confound::{ChoiceDataset, Interner, Observation, SampleWeights, Table, WeightKind};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn set_propensities_sum_to_one(
        n in 1usize..7,
        coef in prop::collection::vec(-2.0f64..2.0, 14),
        bias in prop::collection::vec(-2.0f64..2.0, 7),
        x in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let pm = PerItemLogistic::new(
            DMatrix::from_fn(n, 2, |i, j| coef[2 * i + j]),
            DVector::from_fn(n, |i, _| bias[i]),
        );
        let total: f64 = (0u32..1 << n)
            .map(|mask| {
                let set: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                set_propensity(&pm, &x, &set).unwrap()
            })
            .sum();
        // The floor can only add mass, at most 2^n · 1e-12.
        prop_assert!((total - 1.0).abs() < 1e-9, "total {}", total);
    }

    #[test]
    fn normalized_ipw_loglik_ignores_weight_scale(seed in 0u64..300, scale in 0.01f64..100.0) {
        let ds = common::random_dataset(seed, 4, 30, 0, 0);
        let m = ChoiceModel::from_flat(&ModelSpec::for_dataset(Family::Logit, &ds).unwrap(), &[0.3, -0.2, 1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..ds.len()).map(|_| rng.random_range(0.1..3.0)).collect();
        let a = SampleWeights::new(raw.clone(), WeightKind::IpwRaw).unwrap();
        let b = SampleWeights::new(raw.iter().map(|w| w * scale).collect(), WeightKind::IpwRaw).unwrap();
        let (la, lb) = (normalized_ipw_loglik(&m, &ds, &a).unwrap(), normalized_ipw_loglik(&m, &ds, &b).unwrap());
        prop_assert!((la - lb).abs() < 1e-9 * la.abs());
        let uniform = normalized_ipw_loglik(&m, &ds, &SampleWeights::uniform(ds.len())).unwrap();
        prop_assert!((uniform - m.log_likelihood_unweighted(&ds).unwrap()).abs() < 1e-9 * uniform.abs());
    }

    #[test]
    fn clipping_caps_at_the_quantile(props in prop::collection::vec(0.01f64..1.0, 5..60), q in 0.05f64..1.0) {
        let raw = weights_from_propensities(&props, 4, None, true).unwrap();
        let clipped = weights_from_propensities(&props, 4, Some(q), true).unwrap();
        let mut sorted = raw.values().to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        let cap = sorted[rank - 1];
        for (r, c) in raw.values().iter().zip(clipped.values()) {
            prop_assert_eq!(*c, r.min(cap));
        }
        let none = weights_from_propensities(&props, 4, Some(1.0), true).unwrap();
        prop_assert_eq!(none.values(), raw.values());
    }
}

#[test]
fn gaussian_density_integrates_to_one() {
    let g = AffineGaussian::new(
        DMatrix::from_row_slice(2, 1, &[0.5, -1.0]),
        DVector::from_vec(vec![0.2, 0.1]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
    )
    .unwrap();
    let x = [0.7];
    let mean = g.mean(&x).unwrap();
    let h = 0.02;
    let steps = 600;
    let mut total = 0.0;
    for a in 0..steps {
        for b in 0..steps {
            let y = [
                mean[0] - 6.0 + (a as f64 + 0.5) * h,
                mean[1] - 6.0 + (b as f64 + 0.5) * h,
            ];
            total += g.density(&x, &y).unwrap() * h * h;
        }
    }
    assert!((total - 1.0).abs() < 1e-4, "integral {total}");
}

#[test]
fn affine_gaussian_recovers_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 20_000;
    let w = [[1.0, -0.5], [0.25, 2.0]];
    let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(n, 2, |r, c| {
        let noise: f64 = rng.random_range(-1.0..1.0);
        w[c][0] * x[(r, 0)] + w[c][1] * x[(r, 1)] + [0.3, -0.7][c] + noise
    });
    let g = fit_affine_gaussian_arrays(&x, &y).unwrap();
    let fitted = g.w();
    for c in 0..2 {
        for j in 0..2 {
            assert!((fitted[(c, j)] - w[c][j]).abs() < 0.05);
        }
    }
    // Uniform(−1, 1) noise has variance 1/3.
    assert!((g.sigma()[(0, 0)] - 1.0 / 3.0).abs() < 0.02);
    assert!(g.sigma()[(0, 1)].abs() < 0.02);
}

#[test]
fn fitted_item_logistic_deconfounds_pets() {
    let sample = pets_oracle().sample(50_000, 21).unwrap();
    let ds = &sample.dataset;
    let pm = PropensityModel::ItemLogistic(fit_item_logistic(ds).unwrap());
    let w = ipw_weights(&pm, ds, None).unwrap();
    let dog = ds.items().get("dog").unwrap();
    let cat = ds.items().get("cat").unwrap();
    let fish = ds.items().get("fish").unwrap();
    let mut small = vec![cat, dog];
    small.sort();
    let mut large = vec![cat, dog, fish];
    large.sort();
    for set in [small, large] {
        let raw = empirical_choice_prob(ds, None, dog, &set).unwrap();
        let weighted = empirical_choice_prob(ds, Some(&w), dog, &set).unwrap();
        assert!((weighted - 0.625).abs() < 0.02, "set {set:?}: weighted {weighted}, raw {raw}");
    }
}

#[test]
fn item_logistic_recovers_inclusion_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n_items, n_obs) = (6, 6000);
    let truth = PerItemLogistic::new(
        DMatrix::from_fn(n_items, 2, |i, j| ((i * 3 + j * 5) % 7) as f64 / 3.0 - 1.0),
        DVector::from_fn(n_items, |i, _| (i as f64 - 2.5) / 3.0),
    );
    let mut cov = Vec::new();
    let mut obs = Vec::new();
    let mut xs = Vec::new();
    while obs.len() < n_obs {
        let x = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        let set: Vec<usize> = (0..n_items).filter(|&i| rng.random::<f64>() < truth.inclusion_probability(i, &x)).collect();
        if set.is_empty() {
            continue;
        }
        let k = obs.len();
        obs.push(Observation::new(k, set.clone(), set[0]).unwrap());
        cov.extend_from_slice(&x);
        xs.push(x);
    }
    let items = Interner::from_ids((0..n_items).map(|i| format!("i{i}"))).unwrap();
    let choosers = Interner::from_ids((0..n_obs).map(|k| format!("a{k}"))).unwrap();
    let ds = ChoiceDataset::from_parts(items, choosers, obs)
        .unwrap()
        .with_chooser_covariates(Table::with_default_names("x", n_obs, 2, cov).unwrap())
        .unwrap();
    let fitted = fit_item_logistic(&ds).unwrap();
    let mut sq = 0.0;
    let mut count = 0.0;
    for x in xs.iter().take(500) {
        for i in 0..n_items {
            let d = fitted.inclusion_probability(i, x) - truth.inclusion_probability(i, x);
            sq += d * d;
            count += 1.0;
        }
    }
    // Empty sets were rejected, so inclusion is slightly inflated; the
    // fit still tracks the generating probabilities closely.
    let rmse = (sq / count).sqrt();
    assert!(rmse < 0.1, "rmse {rmse}");
}
