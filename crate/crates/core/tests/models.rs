mod common;

use approx::assert_relative_eq;
use choice_confound::models::{ChoiceModel, Family, ModelSpec};
use choice_confound::SampleWeights;
use proptest::prelude::*;

fn random_model(family: Family, ds: &choice_confound::ChoiceDataset, values: &[f64]) -> ChoiceModel {
    let spec = ModelSpec::for_dataset(family, ds).unwrap().with_components(2);
    let mut flat: Vec<f64> = (0..spec.n_params()).map(|k| values[k % values.len()]).collect();
    if family == Family::MixedLogit {
        let a = flat[0].abs() + 0.1;
        let b = flat[1].abs() + 0.1;
        flat[0] = a / (a + b);
        flat[1] = 1.0 - flat[0];
    }
    ChoiceModel::from_flat(&spec, &flat).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn probabilities_lie_on_the_simplex(
        seed in 0u64..1000,
        values in prop::collection::vec(-3.0f64..3.0, 1..40),
    ) {
        let ds = common::random_dataset(seed, 5, 20, 2, 3);
        for family in Family::ALL {
            let m = random_model(family, &ds, &values);
            for obs in 0..ds.len() {
                let p = m.choice_probabilities(&ds, obs).unwrap();
                prop_assert_eq!(p.len(), ds.observations()[obs].len());
                prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{} sums to {}", family, p.iter().sum::<f64>());
            }
        }
    }

    #[test]
    fn log_likelihood_sums_chosen_log_probabilities(
        seed in 0u64..1000,
        values in prop::collection::vec(-2.0f64..2.0, 1..40),
    ) {
        let ds = common::random_dataset(seed, 4, 15, 2, 2);
        for family in Family::ALL {
            let m = random_model(family, &ds, &values);
            let direct: f64 = (0..ds.len())
                .map(|k| {
                    let p = m.choice_probabilities(&ds, k).unwrap();
                    p[ds.observations()[k].chosen_position()].ln()
                })
                .sum();
            let ll = m.log_likelihood_unweighted(&ds).unwrap();
            prop_assert!((ll - direct).abs() < 1e-9 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn logit_is_translation_invariant(
        u in prop::collection::vec(-4.0f64..4.0, 5),
        shift in -10.0f64..10.0,
    ) {
        let ds = common::random_dataset(3, 5, 12, 0, 0);
        let spec = ModelSpec::for_dataset(Family::Logit, &ds).unwrap();
        let a = ChoiceModel::from_flat(&spec, &u).unwrap();
        let shifted: Vec<f64> = u.iter().map(|v| v + shift).collect();
        let b = ChoiceModel::from_flat(&spec, &shifted).unwrap();
        for obs in 0..ds.len() {
            let (pa, pb) = (a.choice_probabilities(&ds, obs).unwrap(), b.choice_probabilities(&ds, obs).unwrap());
            for (x, y) in pa.iter().zip(&pb) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn logit_obeys_iia(u in prop::collection::vec(-4.0f64..4.0, 4)) {
        let ds = common::plain_dataset(4, vec![(vec![0, 1], 0), (vec![0, 1, 2], 0), (vec![0, 1, 2, 3], 1)]);
        let spec = ModelSpec::for_dataset(Family::Logit, &ds).unwrap();
        let m = ChoiceModel::from_flat(&spec, &u).unwrap();
        let ratios: Vec<f64> = (0..3)
            .map(|k| {
                let p = m.choice_probabilities(&ds, k).unwrap();
                p[0] / p[1]
            })
            .collect();
        for r in &ratios[1..] {
            prop_assert!((r / ratios[0] - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn cdm_pulls_break_iia() {
    let ds = common::plain_dataset(3, vec![(vec![0, 1], 0), (vec![0, 1, 2], 0)]);
    let spec = ModelSpec::for_dataset(Family::Cdm, &ds).unwrap();
    let mut flat = vec![0.0; spec.n_params()];
    // Item 2 pulls item 0 up and leaves item 1 alone.
    flat[1] = 1.5;
    let m = ChoiceModel::from_flat(&spec, &flat).unwrap();
    let r2 = m.choice_probabilities(&ds, 0).unwrap();
    let r3 = m.choice_probabilities(&ds, 1).unwrap();
    assert_relative_eq!(r2[0] / r2[1], 1.0, epsilon = 1e-12);
    assert_relative_eq!(r3[0] / r3[1], 1.5f64.exp(), epsilon = 1e-12);
}

#[test]
fn zero_parameters_give_uniform_choice() {
    let ds = common::random_dataset(11, 6, 30, 2, 3);
    for family in Family::ALL {
        let spec = ModelSpec::for_dataset(family, &ds).unwrap().with_components(3);
        let m = ChoiceModel::zeros(&spec);
        for obs in 0..ds.len() {
            let p = m.choice_probabilities(&ds, obs).unwrap();
            let expect = 1.0 / p.len() as f64;
            assert!(p.iter().all(|&v| (v - expect).abs() < 1e-12), "{family}");
        }
    }
}

#[test]
fn weighted_likelihood_scales_linearly() {
    let ds = common::random_dataset(5, 5, 25, 2, 2);
    let values: Vec<f64> = (0..50).map(|k| ((k * 37 % 11) as f64 - 5.0) / 4.0).collect();
    let w2 = SampleWeights::new(vec![2.0; ds.len()], choice_confound::WeightKind::IpwRaw).unwrap();
    for family in Family::ALL {
        let m = random_model(family, &ds, &values);
        let ll = m.log_likelihood_unweighted(&ds).unwrap();
        assert_relative_eq!(m.log_likelihood(&ds, &w2).unwrap(), 2.0 * ll, max_relative = 1e-12);
    }
}
