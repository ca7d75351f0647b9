mod common;

use choice_confound::clustering::{cluster_fit, ClusterAssignment};
use choice_confound::estimation::{fit, fit_doubly_robust, fit_mixed_logit, EmConfig, FitConfig};
use choice_confound::models::{ChoiceModel, Family, ModelSpec};
use choice_confound::propensity::{PerItemLogistic, PropensityModel};
use choice_confound::{SampleWeights, WeightKind};
use nalgebra::{DMatrix, DVector};

#[test]
fn em_recovers_mixture_weights() {
    let u = vec![vec![3.0, 1.0, -3.0, -1.0, 0.0], vec![-3.0, -1.0, 3.0, 1.0, 0.0]];
    let pi = [0.3, 0.7];
    let em = EmConfig {
        max_iters: 200,
        ..EmConfig::default()
    };
    for seed in 0..8 {
        let ds = common::mixture_dataset(100 + seed, &pi, &u, 3000);
        let cfg = FitConfig {
            seed,
            ..FitConfig::default()
        };
        let f = fit_mixed_logit(2, &ds, &cfg, &em).unwrap();
        let ChoiceModel::MixedLogit { pi: got, u: util } = &f.model else {
            panic!("expected a mixture");
        };
        // Identify components by which of items 0 and 2 they prefer.
        let first = if util[(0, 0)] - util[(0, 2)] > 0.0 { 0 } else { 1 };
        assert!((got[first] - 0.3).abs() < 0.1, "seed {seed}: π = {got:?}");
        for w in f.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }
}

#[test]
fn duplicated_data_equals_integer_weights() {
    let ds = common::random_dataset(8, 5, 60, 2, 0);
    let doubled_idx: Vec<usize> = (0..ds.len()).chain(0..ds.len()).collect();
    let doubled = ds.subset(&doubled_idx);
    let cfg = FitConfig {
        normalize_weights: false,
        ..FitConfig::default()
    };
    let w2 = SampleWeights::new(vec![2.0; ds.len()], WeightKind::IpwRaw).unwrap();
    for family in [Family::Logit, Family::Mnl, Family::Cdm] {
        let spec = ModelSpec::for_dataset(family, &ds).unwrap();
        let a = fit(&spec, &ds, &w2, &cfg).unwrap();
        let b = fit(&spec, &doubled, &SampleWeights::uniform(doubled.len()), &cfg).unwrap();
        for (x, y) in a.model.flatten().iter().zip(b.model.flatten()) {
            assert!((x - y).abs() < 1e-9, "{family}");
        }
    }
}

#[test]
fn doubly_robust_with_constant_propensities_is_plain_fit() {
    let ds = common::random_dataset(2, 5, 120, 2, 0);
    let flat = PerItemLogistic::new(DMatrix::zeros(5, 2), DVector::zeros(5));
    let pm = PropensityModel::ItemLogistic(flat);
    let cfg = FitConfig::default();
    let spec = ModelSpec::for_dataset(Family::Mnl, &ds).unwrap();
    let dr = fit_doubly_robust(&spec, &ds, &pm, &cfg).unwrap();
    let plain = fit(&spec, &ds, &SampleWeights::uniform(ds.len()), &cfg).unwrap();
    for (x, y) in dr.model.flatten().iter().zip(plain.model.flatten()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn single_cluster_fit_equals_global_fit() {
    let ds = common::random_dataset(6, 6, 150, 0, 0);
    let ca = ClusterAssignment::new(vec![0; ds.len()], Vec::new(), 1).unwrap();
    let cfg = FitConfig::default();
    let cf = cluster_fit(&ds, &ca, Family::Logit, &cfg).unwrap();
    let global = fit(
        &ModelSpec::for_dataset(Family::Logit, &ds).unwrap(),
        &ds,
        &SampleWeights::uniform(ds.len()),
        &cfg,
    )
    .unwrap();
    assert_eq!(cf.fits[0].model, global.model);
    assert_eq!(cf.total_log_likelihood, global.log_likelihood);
}

#[test]
fn logit_recovers_utilities() {
    let u = vec![vec![1.0, 0.0, -1.0, 0.5]];
    let ds = common::mixture_dataset(12, &[1.0], &u, 20_000);
    let spec = ModelSpec::for_dataset(Family::Logit, &ds).unwrap();
    let f = fit(&spec, &ds, &SampleWeights::uniform(ds.len()), &FitConfig::default()).unwrap();
    let got = f.model.flatten();
    // Utilities are identified up to a shift; compare centered values.
    let center = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| x - m).collect::<Vec<_>>()
    };
    for (a, b) in center(&got).iter().zip(center(&u[0])) {
        assert!((a - b).abs() < 0.05, "{got:?}");
    }
}
