use choice_confound::clustering::{
    cluster_accuracy, generate_sbm, random_assignment_like, spectral_cocluster, ClusterAssignment, IncidenceMatrix,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn accuracy_ignores_label_names(labels in prop::collection::vec(0usize..4, 1..60), shift in 1usize..4) {
        let k = 4;
        let truth = ClusterAssignment::new(labels.clone(), Vec::new(), k).unwrap();
        let renamed = ClusterAssignment::new(labels.iter().map(|l| (l + shift) % k).collect(), Vec::new(), k).unwrap();
        let acc = cluster_accuracy(&renamed, &truth).unwrap();
        prop_assert_eq!(acc.choosers, 1.0);
    }

    #[test]
    fn random_baseline_keeps_cluster_sizes(labels in prop::collection::vec(0usize..3, 3..80), seed in 0u64..100) {
        let ca = ClusterAssignment::new(labels, vec![0, 1, 2], 3).unwrap();
        let r = random_assignment_like(&ca, seed);
        prop_assert_eq!(r.sizes(), ca.sizes());
        prop_assert_eq!(r.item_labels, ca.item_labels);
    }
}

#[test]
fn accuracy_is_at_least_plurality_fraction() {
    let truth = ClusterAssignment::new(vec![0, 0, 0, 1, 1, 1], Vec::new(), 2).unwrap();
    let pred = ClusterAssignment::new(vec![0, 0, 1, 1, 1, 1], Vec::new(), 2).unwrap();
    let acc = cluster_accuracy(&pred, &truth).unwrap();
    assert!((acc.choosers - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn spectral_recovers_three_planted_blocks() {
    for seed in 0..3 {
        let sbm = generate_sbm(3, &[150, 150, 150], &[40, 40, 40], 0.6, 0.05, seed).unwrap();
        let pred = spectral_cocluster(&sbm.incidence, 3, seed).unwrap();
        let acc = cluster_accuracy(&pred, &sbm.truth).unwrap();
        assert!(acc.choosers > 0.97, "seed {seed}: {acc:?}");
        assert!(acc.items > 0.97, "seed {seed}: {acc:?}");
    }
}

#[test]
fn spectral_is_deterministic_and_labels_by_first_appearance() {
    let sbm = generate_sbm(2, &[60, 60], &[20, 20], 0.7, 0.1, 5).unwrap();
    let a = spectral_cocluster(&sbm.incidence, 2, 9).unwrap();
    let b = spectral_cocluster(&sbm.incidence, 2, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.chooser_labels[0], 0);
}

#[test]
fn disconnected_blocks_split_exactly() {
    let rows = vec![vec![0, 1], vec![1], vec![0], vec![2, 3], vec![3], vec![2, 3]];
    let inc = IncidenceMatrix::new(rows, 4).unwrap();
    let ca = spectral_cocluster(&inc, 2, 0).unwrap();
    assert_eq!(ca.chooser_labels, vec![0, 0, 0, 1, 1, 1]);
    assert_eq!(ca.item_labels, vec![0, 0, 1, 1]);
}
