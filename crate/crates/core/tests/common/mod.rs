#![allow(dead_code)]

use choice_confound::{ChoiceDataset, Interner, Observation, Table};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random dataset with a few singleton sets; tables of width zero are omitted.
pub fn random_dataset(seed: u64, n_items: usize, n_obs: usize, d_x: usize, d_y: usize) -> ChoiceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_choosers = (n_obs / 3).max(1);
    let mut obs = Vec::with_capacity(n_obs);
    for k in 0..n_obs {
        let size = rng.random_range(1..=n_items);
        let mut set: Vec<usize> = (0..n_items).collect();
        for i in (1..set.len()).rev() {
            set.swap(i, rng.random_range(0..=i));
        }
        set.truncate(size);
        let chosen = set[rng.random_range(0..size)];
        obs.push(Observation::new(k % n_choosers, set, chosen).unwrap());
    }
    let items = Interner::from_ids((0..n_items).map(|i| format!("i{i}"))).unwrap();
    let choosers = Interner::from_ids((0..n_choosers).map(|a| format!("a{a}"))).unwrap();
    let cov = (0..n_choosers * d_x).map(|_| rng.random_range(-1.0..1.0)).collect();
    let feat = (0..n_items * d_y).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ds = ChoiceDataset::from_parts(items, choosers, obs).unwrap();
    if d_x > 0 {
        ds = ds
            .with_chooser_covariates(Table::with_default_names("x", n_choosers, d_x, cov).unwrap())
            .unwrap();
    }
    if d_y > 0 {
        ds = ds
            .with_item_features(Table::with_default_names("y", n_items, d_y, feat).unwrap())
            .unwrap();
    }
    ds
}

/// Dataset over `n_items` with every observation a fresh chooser and no tables.
pub fn plain_dataset(n_items: usize, sets: Vec<(Vec<usize>, usize)>) -> ChoiceDataset {
    let items = Interner::from_ids((0..n_items).map(|i| format!("i{i}"))).unwrap();
    let choosers = Interner::from_ids((0..sets.len()).map(|a| format!("a{a}"))).unwrap();
    let obs = sets
        .into_iter()
        .enumerate()
        .map(|(k, (s, c))| Observation::new(k, s, c).unwrap())
        .collect();
    ChoiceDataset::from_parts(items, choosers, obs).unwrap()
}

/// Samples from a `pi`-weighted mixture of logits with utility rows `u`.
pub fn mixture_dataset(seed: u64, pi: &[f64], u: &[Vec<f64>], n_obs: usize) -> ChoiceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = u[0].len();
    let draw = |probs: &[f64], rng: &mut ChaCha8Rng| {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if r < acc {
                return k;
            }
        }
        probs.len() - 1
    };
    let mut sets = Vec::with_capacity(n_obs);
    for _ in 0..n_obs {
        let comp = draw(pi, &mut rng);
        let set: Vec<usize> = loop {
            let s: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < 0.6).collect();
            if s.len() >= 2 {
                break s;
            }
        };
        let mut p: Vec<f64> = set.iter().map(|&i| u[comp][i].exp()).collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        let c = set[draw(&p, &mut rng)];
        sets.push((set, c));
    }
    plain_dataset(n, sets)
}
