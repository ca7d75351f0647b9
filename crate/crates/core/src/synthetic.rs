//! Ground-truth generators: the confounded MCDM world, exact finite
//! population oracles, the Gaussian recommender, and a typed
//! block-model population for clustering experiments.

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ChoiceDataset, Interner, Observation, Table};
use crate::error::{Error, Result};
use crate::models::softmax_in_place;
use crate::rng::{self, Rng};

/// Exact probability used by [`PopulationOracle`].
pub type Prob = Ratio<i64>;

/// Latent world behind the confounded experiment. `p[(i, j)]` is the pull
/// of item `j` on item `i`; the diagonal is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    /// Unit vectors, one `[cos, sin]` pair per item.
    pub item_embeddings: Vec<[f64; 2]>,
    /// Row-major `n × n`.
    pub true_cdm: Vec<f64>,
    pub confounding_strength: f64,
    pub uniform_mix_prob: f64,
    pub seed: u64,
}

/// How choice sets are assigned when sampling from a [`SyntheticWorld`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetMode {
    /// Uniform-branch mixture with the chooser-dependent logistic rule.
    Confounded,
    /// Uniform branch only: the counterfactual assignment.
    Uniform,
}

#[derive(Clone, Debug)]
pub struct WorldSample {
    /// Covariates are the chooser embeddings; item embeddings are withheld.
    pub dataset: ChoiceDataset,
    /// Sets discarded for having fewer than two items.
    pub rejections: usize,
}

impl SyntheticWorld {
    /// Draws item angles uniformly on `[0, 2π)` and pulls from `U(−1, 1)`.
    pub fn random(n_items: usize, confounding_strength: f64, seed: u64) -> Result<Self> {
        if n_items < 2 {
            return Err(Error::invalid("a world needs at least two items"));
        }
        let mut rng = rng::stream(seed, 1);
        let item_embeddings = (0..n_items)
            .map(|_| {
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                [a.cos(), a.sin()]
            })
            .collect();
        let mut true_cdm = vec![0.0; n_items * n_items];
        for i in 0..n_items {
            for j in 0..n_items {
                if i != j {
                    true_cdm[i * n_items + j] = rng.random_range(-1.0..1.0);
                }
            }
        }
        let world = Self {
            item_embeddings,
            true_cdm,
            confounding_strength,
            uniform_mix_prob: 0.25,
            seed,
        };
        world.validate()?;
        Ok(world)
    }

    pub fn with_confounding(mut self, c: f64) -> Result<Self> {
        self.confounding_strength = c;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_items();
        if !(self.confounding_strength >= 0.0 && self.confounding_strength.is_finite()) {
            return Err(Error::invalid("confounding strength must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.uniform_mix_prob) {
            return Err(Error::invalid("uniform mixing probability must lie in [0, 1]"));
        }
        if self.true_cdm.len() != n * n || self.true_cdm.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pull matrix must be finite and n × n"));
        }
        if self
            .item_embeddings
            .iter()
            .any(|e| ((e[0] * e[0] + e[1] * e[1]).sqrt() - 1.0).abs() > 1e-9)
        {
            return Err(Error::invalid("item embeddings must be unit vectors"));
        }
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.item_embeddings.len()
    }

    pub fn pull_matrix(&self) -> DMatrix<f64> {
        let n = self.n_items();
        DMatrix::from_row_slice(n, n, &self.true_cdm)
    }

    pub fn affinity(&self, x: [f64; 2], item: usize) -> f64 {
        let y = self.item_embeddings[item];
        x[0] * y[0] + x[1] * y[1]
    }

    /// `Pr(i ∈ C)` under the logistic branch.
    pub fn inclusion_probability(&self, x: [f64; 2], item: usize) -> f64 {
        1.0 / (1.0 + (-self.confounding_strength * self.affinity(x, item)).exp())
    }

    /// True choice probabilities over `set` (sorted item indices).
    pub fn choice_probabilities(&self, x: [f64; 2], set: &[usize]) -> Vec<f64> {
        let n = self.n_items();
        let mut u: Vec<f64> = set
            .iter()
            .map(|&i| {
                let pulls: f64 = set.iter().filter(|&&j| j != i).map(|&j| self.true_cdm[i * n + j]).sum();
                self.affinity(x, i) + pulls
            })
            .collect();
        softmax_in_place(&mut u);
        u
    }

    /// Draws a set with at least two items, returning it and the number of
    /// rejected draws.
    fn draw_set(&self, x: [f64; 2], mode: SetMode, rng: &mut Rng) -> (Vec<usize>, usize) {
        let uniform = match mode {
            SetMode::Uniform => true,
            SetMode::Confounded => rng.random::<f64>() < self.uniform_mix_prob,
        };
        let mut rejections = 0;
        loop {
            let set: Vec<usize> = (0..self.n_items())
                .filter(|&i| {
                    let p = if uniform { 0.5 } else { self.inclusion_probability(x, i) };
                    rng.random::<f64>() < p
                })
                .collect();
            if set.len() >= 2 {
                return (set, rejections);
            }
            rejections += 1;
        }
    }

    /// Samples `n_samples` fresh choosers with embeddings uniform on the
    /// unit circle.
    pub fn sample(&self, n_samples: usize, mode: SetMode, seed: u64) -> Result<WorldSample> {
        if n_samples == 0 {
            return Err(Error::invalid("n_samples must be at least 1"));
        }
        let mut rng = rng::stream(seed, 2);
        let mut obs = Vec::with_capacity(n_samples);
        let mut cov = Vec::with_capacity(2 * n_samples);
        let mut rejections = 0;
        for k in 0..n_samples {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let x = [a.cos(), a.sin()];
            let (set, r) = self.draw_set(x, mode, &mut rng);
            rejections += r;
            let probs = self.choice_probabilities(x, &set);
            let chosen = set[sample_index(&probs, &mut rng)];
            obs.push(Observation::new(k, set, chosen)?);
            cov.extend_from_slice(&x);
        }
        let items = Interner::from_ids((0..self.n_items()).map(|i| format!("item{i}")))?;
        let choosers = Interner::from_ids((0..n_samples).map(|k| format!("a{k}")))?;
        let dataset = ChoiceDataset::from_parts(items, choosers, obs)?
            .with_chooser_covariates(Table::with_default_names("x", n_samples, 2, cov)?)?;
        Ok(WorldSample { dataset, rejections })
    }
}

/// Fresh world and a confounded sample from it. Covariates are the chooser
/// embeddings; item embeddings stay hidden in the returned world.
pub fn generate_confounded(
    n_items: usize,
    n_samples: usize,
    c: f64,
    seed: u64,
) -> Result<(ChoiceDataset, SyntheticWorld)> {
    let world = SyntheticWorld::random(n_items, c, seed)?;
    let sample = world.sample(n_samples, SetMode::Confounded, seed)?;
    Ok((sample.dataset, world))
}

fn sample_index(probs: &[f64], rng: &mut Rng) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// A finite population of chooser types with exact set-assignment and
/// choice distributions over a fixed support of sets.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationOracle {
    pub type_names: Vec<String>,
    pub items: Vec<String>,
    pub prior: Vec<Prob>,
    /// Support of the set assignment; each set sorted.
    pub sets: Vec<Vec<usize>>,
    /// `set_probs[a][s] = Pr(sets[s] | a)`.
    pub set_probs: Vec<Vec<Prob>>,
    /// `choice_probs[a][s][pos] = Pr(sets[s][pos] | a, sets[s])`.
    pub choice_probs: Vec<Vec<Vec<Prob>>>,
}

/// One draw of a population with the true assignment propensities.
#[derive(Clone, Debug)]
pub struct OracleSample {
    /// Covariates are one-hot type indicators.
    pub dataset: ChoiceDataset,
    pub types: Vec<usize>,
    /// `Pr(C | a)` of each observation's set.
    pub propensities: Vec<f64>,
}

impl PopulationOracle {
    pub fn new(
        type_names: Vec<String>,
        items: Vec<String>,
        prior: Vec<Prob>,
        sets: Vec<Vec<usize>>,
        set_probs: Vec<Vec<Prob>>,
        choice_probs: Vec<Vec<Vec<Prob>>>,
    ) -> Result<Self> {
        let o = Self {
            type_names,
            items,
            prior,
            sets,
            set_probs,
            choice_probs,
        };
        o.validate()?;
        Ok(o)
    }

    fn validate(&self) -> Result<()> {
        let t = self.type_names.len();
        let one = Prob::from_integer(1);
        let zero = Prob::from_integer(0);
        let normalized = |ps: &[Prob]| ps.iter().all(|p| *p >= zero) && ps.iter().sum::<Prob>() == one;
        if self.prior.len() != t || !normalized(&self.prior) {
            return Err(Error::invalid("type prior must be a distribution over the types"));
        }
        for s in &self.sets {
            if s.is_empty() || s.windows(2).any(|w| w[0] >= w[1]) || s.iter().any(|&i| i >= self.items.len()) {
                return Err(Error::invalid("support sets must be sorted, distinct, and nonempty"));
            }
        }
        if self.set_probs.len() != t || self.choice_probs.len() != t {
            return Err(Error::invalid("one set and choice table per type"));
        }
        for a in 0..t {
            if self.set_probs[a].len() != self.sets.len() || !normalized(&self.set_probs[a]) {
                return Err(Error::invalid(format!("Pr(C | {}) is not a distribution", self.type_names[a])));
            }
            if self.choice_probs[a].len() != self.sets.len() {
                return Err(Error::invalid("one choice distribution per support set"));
            }
            for (s, probs) in self.choice_probs[a].iter().enumerate() {
                if probs.len() != self.sets[s].len() || !normalized(probs) {
                    return Err(Error::invalid("choice probabilities must be a distribution over the set"));
                }
            }
        }
        Ok(())
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|s| s == id)
    }

    fn locate(&self, item: usize, set: &[usize]) -> Result<(usize, usize)> {
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        let s = self
            .sets
            .iter()
            .position(|c| *c == sorted)
            .ok_or_else(|| Error::contract("set is outside the oracle's support"))?;
        let pos = self.sets[s]
            .binary_search(&item)
            .map_err(|_| Error::contract("item is not in the set"))?;
        Ok((s, pos))
    }

    /// `Pr(a | C) ∝ Pr(C | a) Pr(a)`.
    pub fn posterior_types(&self, set: &[usize]) -> Result<Vec<Prob>> {
        let (s, _) = self.locate(*set.first().ok_or_else(|| Error::contract("empty set"))?, set)?;
        let joint: Vec<Prob> = self.prior.iter().zip(&self.set_probs).map(|(p, sp)| p * sp[s]).collect();
        let total: Prob = joint.iter().sum();
        if total == Prob::from_integer(0) {
            return Err(Error::contract("set has zero assignment probability"));
        }
        Ok(joint.into_iter().map(|j| j / total).collect())
    }

    /// `Pr(i | C) = Σ_a Pr(i | a, C) Pr(a | C)`: what the data show.
    pub fn observed_choice_prob(&self, item: usize, set: &[usize]) -> Result<Prob> {
        let (s, pos) = self.locate(item, set)?;
        let post = self.posterior_types(set)?;
        Ok(post.iter().zip(&self.choice_probs).map(|(w, cp)| w * cp[s][pos]).sum())
    }

    /// `E_a[Pr(i | a, C)]` under the prior: population-average behavior.
    pub fn aggregate_choice_prob(&self, item: usize, set: &[usize]) -> Result<Prob> {
        let (s, pos) = self.locate(item, set)?;
        Ok(self.prior.iter().zip(&self.choice_probs).map(|(w, cp)| w * cp[s][pos]).sum())
    }

    /// Draws `n` fresh choosers.
    pub fn sample(&self, n: usize, seed: u64) -> Result<OracleSample> {
        let f = |p: &Prob| *p.numer() as f64 / *p.denom() as f64;
        let prior: Vec<f64> = self.prior.iter().map(f).collect();
        let t = self.type_names.len();
        let mut rng = rng::stream(seed, 3);
        let mut obs = Vec::with_capacity(n);
        let mut types = Vec::with_capacity(n);
        let mut props = Vec::with_capacity(n);
        let mut cov = vec![0.0; n * t];
        for k in 0..n {
            let a = sample_index(&prior, &mut rng);
            let sp: Vec<f64> = self.set_probs[a].iter().map(f).collect();
            let s = sample_index(&sp, &mut rng);
            let cp: Vec<f64> = self.choice_probs[a][s].iter().map(f).collect();
            let chosen = self.sets[s][sample_index(&cp, &mut rng)];
            obs.push(Observation::new(k, self.sets[s].clone(), chosen)?);
            types.push(a);
            props.push(sp[s]);
            cov[k * t + a] = 1.0;
        }
        let items = Interner::from_ids(self.items.iter())?;
        let choosers = Interner::from_ids((0..n).map(|k| format!("a{k}")))?;
        let names = self.type_names.iter().map(|s| format!("is_{s}")).collect();
        let dataset = ChoiceDataset::from_parts(items, choosers, obs)?.with_chooser_covariates(Table::new(names, n, cov)?)?;
        Ok(OracleSample {
            dataset,
            types,
            propensities: props,
        })
    }
}

/// Cat and dog people choosing pets: a quarter of the population are cat
/// people, who mostly see {cat, dog} and prefer cats 3:1; dog people mostly
/// see {cat, dog, fish} and prefer dogs 3:1. Nobody picks the fish.
pub fn pets_oracle() -> PopulationOracle {
    let r = |n, d| Prob::new(n, d);
    PopulationOracle::new(
        vec!["cat_person".into(), "dog_person".into()],
        vec!["cat".into(), "dog".into(), "fish".into()],
        vec![r(1, 4), r(3, 4)],
        vec![vec![0, 1], vec![0, 1, 2]],
        vec![vec![r(3, 4), r(1, 4)], vec![r(1, 4), r(3, 4)]],
        vec![
            vec![vec![r(3, 4), r(1, 4)], vec![r(3, 4), r(1, 4), r(0, 1)]],
            vec![vec![r(1, 4), r(3, 4)], vec![r(1, 4), r(3, 4), r(0, 1)]],
        ],
    )
    .expect("pets oracle is well formed")
}

/// Lower factor `L` with `L Lᵀ = S` for a symmetric PSD `S` (eigen-based,
/// so singular covariances are allowed).
fn psd_factor(s: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(Error::invalid(format!("{what} must be square")));
    }
    if (s - s.transpose()).abs().max() > 1e-9 * (1.0 + s.abs().max()) {
        return Err(Error::invalid(format!("{what} must be symmetric")));
    }
    let eig = s.clone().symmetric_eigen();
    let tol = 1e-9 * (1.0 + s.abs().max());
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return Err(Error::invalid(format!("{what} must be positive semidefinite")));
    }
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * root)
}

fn gaussian(mean: &DVector<f64>, factor: &DMatrix<f64>, rng: &mut Rng) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    mean + factor * z
}

/// Choosers `x ~ N(μ, Σ₀)` each shown `k` fresh items `y ~ N(x, Σ)`, choosing
/// by a softmax of `xᵀy`. Items are per-observation with feature rows;
/// covariates carry `x`.
pub fn generate_gaussian_recommender(
    mu: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ChoiceDataset> {
    let d = mu.len();
    if d == 0 || sigma0.shape() != (d, d) || sigma.shape() != (d, d) {
        return Err(Error::invalid("μ, Σ₀ and Σ must share a positive dimension"));
    }
    if k < 2 {
        return Err(Error::invalid("set size k must be at least 2"));
    }
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let l0 = psd_factor(sigma0, "Σ₀")?;
    let l = psd_factor(sigma, "Σ")?;
    let mut rng = rng::stream(seed, 4);
    let mut cov = Vec::with_capacity(n_samples * d);
    let mut feats = Vec::with_capacity(n_samples * k * d);
    let mut obs = Vec::with_capacity(n_samples);
    let mut util = vec![0.0; k];
    for a in 0..n_samples {
        let x = gaussian(mu, &l0, &mut rng);
        for u in util.iter_mut() {
            let y = gaussian(&x, &l, &mut rng);
            *u = x.dot(&y);
            feats.extend(y.iter());
        }
        softmax_in_place(&mut util);
        let pick = sample_index(&util, &mut rng);
        obs.push(Observation::new(a, (a * k..(a + 1) * k).collect(), a * k + pick)?);
        cov.extend(x.iter());
    }
    let items = Interner::from_ids((0..n_samples * k).map(|i| format!("r{i}")))?;
    let choosers = Interner::from_ids((0..n_samples).map(|a| format!("a{a}")))?;
    ChoiceDataset::from_parts(items, choosers, obs)?
        .with_chooser_covariates(Table::with_default_names("x", n_samples, d, cov)?)?
        .with_item_features(Table::with_default_names("y", n_samples * k, d, feats)?)
}

/// Population whose latent types drive both set assignment and taste.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypedPopulationConfig {
    pub n_types: usize,
    pub items_per_type: usize,
    /// Inclusion probability of same-type items.
    pub p: f64,
    /// Inclusion probability of other-type items.
    pub q: f64,
    /// Utility bonus for same-type items.
    pub affinity: f64,
    /// Standard deviation of per-type utility noise.
    pub taste_noise: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for TypedPopulationConfig {
    fn default() -> Self {
        Self {
            n_types: 3,
            items_per_type: 20,
            p: 0.4,
            q: 0.05,
            affinity: 2.0,
            taste_noise: 1.0,
            n_samples: 3000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TypedPopulation {
    pub dataset: ChoiceDataset,
    /// Type of each observation's chooser.
    pub chooser_types: Vec<usize>,
    pub item_types: Vec<usize>,
    /// `utilities[t][i]`.
    pub utilities: Vec<Vec<f64>>,
    pub rejections: usize,
}

/// Each observation draws a type uniformly, a block-model set (rejecting
/// sets under two items), and a choice from that type's logit.
pub fn generate_typed_population(cfg: &TypedPopulationConfig) -> Result<TypedPopulation> {
    let t = cfg.n_types;
    if t == 0 || cfg.items_per_type == 0 || cfg.n_samples == 0 {
        return Err(Error::invalid("types, items per type and samples must be positive"));
    }
    if !(0.0 <= cfg.q && cfg.q < cfg.p && cfg.p <= 1.0) {
        return Err(Error::invalid("need 0 ≤ q < p ≤ 1"));
    }
    let n = t * cfg.items_per_type;
    if n < 2 {
        return Err(Error::invalid("need at least two items"));
    }
    let mut rng = rng::stream(cfg.seed, 5);
    let item_types: Vec<usize> = (0..n).map(|i| i / cfg.items_per_type).collect();
    let utilities: Vec<Vec<f64>> = (0..t)
        .map(|ty| {
            item_types
                .iter()
                .map(|&it| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    cfg.taste_noise * noise + if it == ty { cfg.affinity } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let mut obs = Vec::with_capacity(cfg.n_samples);
    let mut chooser_types = Vec::with_capacity(cfg.n_samples);
    let mut rejections = 0;
    for a in 0..cfg.n_samples {
        let ty = rng.random_range(0..t);
        let set = loop {
            let set: Vec<usize> = (0..n)
                .filter(|&i| rng.random::<f64>() < if item_types[i] == ty { cfg.p } else { cfg.q })
                .collect();
            if set.len() >= 2 {
                break set;
            }
            rejections += 1;
        };
        let mut probs: Vec<f64> = set.iter().map(|&i| utilities[ty][i]).collect();
        softmax_in_place(&mut probs);
        let chosen = set[sample_index(&probs, &mut rng)];
        obs.push(Observation::new(a, set, chosen)?);
        chooser_types.push(ty);
    }
    let items = Interner::from_ids((0..n).map(|i| format!("item{i}")))?;
    let choosers = Interner::from_ids((0..cfg.n_samples).map(|a| format!("a{a}")))?;
    Ok(TypedPopulation {
        dataset: ChoiceDataset::from_parts(items, choosers, obs)?,
        chooser_types,
        item_types,
        utilities,
        rejections,
    })
}
