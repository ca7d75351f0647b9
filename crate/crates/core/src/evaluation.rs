//! Prediction metrics, likelihood-ratio tests, regularity diagnostics and
//! the synthetic benchmarks.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{build_incidence, cluster_fit, random_assignment_like, spectral_cocluster};
use crate::dataset::ChoiceDataset;
use crate::error::{Error, Result};
use crate::estimation::{fit, fit_mixed_logit, EmConfig, FitConfig, FitResult};
use crate::models::{ChoiceModel, Family, ModelSpec};
use crate::propensity::{fit_item_logistic_with, ipw_weights, PropensityModel};
use crate::rng::derive_seed;
use crate::stats::{chi2_sf, fisher_exact_two_sided};
use crate::synthetic::{generate_typed_population, SetMode, SyntheticWorld, TypedPopulationConfig};
use crate::weights::SampleWeights;

/// Relative position of the chosen item among `probs` (descending order,
/// tied ranks averaged): 1 when ranked first, 0 when last.
pub fn relative_position(probs: &[f64], chosen: usize) -> f64 {
    let pc = probs[chosen];
    let above = probs.iter().filter(|&&p| p > pc).count() as f64;
    let tied = probs.iter().filter(|&&p| p == pc).count() as f64;
    let rank = above + (tied + 1.0) / 2.0;
    1.0 - (rank - 1.0) / (probs.len() as f64 - 1.0)
}

/// Mean relative position of the true choice over observations with at
/// least two items, using `predict(obs)` for per-set probabilities.
pub fn mean_relative_position_with<F>(ds: &ChoiceDataset, predict: F) -> Result<f64>
where
    F: Fn(usize) -> Result<Vec<f64>>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, o) in ds.observations().iter().enumerate() {
        if !o.is_informative() {
            continue;
        }
        total += relative_position(&predict(k)?, o.chosen_position());
        count += 1;
    }
    if count == 0 {
        return Err(Error::contract("no observation has two or more items"));
    }
    Ok(total / count as f64)
}

pub fn mean_relative_position(m: &ChoiceModel, ds: &ChoiceDataset) -> Result<f64> {
    m.spec().check_data(ds)?;
    mean_relative_position_with(ds, |k| m.choice_probabilities(ds, k))
}

/// Weighted share of observations with set `set` that chose `item`; `None`
/// when the set never occurs.
pub fn empirical_choice_prob(ds: &ChoiceDataset, w: Option<&SampleWeights>, item: usize, set: &[usize]) -> Option<f64> {
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    let (mut hit, mut total) = (0.0, 0.0);
    for (k, o) in ds.observations().iter().enumerate() {
        if o.choice_set == sorted {
            let wk = w.map_or(1.0, |w| w.values()[k]);
            total += wk;
            if o.chosen == item {
                hit += wk;
            }
        }
    }
    (total > 0.0).then(|| hit / total)
}

/// Whether `restricted` is a special case of `full`.
pub fn is_nested(restricted: Family, full: Family) -> bool {
    use Family::*;
    restricted == full
        || matches!(
            (restricted, full),
            (Logit, Mnl) | (Logit, Cdm) | (Mnl, Mcdm) | (Cdm, Mcdm) | (Cl, Cml) | (Cl, Lcl) | (Cml, Mlcl) | (Lcl, Mlcl)
        )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrtReport {
    pub restricted_family: Family,
    pub full_family: Family,
    pub restricted_ll: f64,
    pub full_ll: f64,
    /// `2(full − restricted)`; may be slightly negative after regularization.
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test from unregularized log-likelihoods on `ds`.
/// Degrees of freedom are the parameter-count difference, at least 1.
pub fn lrt_models(restricted: &ChoiceModel, full: &ChoiceModel, ds: &ChoiceDataset) -> Result<LrtReport> {
    let (rf, ff) = (restricted.family(), full.family());
    if !is_nested(rf, ff) {
        return Err(Error::contract(format!("{rf} is not nested in {ff}")));
    }
    let restricted_ll = restricted.log_likelihood_unweighted(ds)?;
    let full_ll = full.log_likelihood_unweighted(ds)?;
    let df = full.spec().n_params().saturating_sub(restricted.spec().n_params()).max(1);
    let statistic = 2.0 * (full_ll - restricted_ll);
    let p_value = if statistic <= 0.0 { 1.0 } else { chi2_sf(statistic, df) };
    Ok(LrtReport {
        restricted_family: rf,
        full_family: ff,
        restricted_ll,
        full_ll,
        statistic,
        df,
        p_value,
    })
}

pub fn lrt(restricted: &FitResult, full: &FitResult, ds: &ChoiceDataset) -> Result<LrtReport> {
    lrt_models(&restricted.model, &full.model, ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityFinding {
    pub subset: Vec<String>,
    pub superset: Vec<String>,
    pub item: String,
    /// `[chose item, chose something else]` within the subset's observations.
    pub subset_counts: [u64; 2],
    pub superset_counts: [u64; 2],
    pub subset_rate: f64,
    pub superset_rate: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub findings: Vec<RegularityFinding>,
    /// Fisher tests run (before the `alpha` cut), for multiple-comparison
    /// bookkeeping.
    pub n_tests: usize,
    pub min_count: usize,
    pub alpha: f64,
    pub general_pairs: bool,
}

/// Searches observed set pairs `C ⊂ C′` for items chosen more often from
/// the larger set, testing each with a two-sided Fisher exact test. By
/// default `C′` adds exactly one item; `general_pairs` allows any superset.
pub fn detect_regularity_violations(
    ds: &ChoiceDataset,
    min_count: usize,
    alpha: f64,
    general_pairs: bool,
) -> Result<RegularityReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("alpha must lie in [0, 1]"));
    }
    let sets = ds.unique_sets();
    let mut totals = vec![0u64; sets.len()];
    let mut chosen: Vec<Vec<u64>> = sets.iter().map(|s| vec![0; s.len()]).collect();
    for (k, o) in ds.observations().iter().enumerate() {
        let s = ds.set_id(k);
        totals[s] += 1;
        chosen[s][o.chosen_position()] += 1;
    }
    let index: HashMap<&[usize], usize> = sets.iter().enumerate().map(|(s, c)| (c.as_slice(), s)).collect();
    let enough = |s: usize| totals[s] as usize >= min_count.max(1);
    let mut pairs = Vec::new();
    for (big, c) in sets.iter().enumerate() {
        if !enough(big) {
            continue;
        }
        if general_pairs {
            for (small, d) in sets.iter().enumerate() {
                if small != big && d.len() < c.len() && enough(small) && d.iter().all(|i| c.binary_search(i).is_ok()) {
                    pairs.push((small, big));
                }
            }
        } else {
            for drop in 0..c.len() {
                let mut d = c.clone();
                d.remove(drop);
                if let Some(&small) = index.get(d.as_slice()) {
                    if enough(small) {
                        pairs.push((small, big));
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    let ids = |s: &[usize]| s.iter().map(|&i| ds.items().id(i).to_string()).collect::<Vec<_>>();
    let mut findings = Vec::new();
    let mut n_tests = 0;
    for (small, big) in pairs {
        for (pos, &item) in sets[small].iter().enumerate() {
            let a = chosen[small][pos];
            let b = chosen[big][sets[big].binary_search(&item).expect("subset item")];
            let (na, nb) = (totals[small], totals[big]);
            let (ra, rb) = (a as f64 / na as f64, b as f64 / nb as f64);
            if rb <= ra {
                continue;
            }
            n_tests += 1;
            let p = fisher_exact_two_sided([[a, na - a], [b, nb - b]]);
            if p <= alpha {
                findings.push(RegularityFinding {
                    subset: ids(&sets[small]),
                    superset: ids(&sets[big]),
                    item: ds.items().id(item).to_string(),
                    subset_counts: [a, na - a],
                    superset_counts: [b, nb - b],
                    subset_rate: ra,
                    superset_rate: rb,
                    p_value: p,
                });
            }
        }
    }
    findings.sort_by(|x, y| x.p_value.total_cmp(&y.p_value));
    Ok(RegularityReport {
        findings,
        n_tests,
        min_count,
        alpha,
        general_pairs,
    })
}

/// Left-aligned first column, right-aligned rest.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let cols = headers.len();
    let mut width: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        for (c, cell) in cells.enumerate().take(cols) {
            let pad = width[c] - cell.chars().count();
            if c > 0 {
                out.push_str("  ");
                out.push_str(&" ".repeat(pad));
                out.push_str(cell);
            } else {
                out.push_str(cell);
                out.push_str(&" ".repeat(pad));
            }
        }
        out.push('\n');
    };
    line(&mut out, &mut headers.iter().copied());
    let rule: Vec<String> = width.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &mut rule.iter().map(String::as_str));
    for r in rows {
        line(&mut out, &mut r.iter().map(String::as_str));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    /// Held-out confounded observations.
    Confounded,
    /// Fresh observations with uniformly random sets.
    Counterfactual,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Confounded => "confounded",
            Self::Counterfactual => "counterfactual",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BenchMethod {
    pub family: Family,
    pub ipw: bool,
}

impl BenchMethod {
    pub fn label(&self) -> String {
        if self.ipw {
            format!("{}+ipw", self.family)
        } else {
            self.family.to_string()
        }
    }

    /// Logit, MNL, CDM and MCDM, each with and without IPW.
    pub fn standard() -> Vec<Self> {
        [Family::Logit, Family::Mnl, Family::Cdm, Family::Mcdm]
            .into_iter()
            .flat_map(|family| [false, true].map(|ipw| Self { family, ipw }))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n_items: usize,
    pub n_samples: usize,
    pub train_fraction: f64,
    pub n_trials: usize,
    pub confounding: Vec<f64>,
    pub methods: Vec<BenchMethod>,
    pub seed: u64,
    pub fit: FitConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_items: 20,
            n_samples: 10_000,
            train_fraction: 0.8,
            n_trials: 8,
            confounding: vec![0.0, 2.5, 5.0],
            methods: BenchMethod::standard(),
            seed: 0,
            fit: FitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: BenchMethod,
    pub split: Split,
    pub c: f64,
    pub mean: f64,
    pub stderr: f64,
    /// Per-trial values in trial order.
    pub trials: Vec<f64>,
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One trial at one confounding level: (method index, split, MRP).
fn benchmark_cell(cfg: &BenchmarkConfig, trial: usize, ci: usize) -> Result<Vec<(usize, Split, f64)>> {
    let c = cfg.confounding[ci];
    // The world depends on the trial only, so levels of c share it.
    let world = SyntheticWorld::random(cfg.n_items, c, derive_seed(cfg.seed, trial as u64))?;
    let cell_seed = derive_seed(derive_seed(cfg.seed, trial as u64), 1 + ci as u64);
    let data = world.sample(cfg.n_samples, SetMode::Confounded, cell_seed)?.dataset;
    let (train, test) = data.split(cfg.train_fraction, cell_seed)?;
    let counterfactual = world
        .sample(test.len(), SetMode::Uniform, derive_seed(cell_seed, 2))?
        .dataset;
    let weights = if cfg.methods.iter().any(|m| m.ipw) {
        let pm = PropensityModel::ItemLogistic(fit_item_logistic_with(&train, &cfg.fit)?);
        Some(ipw_weights(&pm, &train, None)?)
    } else {
        None
    };
    let uniform = SampleWeights::uniform(train.len());
    let mut out = Vec::new();
    for (mi, m) in cfg.methods.iter().enumerate() {
        let spec = ModelSpec::for_dataset(m.family, &train)?;
        let w = if m.ipw { weights.as_ref().expect("computed above") } else { &uniform };
        let model = fit(&spec, &train, w, &cfg.fit)?.model;
        out.push((mi, Split::Confounded, mean_relative_position(&model, &test)?));
        out.push((mi, Split::Counterfactual, mean_relative_position(&model, &counterfactual)?));
    }
    Ok(out)
}

/// Confounded-versus-counterfactual prediction quality across confounding
/// strengths. Each trial draws its own world; trials run in parallel.
pub fn counterfactual_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    if cfg.n_trials == 0 || cfg.confounding.is_empty() || cfg.methods.is_empty() {
        return Err(Error::invalid("benchmark needs trials, confounding levels and methods"));
    }
    if cfg.confounding.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
        return Err(Error::invalid("confounding strengths must be finite and nonnegative"));
    }
    let cells: Vec<(usize, usize)> = (0..cfg.n_trials)
        .flat_map(|t| (0..cfg.confounding.len()).map(move |ci| (t, ci)))
        .collect();
    let results: Vec<Vec<(usize, Split, f64)>> = cells
        .par_iter()
        .map(|&(t, ci)| benchmark_cell(cfg, t, ci))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (ci, &c) in cfg.confounding.iter().enumerate() {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            for split in [Split::Confounded, Split::Counterfactual] {
                let trials: Vec<f64> = cells
                    .iter()
                    .zip(&results)
                    .filter(|((_, cj), _)| *cj == ci)
                    .flat_map(|(_, r)| r.iter().filter(|(m, s, _)| *m == mi && *s == split).map(|r| r.2))
                    .collect();
                let (mean, stderr) = mean_stderr(&trials);
                rows.push(BenchmarkRow {
                    method,
                    split,
                    c,
                    mean,
                    stderr,
                    trials,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_benchmark_csv(rows: &[BenchmarkRow], path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["method", "split", "c", "mean", "stderr"])?;
    for r in rows {
        wtr.write_record([
            r.method.label(),
            r.split.name().to_string(),
            r.c.to_string(),
            format!("{:.6}", r.mean),
            format!("{:.6}", r.stderr),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    /// Logit per spectral co-cluster.
    Spectral,
    /// Logit per cluster after shuffling the spectral labels.
    Random,
    /// Mixed logit with as many components as clusters.
    Mixed,
}

impl ClusterMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Spectral => "spectral",
            Self::Random => "random",
            Self::Mixed => "mixed_logit",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterBenchmarkConfig {
    pub population: TypedPopulationConfig,
    pub ks: Vec<usize>,
    pub n_trials: usize,
    pub seed: u64,
    pub fit: FitConfig,
    pub em: EmConfig,
}

impl Default for ClusterBenchmarkConfig {
    fn default() -> Self {
        Self {
            population: TypedPopulationConfig::default(),
            ks: vec![3],
            n_trials: 8,
            seed: 0,
            fit: FitConfig::default(),
            em: EmConfig {
                max_iters: 50,
                ..EmConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterBenchmarkRow {
    pub trial: usize,
    pub k: usize,
    /// Clusters actually used (spectral clustering may merge some).
    pub k_effective: usize,
    pub method: ClusterMethod,
    pub log_likelihood: f64,
}

fn cluster_cell(cfg: &ClusterBenchmarkConfig, trial: usize, k: usize) -> Result<Vec<ClusterBenchmarkRow>> {
    let seed = derive_seed(cfg.seed, trial as u64);
    let pop = generate_typed_population(&TypedPopulationConfig {
        seed,
        ..cfg.population
    })?;
    let ds = &pop.dataset;
    let spectral = spectral_cocluster(&build_incidence(ds)?, k, derive_seed(seed, 1))?;
    let random = random_assignment_like(&spectral, derive_seed(seed, 2));
    let ke = spectral.k;
    let spectral_ll = cluster_fit(ds, &spectral, Family::Logit, &cfg.fit)?.total_log_likelihood;
    let random_ll = cluster_fit(ds, &random, Family::Logit, &cfg.fit)?.total_log_likelihood;
    let mixed_cfg = FitConfig {
        seed: derive_seed(seed, 3),
        ..cfg.fit
    };
    let mixed_ll = fit_mixed_logit(ke, ds, &mixed_cfg, &cfg.em)?.log_likelihood;
    Ok([
        (ClusterMethod::Spectral, spectral_ll),
        (ClusterMethod::Random, random_ll),
        (ClusterMethod::Mixed, mixed_ll),
    ]
    .into_iter()
    .map(|(method, log_likelihood)| ClusterBenchmarkRow {
        trial,
        k,
        k_effective: ke,
        method,
        log_likelihood,
    })
    .collect())
}

/// Training log-likelihood of spectral-cluster logits against randomly
/// clustered logits of the same sizes and a mixed logit of equal size.
pub fn cluster_benchmark(cfg: &ClusterBenchmarkConfig) -> Result<Vec<ClusterBenchmarkRow>> {
    if cfg.n_trials == 0 || cfg.ks.is_empty() {
        return Err(Error::invalid("cluster benchmark needs trials and cluster counts"));
    }
    let cells: Vec<(usize, usize)> = (0..cfg.n_trials)
        .flat_map(|t| cfg.ks.iter().map(move |&k| (t, k)))
        .collect();
    let rows: Vec<Vec<ClusterBenchmarkRow>> = cells
        .par_iter()
        .map(|&(t, k)| cluster_cell(cfg, t, k))
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_cluster_benchmark_csv(rows: &[ClusterBenchmarkRow], path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["trial", "k", "k_effective", "method", "log_likelihood"])?;
    for r in rows {
        wtr.write_record([
            r.trial.to_string(),
            r.k.to_string(),
            r.k_effective.to_string(),
            r.method.name().to_string(),
            format!("{:.6}", r.log_likelihood),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Aligned-text summary of benchmark rows.
pub fn render_benchmark(rows: &[BenchmarkRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.label(),
                r.split.name().to_string(),
                format!("{}", r.c),
                format!("{:.4}", r.mean),
                format!("{:.4}", r.stderr),
            ]
        })
        .collect();
    render_table(&["method", "split", "c", "mean", "stderr"], &body)
}
