//! Clustering choosers by the sets they were shown.
//!
//! Rows of the incidence matrix are observations, not deduplicated
//! choosers. Co-clustering follows Dhillon's bipartite spectral method with
//! the trivial singular pair deflated analytically.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ChoiceDataset;
use crate::error::{Error, Result};
use crate::estimation::{fit, FitConfig, FitResult};
use crate::models::{ChoiceModel, Family, ModelSpec};
use crate::rng::{self, Rng};
use crate::stats::max_weight_assignment;
use crate::weights::SampleWeights;

/// Sparse 0/1 matrix: row `r` lists the columns (items) in set `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncidenceMatrix {
    rows: Vec<Vec<usize>>,
    n_cols: usize,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

impl IncidenceMatrix {
    pub fn new(rows: Vec<Vec<usize>>, n_cols: usize) -> Result<Self> {
        let row_ids = (0..rows.len()).map(|r| r.to_string()).collect();
        let col_ids = (0..n_cols).map(|c| c.to_string()).collect();
        Self::with_ids(rows, n_cols, row_ids, col_ids)
    }

    pub fn with_ids(mut rows: Vec<Vec<usize>>, n_cols: usize, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<Self> {
        if row_ids.len() != rows.len() || col_ids.len() != n_cols {
            return Err(Error::contract("incidence ids do not match its shape"));
        }
        for (r, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if row.is_empty() {
                return Err(Error::contract(format!("incidence row {r} is empty")));
            }
            if row.last().is_some_and(|&c| c >= n_cols) {
                return Err(Error::contract(format!("incidence row {r} has a column out of range")));
            }
        }
        Ok(Self {
            rows,
            n_cols,
            row_ids,
            col_ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.rows[r]
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r].binary_search(&c).is_ok()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows(), self.n_cols);
        for (r, row) in self.rows.iter().enumerate() {
            for &c in row {
                m[(r, c)] = 1.0;
            }
        }
        m
    }

    pub fn col_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_cols];
        for &c in self.rows.iter().flatten() {
            d[c] += 1;
        }
        d
    }
}

/// One row per observation, one column per item.
pub fn build_incidence(ds: &ChoiceDataset) -> Result<IncidenceMatrix> {
    if ds.is_empty() {
        return Err(Error::contract("cannot build an incidence matrix from no observations"));
    }
    IncidenceMatrix::with_ids(
        ds.observations().iter().map(|o| o.choice_set.clone()).collect(),
        ds.n_items(),
        (0..ds.len()).map(|k| k.to_string()).collect(),
        ds.items().ids().to_vec(),
    )
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub chooser_labels: Vec<usize>,
    pub item_labels: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    pub fn new(chooser_labels: Vec<usize>, item_labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if chooser_labels.iter().chain(&item_labels).any(|&l| l >= k) {
            return Err(Error::contract(format!("cluster label outside 0..{k}")));
        }
        Ok(Self {
            chooser_labels,
            item_labels,
            k,
        })
    }

    /// Chooser rows per cluster.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.chooser_labels {
            s[l] += 1;
        }
        s
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.chooser_labels.len())
            .filter(|&r| self.chooser_labels[r] == cluster)
            .collect()
    }

    /// Writes `row_id,cluster` for the chooser rows.
    pub fn write_csv(&self, path: impl AsRef<Path>, row_ids: &[String]) -> Result<()> {
        write_labels(path, "row_id", row_ids, &self.chooser_labels)
    }

    /// Writes `item_id,cluster`.
    pub fn write_item_csv(&self, path: impl AsRef<Path>, item_ids: &[String]) -> Result<()> {
        write_labels(path, "item_id", item_ids, &self.item_labels)
    }

    /// Reads a `row_id,cluster` file whose row ids are observation indices.
    pub fn read_csv(path: impl AsRef<Path>, n_rows: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let mut labels = vec![usize::MAX; n_rows];
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let parsed = (
                record.get(0).and_then(|s| s.parse::<usize>().ok()),
                record.get(1).and_then(|s| s.parse::<usize>().ok()),
            );
            let (Some(r), Some(l)) = parsed else {
                return Err(Error::Parse {
                    line,
                    message: "expected `row_id,cluster` with integer fields".into(),
                });
            };
            if r >= n_rows || labels[r] != usize::MAX {
                return Err(Error::Parse {
                    line,
                    message: format!("row id {r} out of range or repeated"),
                });
            }
            labels[r] = l;
        }
        if let Some(r) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(Error::contract(format!("observation {r} has no cluster")));
        }
        let k = labels.iter().max().map_or(1, |m| m + 1);
        Self::new(labels, Vec::new(), k)
    }
}

fn write_labels(path: impl AsRef<Path>, header: &str, ids: &[String], labels: &[usize]) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(Error::dims("label ids", labels.len(), ids.len()));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record([header, "cluster"])?;
    for (id, l) in ids.iter().zip(labels) {
        wtr.write_record([id.as_str(), &l.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Top `count` singular triplets of a dense matrix, descending.
fn top_singular(a: &DMatrix<f64>, count: usize) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let tall = m >= n;
    let gram = if tall { a.transpose() * a } else { a * a.transpose() };
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let count = count.min(order.len());
    let mut s = Vec::with_capacity(count);
    let mut u = DMatrix::zeros(m, count);
    let mut v = DMatrix::zeros(n, count);
    for (c, &idx) in order.iter().take(count).enumerate() {
        let sv = eig.eigenvalues[idx].max(0.0).sqrt();
        let vec = eig.eigenvectors.column(idx).into_owned();
        let other = if tall { a * &vec } else { a.transpose() * &vec };
        let other = if sv > 1e-12 { other / sv } else { other * 0.0 };
        if tall {
            v.set_column(c, &vec);
            u.set_column(c, &other);
        } else {
            u.set_column(c, &vec);
            v.set_column(c, &other);
        }
        s.push(sv);
    }
    (s, u, v)
}

/// k-means result: labels, centroids (row-major `k × d`), inertia.
struct KMeans {
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(c, ctr)| (c, sq_dist(point, ctr)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one centroid")
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            d2.iter()
                .position(|&d| {
                    acc += d;
                    acc > r
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[pick].clone());
        let last = centroids.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, last));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![0; points.len()];
    for _ in 0..300 {
        let mut changed = false;
        for (p, l) in points.iter().zip(labels.iter_mut()) {
            let (c, _) = nearest(p, &centroids);
            changed |= *l != c;
            *l = c;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut moved = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed an empty cluster at the point farthest from its centroid.
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(&points[a], &centroids[labels[a]]).total_cmp(&sq_dist(&points[b], &centroids[labels[b]]))
                    })
                    .expect("nonempty");
                centroids[c] = points[far].clone();
                labels[far] = c;
                changed = true;
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            moved += sq_dist(&new, &centroids[c]);
            centroids[c] = new;
        }
        if !changed && moved < 1e-20 {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    KMeans {
        labels,
        centroids,
        inertia,
    }
}

fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> KMeans {
    (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, 100 + r as u64);
            lloyd(points, kmeans_pp_init(points, k, &mut rng))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .min_by(|a, b| a.inertia.total_cmp(&b.inertia))
        .expect("at least one restart")
}

/// k-means restarts used by [`spectral_cocluster`].
pub const KMEANS_RESTARTS: usize = 10;

/// Spectral co-clustering of rows (choosers) and columns (items).
///
/// Items never shown are left out of the embedding and get the cluster
/// whose centroid is nearest the origin. Chooser clusters are numbered by
/// first appearance; an item cluster with no choosers is folded into the
/// nearest chooser cluster, so `k` may shrink.
pub fn spectral_cocluster(r: &IncidenceMatrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let m = r.n_rows();
    let col_deg = r.col_degrees();
    let active: Vec<usize> = (0..r.n_cols()).filter(|&c| col_deg[c] > 0).collect();
    let n = active.len();
    if k < 2 || k > m.min(n) {
        return Err(Error::invalid(format!(
            "k = {k} must lie in 2..={} (rows {m}, nonempty columns {n})",
            m.min(n)
        )));
    }
    let mut col_pos = vec![usize::MAX; r.n_cols()];
    for (p, &c) in active.iter().enumerate() {
        col_pos[c] = p;
    }
    let d1: Vec<f64> = (0..m).map(|i| r.row(i).len() as f64).collect();
    let d2: Vec<f64> = active.iter().map(|&c| col_deg[c] as f64).collect();
    let total: f64 = d1.iter().sum();
    let mut a = DMatrix::zeros(m, n);
    for i in 0..m {
        for &c in r.row(i) {
            let j = col_pos[c];
            a[(i, j)] = 1.0 / (d1[i] * d2[j]).sqrt();
        }
    }
    // Remove the known leading pair (σ = 1, u ∝ D₁^{1/2}1, v ∝ D₂^{1/2}1).
    for i in 0..m {
        for j in 0..n {
            a[(i, j)] -= (d1[i] * d2[j]).sqrt() / total;
        }
    }
    let dims = (usize::BITS - (k - 1).leading_zeros()) as usize;
    let (_, u, v) = top_singular(&a, dims);
    let mut points = Vec::with_capacity(m + n);
    for i in 0..m {
        points.push(u.row(i).iter().map(|x| x / d1[i].sqrt()).collect::<Vec<f64>>());
    }
    for j in 0..n {
        points.push(v.row(j).iter().map(|x| x / d2[j].sqrt()).collect::<Vec<f64>>());
    }
    let km = kmeans(&points, k, KMEANS_RESTARTS, seed);

    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for &l in &km.labels[..m] {
        if relabel[l] == usize::MAX {
            relabel[l] = next;
            next += 1;
        }
    }
    let used: Vec<usize> = (0..k).filter(|&c| relabel[c] != usize::MAX).collect();
    let used_centroids: Vec<Vec<f64>> = used.iter().map(|&c| km.centroids[c].clone()).collect();
    let fold = |c: usize| -> usize {
        if relabel[c] != usize::MAX {
            relabel[c]
        } else {
            relabel[used[nearest(&km.centroids[c], &used_centroids).0]]
        }
    };
    let chooser_labels = km.labels[..m].iter().map(|&l| relabel[l]).collect();
    let origin = vec![0.0; dims];
    let origin_cluster = relabel[used[nearest(&origin, &used_centroids).0]];
    let item_labels = (0..r.n_cols())
        .map(|c| match col_pos[c] {
            usize::MAX => origin_cluster,
            p => fold(km.labels[m + p]),
        })
        .collect();
    ClusterAssignment::new(chooser_labels, item_labels, next)
}

#[derive(Clone, Debug)]
pub struct SbmSample {
    pub incidence: IncidenceMatrix,
    pub truth: ClusterAssignment,
    /// Rows redrawn because they came out empty.
    pub resamples: usize,
}

/// Planted bipartite block model: chooser `a` sees item `i` with
/// probability `p` if their types match and `q` otherwise.
pub fn generate_sbm(
    k: usize,
    choosers_per_type: &[usize],
    items_per_type: &[usize],
    p: f64,
    q: f64,
    seed: u64,
) -> Result<SbmSample> {
    if choosers_per_type.len() != k || items_per_type.len() != k || k == 0 {
        return Err(Error::invalid("need one chooser count and one item count per type"));
    }
    if !(0.0 <= q && q <= p && p <= 1.0 && p > 0.0) {
        return Err(Error::invalid(format!("invalid block probabilities p = {p}, q = {q}")));
    }
    let item_labels: Vec<usize> = items_per_type.iter().enumerate().flat_map(|(t, &c)| std::iter::repeat_n(t, c)).collect();
    let chooser_labels: Vec<usize> = choosers_per_type.iter().enumerate().flat_map(|(t, &c)| std::iter::repeat_n(t, c)).collect();
    let n = item_labels.len();
    let mut rng = rng::stream(seed, 6);
    let mut resamples = 0;
    let mut rows = Vec::with_capacity(chooser_labels.len());
    for &t in &chooser_labels {
        if items_per_type[t] == 0 && q == 0.0 {
            return Err(Error::invalid("a chooser type can never see an item"));
        }
        loop {
            let row: Vec<usize> = (0..n)
                .filter(|&i| rng.random::<f64>() < if item_labels[i] == t { p } else { q })
                .collect();
            if !row.is_empty() {
                rows.push(row);
                break;
            }
            resamples += 1;
        }
    }
    Ok(SbmSample {
        incidence: IncidenceMatrix::new(rows, n)?,
        truth: ClusterAssignment::new(chooser_labels, item_labels, k)?,
        resamples,
    })
}

/// Same cluster sizes as `ca`, with chooser labels shuffled uniformly.
pub fn random_assignment_like(ca: &ClusterAssignment, seed: u64) -> ClusterAssignment {
    let mut labels = ca.chooser_labels.clone();
    labels.shuffle(&mut rng::stream(seed, 7));
    ClusterAssignment {
        chooser_labels: labels,
        item_labels: ca.item_labels.clone(),
        k: ca.k,
    }
}

/// Independent per-cluster fits and routing by observation.
#[derive(Clone, Debug)]
pub struct ClusterFit {
    pub fits: Vec<FitResult>,
    pub assignment: ClusterAssignment,
    /// Sum of per-cluster unweighted log-likelihoods.
    pub total_log_likelihood: f64,
}

impl ClusterFit {
    pub fn model_for(&self, obs: usize) -> &ChoiceModel {
        &self.fits[self.assignment.chooser_labels[obs]].model
    }
}

/// Fits `family` separately on each chooser cluster's observations.
pub fn cluster_fit(ds: &ChoiceDataset, ca: &ClusterAssignment, family: Family, cfg: &FitConfig) -> Result<ClusterFit> {
    if ca.chooser_labels.len() != ds.len() {
        return Err(Error::dims("cluster labels", ds.len(), ca.chooser_labels.len()));
    }
    if family == Family::MixedLogit {
        return Err(Error::contract("cluster fits use single-mode families"));
    }
    let groups: Vec<Vec<usize>> = (0..ca.k).map(|c| ca.members(c)).collect();
    for (c, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::contract(format!("cluster {c} has no observations")));
        }
        if g.iter().all(|&o| !ds.observations()[o].is_informative()) {
            return Err(Error::contract(format!(
                "cluster {c} has only single-item choice sets; its likelihood is degenerate"
            )));
        }
    }
    let fits = groups
        .par_iter()
        .map(|g| {
            let sub = ds.subset(g);
            let spec = ModelSpec::for_dataset(family, &sub)?;
            fit(&spec, &sub, &SampleWeights::uniform(sub.len()), cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let total_log_likelihood = fits.iter().map(|f| f.log_likelihood).sum();
    Ok(ClusterFit {
        fits,
        assignment: ca.clone(),
        total_log_likelihood,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAccuracy {
    pub choosers: f64,
    pub items: f64,
    /// Fraction of all labels matched under the best single relabeling.
    pub overall: f64,
}

fn best_match(pred: &[usize], truth: &[usize], k: usize) -> Result<usize> {
    let mut conf = vec![vec![0.0; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        conf[p][t] += 1.0;
    }
    let perm = max_weight_assignment(&conf)?;
    Ok(perm.iter().enumerate().map(|(p, &t)| conf[p][t] as usize).sum())
}

/// Label agreement maximized over relabelings (Hungarian assignment on the
/// confusion matrix, padded square when the cluster counts differ).
pub fn cluster_accuracy(pred: &ClusterAssignment, truth: &ClusterAssignment) -> Result<ClusterAccuracy> {
    if pred.chooser_labels.len() != truth.chooser_labels.len() {
        return Err(Error::dims("chooser labels", truth.chooser_labels.len(), pred.chooser_labels.len()));
    }
    if pred.item_labels.len() != truth.item_labels.len() {
        return Err(Error::dims("item labels", truth.item_labels.len(), pred.item_labels.len()));
    }
    let k = pred.k.max(truth.k);
    let (m, n) = (pred.chooser_labels.len(), pred.item_labels.len());
    let frac = |hits: usize, total: usize| if total == 0 { 1.0 } else { hits as f64 / total as f64 };
    let choosers = frac(best_match(&pred.chooser_labels, &truth.chooser_labels, k)?, m);
    let items = frac(best_match(&pred.item_labels, &truth.item_labels, k)?, n);
    let all_pred: Vec<usize> = pred.chooser_labels.iter().chain(&pred.item_labels).copied().collect();
    let all_truth: Vec<usize> = truth.chooser_labels.iter().chain(&truth.item_labels).copied().collect();
    let overall = frac(best_match(&all_pred, &all_truth, k)?, m + n);
    Ok(ClusterAccuracy { choosers, items, overall })
}
