//! Choice-set assignment models and inverse-propensity weights.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ChoiceDataset;
use crate::error::{Error, Result};
use crate::estimation::{rprop_maximize, FitConfig, Objective};
use crate::models::ChoiceModel;
use crate::weights::{SampleWeights, WeightKind};

/// Floor applied to every propensity so weights stay finite.
pub const PROPENSITY_FLOOR: f64 = 1e-12;

/// Independent logistic inclusion model per item; a set's propensity is the
/// product of inclusion and exclusion probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerItemLogistic {
    /// One coefficient row per item.
    coef: Vec<Vec<f64>>,
    intercept: Vec<f64>,
}

impl PerItemLogistic {
    /// `coef` is `n_items × d_x`.
    pub fn new(coef: DMatrix<f64>, intercept: DVector<f64>) -> Self {
        assert_eq!(coef.nrows(), intercept.len(), "one intercept per item");
        Self {
            coef: coef.row_iter().map(|r| r.iter().copied().collect()).collect(),
            intercept: intercept.iter().copied().collect(),
        }
    }

    pub fn n_items(&self) -> usize {
        self.intercept.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.coef.first().map_or(0, Vec::len)
    }

    pub fn coefficients(&self) -> DMatrix<f64> {
        let d = self.covariate_dim();
        DMatrix::from_fn(self.n_items(), d, |i, j| self.coef[i][j])
    }

    pub fn intercepts(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.intercept)
    }

    /// `σ(w_iᵀx + b_i)`.
    pub fn inclusion_probability(&self, item: usize, x: &[f64]) -> f64 {
        let z = self.intercept[item] + dot(&self.coef[item], x);
        sigmoid(z)
    }

    fn validate(&self) -> Result<()> {
        let d = self.covariate_dim();
        if self.coef.len() != self.intercept.len() || self.coef.iter().any(|r| r.len() != d) {
            return Err(Error::contract("ragged per-item logistic coefficients"));
        }
        if self.coef.iter().flatten().chain(&self.intercept).any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite per-item logistic parameter"));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)` without cancellation.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

struct InclusionObjective<'a> {
    x: &'a [&'a [f64]],
    included: Vec<bool>,
    lambda: f64,
}

impl Objective for InclusionObjective<'_> {
    fn n_params(&self) -> usize {
        self.x.first().map_or(0, |r| r.len()) + 1
    }

    // params = [w..., b]
    fn evaluate(&self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        let d = params.len() - 1;
        let (w, b) = (&params[..d], params[d]);
        grad.fill(0.0);
        let mut ll = 0.0;
        for (x, &z) in self.x.iter().zip(&self.included) {
            let eta = b + dot(w, x);
            let p = sigmoid(eta);
            let (term, resid) = if z { (log_sigmoid(eta), 1.0 - p) } else { (log_sigmoid(-eta), -p) };
            ll += term;
            for (g, xj) in grad[..d].iter_mut().zip(x.iter()) {
                *g += resid * xj;
            }
            grad[d] += resid;
        }
        let mut penalty = 0.0;
        for (g, p) in grad.iter_mut().zip(params) {
            penalty += p * p;
            *g -= 2.0 * self.lambda * p;
        }
        Ok(ll - self.lambda * penalty)
    }
}

/// Regresses each item's inclusion indicator on chooser covariates, with
/// the default optimizer settings (so items present in every set still get
/// finite, shrunk coefficients).
pub fn fit_item_logistic(ds: &ChoiceDataset) -> Result<PerItemLogistic> {
    fit_item_logistic_with(ds, &FitConfig::default())
}

pub fn fit_item_logistic_with(ds: &ChoiceDataset, cfg: &FitConfig) -> Result<PerItemLogistic> {
    cfg.validate()?;
    if ds.covariate_dim().is_none() {
        return Err(Error::contract("per-item logistic propensities need chooser covariates"));
    }
    let n = ds.n_items();
    let mut seen = vec![false; n];
    for o in ds.observations() {
        for &i in &o.choice_set {
            seen[i] = true;
        }
    }
    let missing: Vec<String> = (0..n)
        .filter(|&i| !seen[i])
        .map(|i| ds.items().id(i).to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::contract(format!(
            "items never appear in a choice set: {}",
            missing.join(", ")
        )));
    }
    let x: Vec<&[f64]> = (0..ds.len())
        .map(|k| ds.covariates_of(k).expect("covariates checked"))
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|item| {
            let obj = InclusionObjective {
                x: &x,
                included: ds.observations().iter().map(|o| o.position_of(item).is_some()).collect(),
                lambda: cfg.l2_lambda,
            };
            rprop_maximize(&obj, vec![0.0; obj.n_params()], cfg).map(|out| out.params)
        })
        .collect::<Result<_>>()?;
    let mut coef = Vec::with_capacity(n);
    let mut intercept = Vec::with_capacity(n);
    for mut r in rows {
        intercept.push(r.pop().expect("intercept"));
        coef.push(r);
    }
    Ok(PerItemLogistic { coef, intercept })
}

/// Product-of-items propensity of `set` (sorted item indices) for
/// covariates `x`, floored at [`PROPENSITY_FLOOR`].
pub fn set_propensity(pm: &PerItemLogistic, x: &[f64], set: &[usize]) -> Result<f64> {
    if x.len() != pm.covariate_dim() {
        return Err(Error::dims("covariate vector", pm.covariate_dim(), x.len()));
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= pm.n_items()) {
        return Err(Error::contract(format!("item index {bad} outside the propensity model")));
    }
    let mut log_p = 0.0;
    for item in 0..pm.n_items() {
        let eta = pm.intercept[item] + dot(&pm.coef[item], x);
        log_p += if set.binary_search(&item).is_ok() {
            log_sigmoid(eta)
        } else {
            log_sigmoid(-eta)
        };
    }
    Ok(log_p.exp().max(PROPENSITY_FLOOR))
}

/// Gaussian model of the mean set feature vector given chooser covariates:
/// `y_C ~ N(W x + z, Σ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineGaussian {
    /// Row-major `d_y × d_x`.
    w: Vec<f64>,
    z: Vec<f64>,
    /// Row-major `d_y × d_y`.
    sigma: Vec<f64>,
    d_x: usize,
}

impl AffineGaussian {
    pub fn new(w: DMatrix<f64>, z: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d_y = z.len();
        if w.nrows() != d_y {
            return Err(Error::dims("W rows", d_y, w.nrows()));
        }
        if sigma.shape() != (d_y, d_y) {
            return Err(Error::dims("covariance size", d_y, sigma.nrows()));
        }
        if (&sigma - sigma.transpose()).abs().max() > 1e-9 * (1.0 + sigma.abs().max()) {
            return Err(Error::contract("covariance is not symmetric"));
        }
        let g = Self {
            w: w.transpose().iter().copied().collect(),
            z: z.iter().copied().collect(),
            sigma: sigma.transpose().iter().copied().collect(),
            d_x: w.ncols(),
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let d_y = self.z.len();
        if self.w.len() != d_y * self.d_x || self.sigma.len() != d_y * d_y {
            return Err(Error::contract("affine Gaussian parameter sizes disagree"));
        }
        if self.w.iter().chain(&self.z).chain(&self.sigma).any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite affine Gaussian parameter"));
        }
        let min_eig = self.sigma().symmetric_eigenvalues().min();
        if min_eig < -1e-9 * (1.0 + self.sigma().trace().abs()) {
            return Err(Error::contract("covariance is not positive semidefinite"));
        }
        Ok(())
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn d_y(&self) -> usize {
        self.z.len()
    }

    pub fn w(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d_y(), self.d_x, &self.w)
    }

    pub fn z(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.z)
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d_y(), self.d_y(), &self.sigma)
    }

    pub fn mean(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.d_x {
            return Err(Error::dims("covariate vector", self.d_x, x.len()));
        }
        Ok(self.w() * DVector::from_column_slice(x) + self.z())
    }

    /// Log density of `y` at covariates `x`. A ridge of
    /// `1e-9·tr(Σ)/d_y` is added only when Σ is not positive definite.
    pub fn log_density(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let d = self.d_y();
        if y.len() != d {
            return Err(Error::dims("set feature vector", d, y.len()));
        }
        let r = DVector::from_column_slice(y) - self.mean(x)?;
        let sigma = self.sigma();
        let chol = match sigma.clone().cholesky() {
            Some(c) => c,
            None => {
                let tr = sigma.trace();
                let eps = if tr > 0.0 { 1e-9 * tr / d as f64 } else { 1e-12 };
                (sigma + DMatrix::identity(d, d) * eps)
                    .cholesky()
                    .ok_or_else(|| Error::Singular("covariance is singular even after ridge".into()))?
            }
        };
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let quad = r.dot(&chol.solve(&r));
        Ok(-0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad))
    }

    pub fn density(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.log_density(x, y)?.exp())
    }
}

/// Closed-form maximum likelihood for [`AffineGaussian`] over observations:
/// `W* = S_yx S_xx⁻¹` on centered moments, `z* = ȳ − W* x̄`, and Σ* the
/// residual covariance (divided by N).
pub fn fit_affine_gaussian(ds: &ChoiceDataset) -> Result<AffineGaussian> {
    let d_x = ds
        .covariate_dim()
        .ok_or_else(|| Error::contract("affine Gaussian propensities need chooser covariates"))?;
    let d_y = ds
        .feature_dim()
        .ok_or_else(|| Error::contract("affine Gaussian propensities need item features"))?;
    let m = ds.len();
    if m < d_x + 1 {
        return Err(Error::Singular(format!(
            "{m} observations cannot identify {d_x} covariate coefficients plus an offset"
        )));
    }
    let x = DMatrix::from_fn(m, d_x, |k, j| ds.covariates_of(k).expect("checked")[j]);
    let mut y = DMatrix::zeros(m, d_y);
    for k in 0..m {
        y.set_row(k, &ds.mean_set_features(k).expect("checked").transpose());
    }
    fit_affine_gaussian_arrays(&x, &y)
}

/// As [`fit_affine_gaussian`] on raw `N × d_x` covariates and `N × d_y`
/// responses.
pub fn fit_affine_gaussian_arrays(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<AffineGaussian> {
    let m = x.nrows();
    if y.nrows() != m {
        return Err(Error::dims("response rows", m, y.nrows()));
    }
    if m == 0 {
        return Err(Error::contract("no observations"));
    }
    let x_bar = x.row_mean();
    let y_bar = y.row_mean();
    let mut xc = x.clone();
    for mut r in xc.row_iter_mut() {
        r -= &x_bar;
    }
    let sxx = xc.transpose() * &xc;
    let syx = (y.transpose() * &xc).transpose();
    let scale = sxx.diagonal().abs().max().max(f64::MIN_POSITIVE);
    let eig = sxx.clone().symmetric_eigenvalues();
    if x.ncols() > 0 && eig.min() <= 1e-12 * scale {
        return Err(Error::Singular(
            "centered covariate moments are singular; covariates are not affinely independent".into(),
        ));
    }
    let w = match sxx.cholesky() {
        Some(c) => c.solve(&syx).transpose(),
        None if x.ncols() == 0 => DMatrix::zeros(y.ncols(), 0),
        None => return Err(Error::Singular("centered covariate moments are singular".into())),
    };
    let z = y_bar.transpose() - &w * x_bar.transpose();
    let mut resid = y.clone();
    for (k, mut r) in resid.row_iter_mut().enumerate() {
        let pred = &w * x.row(k).transpose() + &z;
        r -= pred.transpose();
    }
    let mut sigma = resid.transpose() * &resid / m as f64;
    sigma = (&sigma + sigma.transpose()) * 0.5;
    AffineGaussian::new(w, z, sigma)
}

/// Density of the observed set's mean features: an unnormalized propensity.
pub fn gaussian_propensity(pm: &AffineGaussian, x: &[f64], set: &[usize], ds: &ChoiceDataset) -> Result<f64> {
    let table = ds
        .item_features()
        .ok_or_else(|| Error::contract("item features required"))?;
    if set.is_empty() {
        return Err(Error::contract("empty choice set"));
    }
    let y = crate::dataset::mean_rows(table, set);
    Ok(pm.density(x, y.as_slice())?.max(PROPENSITY_FLOOR))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PropensityModel {
    ItemLogistic(PerItemLogistic),
    AffineGaussian(AffineGaussian),
}

impl PropensityModel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ItemLogistic(_) => "item-logistic",
            Self::AffineGaussian(_) => "affine-gaussian",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let pm: Self = serde_json::from_str(s)?;
        match &pm {
            Self::ItemLogistic(m) => m.validate()?,
            Self::AffineGaussian(g) => g.validate()?,
        }
        Ok(pm)
    }

    /// Floored propensity of each observation's choice set.
    pub fn propensities(&self, ds: &ChoiceDataset) -> Result<Vec<f64>> {
        (0..ds.len())
            .into_par_iter()
            .map(|k| {
                let x = ds
                    .covariates_of(k)
                    .ok_or_else(|| Error::contract("IPW weights need chooser covariates"))?;
                let set = &ds.observations()[k].choice_set;
                match self {
                    Self::ItemLogistic(m) => {
                        if m.n_items() != ds.n_items() {
                            return Err(Error::dims("items in propensity model", ds.n_items(), m.n_items()));
                        }
                        set_propensity(m, x, set)
                    }
                    Self::AffineGaussian(g) => gaussian_propensity(g, x, set, ds),
                }
            })
            .collect()
    }
}

/// Mean-normalized IPW weights, optionally clipped at an empirical quantile.
pub fn ipw_weights(pm: &PropensityModel, ds: &ChoiceDataset, clip_quantile: Option<f64>) -> Result<SampleWeights> {
    weights_from_propensities(&pm.propensities(ds)?, ds.n_unique_sets(), clip_quantile, false)
}

/// Unnormalized IPW weights `1/(|𝒞|·propensity)`.
pub fn ipw_weights_raw(pm: &PropensityModel, ds: &ChoiceDataset, clip_quantile: Option<f64>) -> Result<SampleWeights> {
    weights_from_propensities(&pm.propensities(ds)?, ds.n_unique_sets(), clip_quantile, true)
}

/// Builds IPW weights from known propensities. `n_sets` is the number of
/// distinct sets in the assignment support.
pub fn weights_from_propensities(
    propensities: &[f64],
    n_sets: usize,
    clip_quantile: Option<f64>,
    raw: bool,
) -> Result<SampleWeights> {
    if n_sets == 0 {
        return Err(Error::contract("no choice sets"));
    }
    if let Some(q) = clip_quantile {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::invalid(format!("clip quantile {q} outside (0, 1]")));
        }
    }
    let mut values = propensities
        .iter()
        .map(|&p| {
            if !(p >= 0.0) || p.is_infinite() {
                return Err(Error::contract(format!("invalid propensity {p}")));
            }
            Ok(1.0 / (n_sets as f64 * p.max(PROPENSITY_FLOOR)))
        })
        .collect::<Result<Vec<f64>>>()?;
    if let (Some(q), false) = (clip_quantile, values.is_empty()) {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        let cap = sorted[rank - 1];
        for v in &mut values {
            *v = v.min(cap);
        }
    }
    let kind = if raw { WeightKind::IpwRaw } else { WeightKind::IpwMeanNormalized };
    Ok(SampleWeights::new(values, kind)?.with_clip_quantile(clip_quantile))
}

/// `(Σ w log Pr / Σ w)·|𝒟|`: the weighted log-likelihood rescaled to the
/// dataset size, invariant to the weights' overall scale.
pub fn normalized_ipw_loglik(m: &ChoiceModel, ds: &ChoiceDataset, w: &SampleWeights) -> Result<f64> {
    let total = w.total();
    if !(total > 0.0) {
        return Err(Error::contract("IPW weights sum to zero"));
    }
    Ok(m.log_likelihood(ds, w)? / total * ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Interner, Observation, Table};

    fn with_sets(sets: &[Vec<usize>], n: usize, cov: Vec<f64>, d_x: usize) -> ChoiceDataset {
        let items = Interner::from_ids((0..n).map(|i| format!("i{i}"))).unwrap();
        let choosers = Interner::from_ids((0..sets.len()).map(|k| format!("a{k}"))).unwrap();
        let obs = sets
            .iter()
            .enumerate()
            .map(|(k, s)| Observation::new(k, s.clone(), s[0]).unwrap())
            .collect();
        ChoiceDataset::from_parts(items, choosers, obs)
            .unwrap()
            .with_chooser_covariates(Table::with_default_names("x", sets.len(), d_x, cov).unwrap())
            .unwrap()
    }

    #[test]
    fn half_inclusion_with_zero_covariates() {
        let sets: Vec<Vec<usize>> = (0..200).map(|k| if k % 2 == 0 { vec![0, 1] } else { vec![1, 2] }).collect();
        let ds = with_sets(&sets, 3, vec![0.0; 200], 1);
        let pm = fit_item_logistic(&ds).unwrap();
        assert!((pm.inclusion_probability(0, &[0.0]) - 0.5).abs() < 0.01);
        let always = pm.inclusion_probability(1, &[0.0]);
        assert!(always > 0.99 && always < 1.0);
    }

    #[test]
    fn never_included_item_is_an_error() {
        let sets: Vec<Vec<usize>> = (0..10).map(|_| vec![0, 1]).collect();
        let ds = with_sets(&sets, 3, vec![0.0; 10], 1);
        assert!(fit_item_logistic(&ds).is_err());
    }

    #[test]
    fn coin_flip_propensity() {
        let pm = PerItemLogistic::new(DMatrix::zeros(3, 2), DVector::zeros(3));
        let p = set_propensity(&pm, &[0.3, -1.0], &[0, 2]).unwrap();
        assert!((p - 0.125).abs() < 1e-15);
        assert!(set_propensity(&pm, &[0.3], &[0]).is_err());
    }

    #[test]
    fn extreme_covariates_hit_the_floor() {
        let pm = PerItemLogistic::new(DMatrix::from_element(2, 1, 1.0), DVector::zeros(2));
        let p = set_propensity(&pm, &[-1e4], &[0, 1]).unwrap();
        assert_eq!(p, PROPENSITY_FLOOR);
        let w = weights_from_propensities(&[p, 0.5], 2, None, true).unwrap();
        assert!(w.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn clip_at_one_is_identity() {
        let props = [0.1, 0.02, 0.5, 0.3];
        let a = weights_from_propensities(&props, 3, None, true).unwrap();
        let b = weights_from_propensities(&props, 3, Some(1.0), true).unwrap();
        assert_eq!(a.values(), b.values());
        let c = weights_from_propensities(&props, 3, Some(0.5), true).unwrap();
        let cap = 1.0 / (3.0 * 0.3);
        assert!(c.values().iter().all(|&v| v <= cap + 1e-15));
    }

    #[test]
    fn uniform_propensities_give_unit_weights() {
        let w = weights_from_propensities(&[0.25; 8], 4, None, true).unwrap();
        assert!(w.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn density_peak_and_symmetry() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let g = AffineGaussian::new(DMatrix::from_element(2, 1, 0.5), DVector::from_vec(vec![1.0, -1.0]), sigma.clone()).unwrap();
        let mu = g.mean(&[2.0]).unwrap();
        let peak = g.density(&[2.0], mu.as_slice()).unwrap();
        let expected = ((2.0 * std::f64::consts::PI).powi(2) * sigma.determinant()).powf(-0.5);
        assert!((peak - expected).abs() < 1e-14);
        let d = DVector::from_vec(vec![0.4, -0.7]);
        let a = g.density(&[2.0], (&mu + &d).as_slice()).unwrap();
        let b = g.density(&[2.0], (&mu - &d).as_slice()).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn singular_covariates_rejected() {
        let x = DMatrix::from_fn(20, 2, |k, j| (k as f64) * (j as f64 + 1.0));
        let y = DMatrix::from_fn(20, 1, |k, _| k as f64);
        assert!(matches!(fit_affine_gaussian_arrays(&x, &y), Err(Error::Singular(_))));
    }

    #[test]
    fn json_round_trip() {
        let pm = PropensityModel::ItemLogistic(PerItemLogistic::new(
            DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]),
            DVector::from_vec(vec![-1.0, 1.0]),
        ));
        assert_eq!(PropensityModel::from_json(&pm.to_json().unwrap()).unwrap(), pm);
    }
}
