//! Choice model families: utilities, choice probabilities, weighted
//! log-likelihoods and their analytic gradients.
//!
//! Every family flattens its parameters into one vector. The order is part
//! of the public contract (model files and gradient tests rely on it);
//! matrices are always flattened row-major:
//!
//! | family      | layout                                                     |
//! |-------------|------------------------------------------------------------|
//! | logit       | `u[n]`                                                     |
//! | mnl         | `u[n]` (omitted when intercepts are frozen), `Γ[n×d_x]`    |
//! | cl          | `θ[d_y]`                                                   |
//! | cml         | `θ[d_y]`, `B[d_y×d_x]`                                     |
//! | cdm         | `P[n×n]`, diagonal omitted unless self-pulls are on        |
//! | mcdm        | `P` as for cdm, then `Γ[n×d_x]`                            |
//! | lcl         | `θ[d_y]`, `A[d_y×d_y]`                                     |
//! | mlcl        | `θ[d_y]`, `A[d_y×d_y]`, `B[d_y×d_x]`                       |
//! | mixed-logit | `π[K]`, `U[K×n]`                                           |

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{mean_rows, ChoiceDataset, Observation};
use crate::error::{Error, Result};
use crate::weights::SampleWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Logit,
    Mnl,
    Cl,
    Cml,
    Cdm,
    Mcdm,
    Lcl,
    Mlcl,
    MixedLogit,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Logit,
        Family::Mnl,
        Family::Cl,
        Family::Cml,
        Family::Cdm,
        Family::Mcdm,
        Family::Lcl,
        Family::Mlcl,
        Family::MixedLogit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Logit => "logit",
            Family::Mnl => "mnl",
            Family::Cl => "cl",
            Family::Cml => "cml",
            Family::Cdm => "cdm",
            Family::Mcdm => "mcdm",
            Family::Lcl => "lcl",
            Family::Mlcl => "mlcl",
            Family::MixedLogit => "mixed-logit",
        }
    }

    pub fn uses_covariates(self) -> bool {
        matches!(self, Family::Mnl | Family::Cml | Family::Mcdm | Family::Mlcl)
    }

    pub fn uses_features(self) -> bool {
        matches!(self, Family::Cl | Family::Cml | Family::Lcl | Family::Mlcl)
    }

    pub fn has_item_params(self) -> bool {
        matches!(
            self,
            Family::Logit | Family::Mnl | Family::Cdm | Family::Mcdm | Family::MixedLogit
        )
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown model family {s:?}")))
    }
}

/// Family tag plus the dimensions needed to size its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub n_items: usize,
    #[serde(default)]
    pub d_x: usize,
    #[serde(default)]
    pub d_y: usize,
    /// Mixture components (mixed logit only).
    #[serde(default = "one")]
    pub components: usize,
    /// CDM/MCDM diagonal pulls.
    #[serde(default)]
    pub self_pulls: bool,
    /// MNL item intercepts; off only for the indicator-encoded CDM view.
    #[serde(default = "yes")]
    pub intercepts: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ModelSpec {
    /// Dimensions the family does not use are zeroed, so specs compare equal
    /// whenever they describe the same parameter space.
    pub fn new(family: Family, n_items: usize, d_x: usize, d_y: usize) -> Self {
        Self {
            family,
            n_items,
            d_x,
            d_y,
            components: 1,
            self_pulls: false,
            intercepts: true,
        }
        .canonical()
    }

    pub fn canonical(mut self) -> Self {
        let f = self.family;
        if !f.has_item_params() {
            self.n_items = 0;
        }
        if !f.uses_covariates() {
            self.d_x = 0;
        }
        if !f.uses_features() {
            self.d_y = 0;
        }
        if f != Family::MixedLogit {
            self.components = 1;
        }
        if !matches!(f, Family::Cdm | Family::Mcdm) {
            self.self_pulls = false;
        }
        if f != Family::Mnl {
            self.intercepts = true;
        }
        self
    }

    /// Reads the dimensions off `ds`, failing if the family needs a table
    /// the dataset lacks.
    pub fn for_dataset(family: Family, ds: &ChoiceDataset) -> Result<Self> {
        let d_x = match (family.uses_covariates(), ds.covariate_dim()) {
            (true, None) => {
                return Err(Error::contract(format!("{family} needs chooser covariates")));
            }
            (_, d) => d.unwrap_or(0),
        };
        let d_y = match (family.uses_features(), ds.feature_dim()) {
            (true, None) => return Err(Error::contract(format!("{family} needs item features"))),
            (_, d) => d.unwrap_or(0),
        };
        Ok(Self::new(family, ds.n_items(), d_x, d_y))
    }

    pub fn with_components(mut self, k: usize) -> Self {
        self.components = k;
        self.canonical()
    }

    pub fn with_self_pulls(mut self, on: bool) -> Self {
        self.self_pulls = on;
        self.canonical()
    }

    pub fn with_intercepts(mut self, on: bool) -> Self {
        self.intercepts = on;
        self.canonical()
    }

    fn pull_count(&self) -> usize {
        let n = self.n_items;
        if self.self_pulls {
            n * n
        } else {
            n * n.saturating_sub(1)
        }
    }

    fn pull_index(&self, i: usize, j: usize) -> usize {
        let n = self.n_items;
        if self.self_pulls {
            i * n + j
        } else {
            debug_assert_ne!(i, j);
            i * (n - 1) + if j < i { j } else { j - 1 }
        }
    }

    /// Length of the flattened parameter vector.
    pub fn n_params(&self) -> usize {
        let (n, dx, dy) = (self.n_items, self.d_x, self.d_y);
        match self.family {
            Family::Logit => n,
            Family::Mnl => n * dx + if self.intercepts { n } else { 0 },
            Family::Cl => dy,
            Family::Cml => dy * (1 + dx),
            Family::Cdm => self.pull_count(),
            Family::Mcdm => self.pull_count() + n * dx,
            Family::Lcl => dy * (1 + dy),
            Family::Mlcl => dy * (1 + dy + dx),
            Family::MixedLogit => self.components * (1 + n),
        }
    }

    /// Free parameters; the mixture weights lose one to the simplex.
    pub fn degrees_of_freedom(&self) -> usize {
        match self.family {
            Family::MixedLogit => self.n_params() - 1,
            _ => self.n_params(),
        }
    }

    pub(crate) fn check_data(&self, ds: &ChoiceDataset) -> Result<()> {
        if self.family.has_item_params() && ds.n_items() != self.n_items {
            return Err(Error::dims("items", self.n_items, ds.n_items()));
        }
        if self.family.uses_covariates() {
            let d = ds
                .covariate_dim()
                .ok_or_else(|| Error::contract(format!("{} needs chooser covariates", self.family)))?;
            if d != self.d_x {
                return Err(Error::dims("covariates", self.d_x, d));
            }
        }
        if self.family.uses_features() {
            let d = ds
                .feature_dim()
                .ok_or_else(|| Error::contract(format!("{} needs item features", self.family)))?;
            if d != self.d_y {
                return Err(Error::dims("item features", self.d_y, d));
            }
        }
        Ok(())
    }
}

/// Fitted (or hand-specified) parameters for one model family.
#[derive(Clone, Debug, PartialEq)]
pub enum ChoiceModel {
    Logit {
        u: DVector<f64>,
    },
    Mnl {
        u: DVector<f64>,
        gamma: DMatrix<f64>,
        intercepts: bool,
    },
    Cl {
        theta: DVector<f64>,
    },
    Cml {
        theta: DVector<f64>,
        b: DMatrix<f64>,
    },
    Cdm {
        p: DMatrix<f64>,
        self_pulls: bool,
    },
    Mcdm {
        p: DMatrix<f64>,
        gamma: DMatrix<f64>,
        self_pulls: bool,
    },
    Lcl {
        theta: DVector<f64>,
        a: DMatrix<f64>,
    },
    Mlcl {
        theta: DVector<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    },
    MixedLogit {
        pi: DVector<f64>,
        u: DMatrix<f64>,
    },
}

impl ChoiceModel {
    pub fn family(&self) -> Family {
        match self {
            ChoiceModel::Logit { .. } => Family::Logit,
            ChoiceModel::Mnl { .. } => Family::Mnl,
            ChoiceModel::Cl { .. } => Family::Cl,
            ChoiceModel::Cml { .. } => Family::Cml,
            ChoiceModel::Cdm { .. } => Family::Cdm,
            ChoiceModel::Mcdm { .. } => Family::Mcdm,
            ChoiceModel::Lcl { .. } => Family::Lcl,
            ChoiceModel::Mlcl { .. } => Family::Mlcl,
            ChoiceModel::MixedLogit { .. } => Family::MixedLogit,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        let family = self.family();
        let mut spec = ModelSpec::new(family, 0, 0, 0);
        match self {
            ChoiceModel::Logit { u } => spec.n_items = u.len(),
            ChoiceModel::Mnl { gamma, intercepts, .. } => {
                spec.n_items = gamma.nrows();
                spec.d_x = gamma.ncols();
                spec.intercepts = *intercepts;
            }
            ChoiceModel::Cl { theta } => spec.d_y = theta.len(),
            ChoiceModel::Cml { b, .. } => {
                spec.d_y = b.nrows();
                spec.d_x = b.ncols();
            }
            ChoiceModel::Cdm { p, self_pulls } => {
                spec.n_items = p.nrows();
                spec.self_pulls = *self_pulls;
            }
            ChoiceModel::Mcdm { p, gamma, self_pulls } => {
                spec.n_items = p.nrows();
                spec.d_x = gamma.ncols();
                spec.self_pulls = *self_pulls;
            }
            ChoiceModel::Lcl { theta, .. } => spec.d_y = theta.len(),
            ChoiceModel::Mlcl { b, .. } => {
                spec.d_y = b.nrows();
                spec.d_x = b.ncols();
            }
            ChoiceModel::MixedLogit { pi, u } => {
                spec.components = pi.len();
                spec.n_items = u.ncols();
            }
        }
        spec
    }

    /// The all-zero model; for mixed logit, equal weights and zero utilities.
    pub fn zeros(spec: &ModelSpec) -> Self {
        let mut flat = vec![0.0; spec.n_params()];
        if spec.family == Family::MixedLogit {
            let k = spec.components.max(1);
            flat[..k].fill(1.0 / k as f64);
        }
        Self::from_flat(spec, &flat).expect("length matches spec")
    }

    pub fn from_flat(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.n_params() {
            return Err(Error::dims("flattened parameters", spec.n_params(), flat.len()));
        }
        let (n, dx, dy) = (spec.n_items, spec.d_x, spec.d_y);
        let mut rest = flat;
        let mut take = |len: usize| {
            let (head, tail) = rest.split_at(len);
            rest = tail;
            head
        };
        let pulls = |vals: &[f64]| {
            let mut p = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    if i != j || spec.self_pulls {
                        p[(i, j)] = vals[spec.pull_index(i, j)];
                    }
                }
            }
            p
        };
        let model = match spec.family {
            Family::Logit => ChoiceModel::Logit {
                u: DVector::from_column_slice(take(n)),
            },
            Family::Mnl => {
                let u = if spec.intercepts {
                    DVector::from_column_slice(take(n))
                } else {
                    DVector::zeros(n)
                };
                ChoiceModel::Mnl {
                    u,
                    gamma: DMatrix::from_row_slice(n, dx, take(n * dx)),
                    intercepts: spec.intercepts,
                }
            }
            Family::Cl => ChoiceModel::Cl {
                theta: DVector::from_column_slice(take(dy)),
            },
            Family::Cml => ChoiceModel::Cml {
                theta: DVector::from_column_slice(take(dy)),
                b: DMatrix::from_row_slice(dy, dx, take(dy * dx)),
            },
            Family::Cdm => ChoiceModel::Cdm {
                p: pulls(take(spec.pull_count())),
                self_pulls: spec.self_pulls,
            },
            Family::Mcdm => ChoiceModel::Mcdm {
                p: pulls(take(spec.pull_count())),
                gamma: DMatrix::from_row_slice(n, dx, take(n * dx)),
                self_pulls: spec.self_pulls,
            },
            Family::Lcl => ChoiceModel::Lcl {
                theta: DVector::from_column_slice(take(dy)),
                a: DMatrix::from_row_slice(dy, dy, take(dy * dy)),
            },
            Family::Mlcl => ChoiceModel::Mlcl {
                theta: DVector::from_column_slice(take(dy)),
                a: DMatrix::from_row_slice(dy, dy, take(dy * dy)),
                b: DMatrix::from_row_slice(dy, dx, take(dy * dx)),
            },
            Family::MixedLogit => {
                let k = spec.components;
                ChoiceModel::MixedLogit {
                    pi: DVector::from_column_slice(take(k)),
                    u: DMatrix::from_row_slice(k, n, take(k * n)),
                }
            }
        };
        Ok(model)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let spec = self.spec();
        let mut out = Vec::with_capacity(spec.n_params());
        let push_rows = |out: &mut Vec<f64>, m: &DMatrix<f64>| {
            for r in 0..m.nrows() {
                out.extend(m.row(r).iter());
            }
        };
        let push_pulls = |out: &mut Vec<f64>, p: &DMatrix<f64>, self_pulls: bool| {
            for i in 0..p.nrows() {
                for j in 0..p.ncols() {
                    if i != j || self_pulls {
                        out.push(p[(i, j)]);
                    }
                }
            }
        };
        match self {
            ChoiceModel::Logit { u } => out.extend(u.iter()),
            ChoiceModel::Mnl { u, gamma, intercepts } => {
                if *intercepts {
                    out.extend(u.iter());
                }
                push_rows(&mut out, gamma);
            }
            ChoiceModel::Cl { theta } => out.extend(theta.iter()),
            ChoiceModel::Cml { theta, b } => {
                out.extend(theta.iter());
                push_rows(&mut out, b);
            }
            ChoiceModel::Cdm { p, self_pulls } => push_pulls(&mut out, p, *self_pulls),
            ChoiceModel::Mcdm { p, gamma, self_pulls } => {
                push_pulls(&mut out, p, *self_pulls);
                push_rows(&mut out, gamma);
            }
            ChoiceModel::Lcl { theta, a } => {
                out.extend(theta.iter());
                push_rows(&mut out, a);
            }
            ChoiceModel::Mlcl { theta, a, b } => {
                out.extend(theta.iter());
                push_rows(&mut out, a);
                push_rows(&mut out, b);
            }
            ChoiceModel::MixedLogit { pi, u } => {
                out.extend(pi.iter());
                push_rows(&mut out, u);
            }
        }
        out
    }

    /// Checks the family invariants: finite parameters, pinned CDM diagonal,
    /// mixture weights on the simplex.
    pub fn validate(&self) -> Result<()> {
        if self.flatten().iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("model has non-finite parameters"));
        }
        match self {
            ChoiceModel::Cdm { p, self_pulls: false } | ChoiceModel::Mcdm { p, self_pulls: false, .. } => {
                if p.diagonal().iter().any(|&v| v != 0.0) {
                    return Err(Error::contract("CDM without self-pulls must have a zero diagonal"));
                }
            }
            ChoiceModel::MixedLogit { pi, u } => {
                if pi.len() != u.nrows() || pi.is_empty() {
                    return Err(Error::dims("mixture components", u.nrows(), pi.len()));
                }
                if pi.iter().any(|&w| w < 0.0) || (pi.sum() - 1.0).abs() > 1e-12 {
                    return Err(Error::contract("mixture weights must lie on the simplex"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// `u_i(C, a)` for every item of observation `obs`, in choice-set order.
    pub fn utilities(&self, ds: &ChoiceDataset, obs: usize) -> Result<Vec<f64>> {
        if matches!(self, ChoiceModel::MixedLogit { .. }) {
            return Err(Error::contract(
                "mixed logit has no single-chooser utility; use choice_probabilities",
            ));
        }
        self.spec().check_data(ds)?;
        let mut out = Vec::new();
        let mut ctx = Context::default();
        self.fill_utilities(ds, obs, &mut ctx, &mut out);
        Ok(out)
    }

    pub fn utility(&self, ds: &ChoiceDataset, obs: usize, item: usize) -> Result<f64> {
        let pos = ds.observations()[obs]
            .position_of(item)
            .ok_or_else(|| Error::contract(format!("item {item} is not in observation {obs}'s choice set")))?;
        Ok(self.utilities(ds, obs)?[pos])
    }

    /// Choice probabilities over observation `obs`'s set, in set order.
    pub fn choice_probabilities(&self, ds: &ChoiceDataset, obs: usize) -> Result<Vec<f64>> {
        self.spec().check_data(ds)?;
        let o = &ds.observations()[obs];
        match self {
            ChoiceModel::MixedLogit { pi, u } => {
                let mut probs = vec![0.0; o.len()];
                let mut row = vec![0.0; o.len()];
                for k in 0..pi.len() {
                    for (r, &i) in row.iter_mut().zip(&o.choice_set) {
                        *r = u[(k, i)];
                    }
                    softmax_in_place(&mut row);
                    for (p, r) in probs.iter_mut().zip(&row) {
                        *p += pi[k] * r;
                    }
                }
                Ok(probs)
            }
            _ => {
                let mut util = Vec::new();
                self.fill_utilities(ds, obs, &mut Context::default(), &mut util);
                softmax_in_place(&mut util);
                Ok(util)
            }
        }
    }

    /// `Σ_obs w_obs · log Pr(chosen | C)`; singleton sets contribute 0.
    pub fn log_likelihood(&self, ds: &ChoiceDataset, w: &SampleWeights) -> Result<f64> {
        w.check_len(ds.len())?;
        self.spec().check_data(ds)?;
        Ok(self.accumulate(ds, w.values(), None))
    }

    /// Unweighted log-likelihood.
    pub fn log_likelihood_unweighted(&self, ds: &ChoiceDataset) -> Result<f64> {
        self.log_likelihood(ds, &SampleWeights::uniform(ds.len()))
    }

    /// Exact gradient of [`log_likelihood`](Self::log_likelihood) in the
    /// flattened layout.
    pub fn gradient(&self, ds: &ChoiceDataset, w: &SampleWeights) -> Result<Vec<f64>> {
        Ok(self.log_likelihood_and_gradient(ds, w)?.1)
    }

    pub fn log_likelihood_and_gradient(&self, ds: &ChoiceDataset, w: &SampleWeights) -> Result<(f64, Vec<f64>)> {
        w.check_len(ds.len())?;
        self.spec().check_data(ds)?;
        let mut grad = vec![0.0; self.spec().n_params()];
        let ll = self.accumulate(ds, w.values(), Some(&mut grad));
        Ok((ll, grad))
    }

    /// Weighted log-likelihood with optional gradient accumulation. Inputs
    /// are assumed validated.
    pub(crate) fn accumulate(&self, ds: &ChoiceDataset, w: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        if let ChoiceModel::MixedLogit { pi, u } = self {
            return mixture_accumulate(pi, u, ds, w, grad);
        }
        let spec = self.spec();
        let mut ctx = Context::default();
        let mut util = Vec::new();
        let mut ll = 0.0;
        for (k, obs) in ds.observations().iter().enumerate() {
            if !obs.is_informative() || w[k] == 0.0 {
                continue;
            }
            self.fill_utilities(ds, k, &mut ctx, &mut util);
            let c = obs.chosen_position();
            let lse = log_sum_exp(&util);
            ll += w[k] * (util[c] - lse);
            if let Some(g) = grad.as_deref_mut() {
                // d/du_j of log softmax_c = [j == c] - p_j
                for (j, v) in util.iter_mut().enumerate() {
                    let p = (*v - lse).exp();
                    *v = w[k] * (if j == c { 1.0 } else { 0.0 } - p);
                }
                self.backprop(&spec, ds, k, obs, &ctx, &util, g);
            }
        }
        ll
    }

    fn fill_utilities(&self, ds: &ChoiceDataset, k: usize, ctx: &mut Context, out: &mut Vec<f64>) {
        let obs = &ds.observations()[k];
        out.clear();
        let set = &obs.choice_set;
        let feats = || ds.item_features().expect("checked");
        let dot = |a: &[f64], b: &DVector<f64>| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>();
        match self {
            ChoiceModel::Logit { u } => out.extend(set.iter().map(|&i| u[i])),
            ChoiceModel::Mnl { u, gamma, .. } => {
                let x = ds.covariates_of(k).expect("checked");
                out.extend(set.iter().map(|&i| u[i] + row_dot(gamma, i, x)));
            }
            ChoiceModel::Cl { theta } => out.extend(set.iter().map(|&i| dot(feats().row(i), theta))),
            ChoiceModel::Cml { theta, b } => {
                let x = ds.covariates_of(k).expect("checked");
                ctx.v = theta + b * DVector::from_column_slice(x);
                out.extend(set.iter().map(|&i| dot(feats().row(i), &ctx.v)));
            }
            ChoiceModel::Cdm { p, self_pulls } => {
                out.extend(set.iter().map(|&i| pull_sum(p, i, set, *self_pulls)));
            }
            ChoiceModel::Mcdm { p, gamma, self_pulls } => {
                let x = ds.covariates_of(k).expect("checked");
                out.extend(set.iter().map(|&i| pull_sum(p, i, set, *self_pulls) + row_dot(gamma, i, x)));
            }
            ChoiceModel::Lcl { theta, a } => {
                ctx.y_c = mean_rows(feats(), set);
                ctx.v = theta + a * &ctx.y_c;
                out.extend(set.iter().map(|&i| dot(feats().row(i), &ctx.v)));
            }
            ChoiceModel::Mlcl { theta, a, b } => {
                let x = ds.covariates_of(k).expect("checked");
                ctx.y_c = mean_rows(feats(), set);
                ctx.v = theta + a * &ctx.y_c + b * DVector::from_column_slice(x);
                out.extend(set.iter().map(|&i| dot(feats().row(i), &ctx.v)));
            }
            ChoiceModel::MixedLogit { .. } => unreachable!("mixture handled separately"),
        }
    }

    /// Adds `Σ_j d_j ∂u_j/∂params` into `g`, where `d` holds the utility
    /// derivatives in choice-set order.
    #[allow(clippy::too_many_arguments)]
    fn backprop(
        &self,
        spec: &ModelSpec,
        ds: &ChoiceDataset,
        k: usize,
        obs: &Observation,
        ctx: &Context,
        d: &[f64],
        g: &mut [f64],
    ) {
        let set = &obs.choice_set;
        let (n, dx, dy) = (spec.n_items, spec.d_x, spec.d_y);
        let feature_sum = || {
            let feats = ds.item_features().expect("checked");
            let mut s = vec![0.0; dy];
            for (&i, &dj) in set.iter().zip(d) {
                for (sr, y) in s.iter_mut().zip(feats.row(i)) {
                    *sr += dj * y;
                }
            }
            s
        };
        let outer = |g: &mut [f64], offset: usize, s: &[f64], x: &[f64]| {
            for (r, sr) in s.iter().enumerate() {
                for (c, xc) in x.iter().enumerate() {
                    g[offset + r * x.len() + c] += sr * xc;
                }
            }
        };
        let pulls = |g: &mut [f64]| {
            for (&i, &di) in set.iter().zip(d) {
                for &j in set {
                    if j != i || spec.self_pulls {
                        g[spec.pull_index(i, j)] += di;
                    }
                }
            }
        };
        let gamma = |g: &mut [f64], offset: usize| {
            let x = ds.covariates_of(k).expect("checked");
            for (&i, &di) in set.iter().zip(d) {
                for (c, xc) in x.iter().enumerate() {
                    g[offset + i * dx + c] += di * xc;
                }
            }
        };
        match self {
            ChoiceModel::Logit { .. } => {
                for (&i, &di) in set.iter().zip(d) {
                    g[i] += di;
                }
            }
            ChoiceModel::Mnl { intercepts, .. } => {
                let offset = if *intercepts {
                    for (&i, &di) in set.iter().zip(d) {
                        g[i] += di;
                    }
                    n
                } else {
                    0
                };
                gamma(g, offset);
            }
            ChoiceModel::Cl { .. } => {
                for (gr, s) in g.iter_mut().zip(feature_sum()) {
                    *gr += s;
                }
            }
            ChoiceModel::Cml { .. } => {
                let s = feature_sum();
                for (gr, sr) in g.iter_mut().zip(&s) {
                    *gr += sr;
                }
                outer(g, dy, &s, ds.covariates_of(k).expect("checked"));
            }
            ChoiceModel::Cdm { .. } => pulls(g),
            ChoiceModel::Mcdm { .. } => {
                pulls(g);
                gamma(g, spec.pull_count());
            }
            ChoiceModel::Lcl { .. } => {
                let s = feature_sum();
                for (gr, sr) in g.iter_mut().zip(&s) {
                    *gr += sr;
                }
                outer(g, dy, &s, ctx.y_c.as_slice());
            }
            ChoiceModel::Mlcl { .. } => {
                let s = feature_sum();
                for (gr, sr) in g.iter_mut().zip(&s) {
                    *gr += sr;
                }
                outer(g, dy, &s, ctx.y_c.as_slice());
                outer(g, dy + dy * dy, &s, ds.covariates_of(k).expect("checked"));
            }
            ChoiceModel::MixedLogit { .. } => unreachable!("mixture handled separately"),
        }
    }
}

#[derive(Default)]
struct Context {
    v: DVector<f64>,
    y_c: DVector<f64>,
}

fn row_dot(m: &DMatrix<f64>, row: usize, x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(c, xc)| m[(row, c)] * xc).sum()
}

fn pull_sum(p: &DMatrix<f64>, i: usize, set: &[usize], self_pulls: bool) -> f64 {
    set.iter()
        .filter(|&&j| j != i || self_pulls)
        .map(|&j| p[(i, j)])
        .sum()
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Mixture log-likelihood `Σ w log Σ_k π_k softmax_k(chosen)` and its
/// gradient with respect to `π` (unconstrained) and `U`.
fn mixture_accumulate(
    pi: &DVector<f64>,
    u: &DMatrix<f64>,
    ds: &ChoiceDataset,
    w: &[f64],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let k_count = pi.len();
    let n = u.ncols();
    let mut ll = 0.0;
    let mut log_pk = vec![0.0; k_count];
    let mut lse_k = vec![0.0; k_count];
    let mut row = Vec::new();
    for (k, obs) in ds.observations().iter().enumerate() {
        if !obs.is_informative() || w[k] == 0.0 {
            continue;
        }
        let c = obs.chosen_position();
        for comp in 0..k_count {
            row.clear();
            row.extend(obs.choice_set.iter().map(|&i| u[(comp, i)]));
            lse_k[comp] = log_sum_exp(&row);
            log_pk[comp] = row[c] - lse_k[comp];
        }
        let terms: Vec<f64> = (0..k_count).map(|comp| pi[comp].ln() + log_pk[comp]).collect();
        let log_p = log_sum_exp(&terms);
        ll += w[k] * log_p;
        if let Some(g) = grad.as_deref_mut() {
            for comp in 0..k_count {
                g[comp] += w[k] * (log_pk[comp] - log_p).exp();
                let resp = (terms[comp] - log_p).exp();
                if resp == 0.0 {
                    continue;
                }
                for (pos, &i) in obs.choice_set.iter().enumerate() {
                    let p = (u[(comp, i)] - lse_k[comp]).exp();
                    let delta = if pos == c { 1.0 } else { 0.0 };
                    g[k_count + comp * n + i] += w[k] * resp * (delta - p);
                }
            }
        }
    }
    ll
}

/// Reinterprets an MNL fitted on indicator-encoded choice sets as a CDM
/// with self-pulls: `P = Γ + diag(u)`.
pub fn cdm_duality_view(mnl: &ChoiceModel) -> Result<ChoiceModel> {
    match mnl {
        ChoiceModel::Mnl { u, gamma, .. } => {
            if gamma.ncols() != gamma.nrows() {
                return Err(Error::dims("indicator covariates", gamma.nrows(), gamma.ncols()));
            }
            let mut p = gamma.clone();
            for i in 0..p.nrows() {
                p[(i, i)] += u[i];
            }
            Ok(ChoiceModel::Cdm { p, self_pulls: true })
        }
        other => Err(Error::contract(format!(
            "duality view needs an MNL model, got {}",
            other.family()
        ))),
    }
}

/// LCL parameters of the expected chooser under Gaussian chooser and
/// recommendation noise: `θ = (1/k) Σ M⁻¹ μ`, `A = Σ₀ M⁻¹`, `M = Σ₀ + Σ/k`.
pub fn lcl_mean_field_params(
    mu: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    k: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = mu.len();
    if k == 0 {
        return Err(Error::invalid("set size k must be at least 1"));
    }
    if sigma0.shape() != (d, d) || sigma.shape() != (d, d) {
        return Err(Error::dims("covariance matrices", d, sigma0.nrows()));
    }
    let kf = k as f64;
    let m = sigma0 + sigma / kf;
    let sv = m.clone().singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if !(lo > 1e-12 * hi.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular("Σ₀ + Σ/k".into()));
    }
    let m_inv = m
        .try_inverse()
        .ok_or_else(|| Error::Singular("Σ₀ + Σ/k".into()))?;
    let theta = sigma * &m_inv * mu / kf;
    let a = sigma0 * &m_inv;
    Ok((theta, a))
}
