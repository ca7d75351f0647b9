//! Weighted maximum-likelihood fitting.
//!
//! Single-mode families are fitted by full-batch Rprop on
//! `Σ w·log Pr − λ‖params‖²` starting from zero. Mixed logit is fitted by EM
//! whose M-step reuses the same optimizer on responsibility-weighted logits.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ChoiceDataset;
use crate::error::{Error, Result};
use crate::models::{ChoiceModel, Family, ModelSpec};
use crate::propensity::{ipw_weights, PropensityModel};
use crate::rng;
use crate::weights::SampleWeights;

/// Step-size adaptation constants for Rprop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpropConfig {
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub delta0: f64,
    pub delta_max: f64,
    pub delta_min: f64,
}

impl Default for RpropConfig {
    fn default() -> Self {
        Self {
            eta_plus: 1.2,
            eta_minus: 0.5,
            delta0: 0.1,
            delta_max: 50.0,
            delta_min: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_epochs: usize,
    pub grad_norm_sq_tol: f64,
    pub l2_lambda: f64,
    pub rprop: RpropConfig,
    pub seed: u64,
    /// Rescale weights to mean 1 before fitting. Off keeps the raw
    /// weighted-likelihood scale against the fixed `l2_lambda`.
    pub normalize_weights: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            grad_norm_sq_tol: 1e-8,
            l2_lambda: 1e-4,
            rprop: RpropConfig::default(),
            seed: 0,
            normalize_weights: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.rprop;
        if !(r.eta_minus > 0.0 && r.eta_minus < 1.0 && r.eta_plus > 1.0) {
            return Err(Error::invalid("Rprop needs 0 < eta_minus < 1 < eta_plus"));
        }
        if !(r.delta_min > 0.0 && r.delta_min <= r.delta0 && r.delta0 <= r.delta_max) {
            return Err(Error::invalid("Rprop needs 0 < delta_min <= delta0 <= delta_max"));
        }
        if !(self.grad_norm_sq_tol > 0.0) {
            return Err(Error::invalid("gradient tolerance must be positive"));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::invalid("l2_lambda must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub model: ChoiceModel,
    /// Regularized weighted log-likelihood at `model`.
    pub final_objective: f64,
    pub epochs_run: usize,
    pub converged: bool,
    /// Best regularized objective reached by each epoch (EM: per iteration).
    pub objective_trace: Vec<f64>,
    pub final_grad_norm_sq: f64,
    pub l2_lambda: f64,
    /// Unweighted, unregularized log-likelihood on the training data.
    pub log_likelihood: f64,
}

/// Differentiable objective to maximize.
pub(crate) trait Objective {
    fn n_params(&self) -> usize;

    /// Returns the value and writes the gradient into `grad`.
    fn evaluate(&self, params: &[f64], grad: &mut [f64]) -> Result<f64>;
}

pub(crate) struct RpropOutcome {
    pub params: Vec<f64>,
    pub objective: f64,
    pub grad_norm_sq: f64,
    pub epochs: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Full-batch Rprop⁻ ascent: a sign change shrinks the step and skips that
/// coordinate's update for one epoch. Returns the best iterate seen, so the
/// result never scores below `init`.
pub(crate) fn rprop_maximize(obj: &dyn Objective, init: Vec<f64>, cfg: &FitConfig) -> Result<RpropOutcome> {
    let r = cfg.rprop;
    let p = obj.n_params();
    debug_assert_eq!(init.len(), p);
    let mut params = init;
    let mut step = vec![r.delta0; p];
    let mut prev = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let mut trace = Vec::with_capacity(cfg.max_epochs + 1);
    let mut converged = false;
    let mut epochs = 0;
    loop {
        let value = obj.evaluate(&params, &mut grad)?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { epoch: epochs });
        }
        let gnorm: f64 = grad.iter().map(|g| g * g).sum();
        if best.as_ref().is_none_or(|b| value > b.1) {
            best = Some((params.clone(), value, gnorm));
        }
        trace.push(best.as_ref().map(|b| b.1).unwrap_or(value));
        if gnorm < cfg.grad_norm_sq_tol {
            converged = true;
            best = Some((params.clone(), value, gnorm));
            *trace.last_mut().expect("pushed") = value.max(trace.last().copied().unwrap_or(value));
            break;
        }
        if epochs >= cfg.max_epochs {
            break;
        }
        for i in 0..p {
            let s = grad[i] * prev[i];
            if s > 0.0 {
                step[i] = (step[i] * r.eta_plus).min(r.delta_max);
            } else if s < 0.0 {
                step[i] = (step[i] * r.eta_minus).max(r.delta_min);
                grad[i] = 0.0;
            }
            if grad[i] > 0.0 {
                params[i] += step[i];
            } else if grad[i] < 0.0 {
                params[i] -= step[i];
            }
            prev[i] = grad[i];
        }
        epochs += 1;
    }
    let (params, objective, grad_norm_sq) = best.expect("at least one evaluation");
    if let Some(last) = trace.last_mut() {
        *last = objective;
    }
    Ok(RpropOutcome {
        params,
        objective,
        grad_norm_sq,
        epochs,
        converged,
        trace,
    })
}

struct LikelihoodObjective<'a> {
    spec: ModelSpec,
    ds: &'a ChoiceDataset,
    weights: &'a [f64],
    lambda: f64,
}

impl Objective for LikelihoodObjective<'_> {
    fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    fn evaluate(&self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        let model = ChoiceModel::from_flat(&self.spec, params)?;
        grad.fill(0.0);
        let ll = model.accumulate(self.ds, self.weights, Some(grad));
        let mut penalty = 0.0;
        for (g, p) in grad.iter_mut().zip(params) {
            penalty += p * p;
            *g -= 2.0 * self.lambda * p;
        }
        Ok(ll - self.lambda * penalty)
    }
}

/// Fits a single-mode family by Rprop from zero initialization.
pub fn fit(spec: &ModelSpec, ds: &ChoiceDataset, w: &SampleWeights, cfg: &FitConfig) -> Result<FitResult> {
    fit_from(spec, ds, w, cfg, None)
}

/// As [`fit`], optionally warm-started from `init`.
pub fn fit_from(
    spec: &ModelSpec,
    ds: &ChoiceDataset,
    w: &SampleWeights,
    cfg: &FitConfig,
    init: Option<&ChoiceModel>,
) -> Result<FitResult> {
    cfg.validate()?;
    if spec.family == Family::MixedLogit {
        return Err(Error::contract("mixed logit is fitted by EM; use fit_mixed_logit"));
    }
    spec.check_data(ds)?;
    w.check_len(ds.len())?;
    let w = if cfg.normalize_weights { w.mean_normalized()? } else { w.clone() };
    let start = match init {
        Some(m) if m.spec() == *spec => m.flatten(),
        Some(_) => return Err(Error::contract("warm start has a different model spec")),
        None => vec![0.0; spec.n_params()],
    };
    let obj = LikelihoodObjective {
        spec: *spec,
        ds,
        weights: w.values(),
        lambda: cfg.l2_lambda,
    };
    let out = rprop_maximize(&obj, start, cfg)?;
    let model = ChoiceModel::from_flat(spec, &out.params)?;
    let log_likelihood = model.log_likelihood_unweighted(ds)?;
    Ok(FitResult {
        model,
        final_objective: out.objective,
        epochs_run: out.epochs,
        converged: out.converged,
        objective_trace: out.trace,
        final_grad_norm_sq: out.grad_norm_sq,
        l2_lambda: cfg.l2_lambda,
        log_likelihood,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once an iteration improves the objective by less than this.
    pub ll_tol: f64,
    pub timeout_seconds: f64,
    /// Rprop epochs per component refit. The refits are warm-started, so a
    /// short budget per iteration still makes progress.
    pub m_step_epochs: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            ll_tol: 1e-6,
            timeout_seconds: 3600.0,
            m_step_epochs: 50,
        }
    }
}

/// Fits a `k`-component mixed logit by EM.
///
/// Responsibilities start from a seeded Dirichlet(1, …, 1) draw per
/// observation. Each M-step sets `π` to the mean responsibilities and
/// warm-starts a responsibility-weighted logit fit per component; since
/// those fits never return a worse iterate, the penalized mixture
/// log-likelihood in `objective_trace` is non-decreasing.
pub fn fit_mixed_logit(k: usize, ds: &ChoiceDataset, cfg: &FitConfig, em: &EmConfig) -> Result<FitResult> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::invalid("mixed logit needs at least one component"));
    }
    if ds.is_empty() {
        return Err(Error::contract("cannot fit a mixture to an empty dataset"));
    }
    if k > ds.len() {
        return Err(Error::invalid(format!(
            "{k} components exceed the {} observations",
            ds.len()
        )));
    }
    let started = Instant::now();
    let timeout = Duration::from_secs_f64(em.timeout_seconds.max(0.0));
    let n = ds.n_items();
    let m = ds.len();
    let logit = ModelSpec::new(Family::Logit, n, 0, 0);
    let inner = FitConfig {
        normalize_weights: false,
        max_epochs: em.m_step_epochs.max(1),
        ..*cfg
    };

    let mut rng = rng::stream(cfg.seed, 0x454D);
    let mut resp: Vec<Vec<f64>> = (0..k)
        .map(|_| vec![0.0; m])
        .collect();
    for obs in 0..m {
        let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        for (comp, d) in draws.into_iter().enumerate() {
            resp[comp][obs] = d / total;
        }
    }

    let mut components: Vec<ChoiceModel> = (0..k).map(|_| ChoiceModel::zeros(&logit)).collect();
    let mut pi = DVector::from_element(k, 1.0 / k as f64);
    let mut trace = Vec::new();
    let mut epochs = 0;
    let mut converged = false;
    for _ in 0..em.max_iters.max(1) {
        for (comp, r) in resp.iter().enumerate() {
            pi[comp] = r.iter().sum::<f64>() / m as f64;
        }
        let fits: Vec<FitResult> = components
            .par_iter()
            .zip(resp.par_iter())
            .map(|(init, r)| {
                let w = SampleWeights::new(r.clone(), crate::weights::WeightKind::IpwRaw)?;
                fit_from(&logit, ds, &w, &inner, Some(init))
            })
            .collect::<Result<_>>()?;
        epochs += fits.iter().map(|f| f.epochs_run).sum::<usize>();
        components = fits.into_iter().map(|f| f.model).collect();
        let mixture = assemble_mixture(&pi, &components);
        let penalty: f64 = components.iter().flat_map(|c| c.flatten()).map(|v| v * v).sum();
        let objective = mixture.log_likelihood_unweighted(ds)? - cfg.l2_lambda * penalty;
        if !objective.is_finite() {
            return Err(Error::NonFinite { epoch: trace.len() });
        }
        trace.push(objective);
        responsibilities(&mixture, ds, &mut resp);
        if trace.len() >= 2 && trace[trace.len() - 1] - trace[trace.len() - 2] < em.ll_tol {
            converged = true;
            break;
        }
        if started.elapsed() >= timeout {
            break;
        }
    }
    let model = assemble_mixture(&pi, &components);
    let log_likelihood = model.log_likelihood_unweighted(ds)?;
    let grad = model.gradient(ds, &SampleWeights::uniform(m))?;
    Ok(FitResult {
        model,
        final_objective: *trace.last().expect("at least one iteration"),
        epochs_run: epochs,
        converged,
        objective_trace: trace,
        final_grad_norm_sq: grad[k..].iter().map(|g| g * g).sum(),
        l2_lambda: cfg.l2_lambda,
        log_likelihood,
    })
}

fn assemble_mixture(pi: &DVector<f64>, components: &[ChoiceModel]) -> ChoiceModel {
    let n = components.first().map(|c| c.flatten().len()).unwrap_or(0);
    let mut u = DMatrix::zeros(components.len(), n);
    for (k, c) in components.iter().enumerate() {
        for (i, v) in c.flatten().into_iter().enumerate() {
            u[(k, i)] = v;
        }
    }
    ChoiceModel::MixedLogit { pi: pi.clone(), u }
}

/// E-step: posterior component probabilities per observation.
fn responsibilities(mixture: &ChoiceModel, ds: &ChoiceDataset, resp: &mut [Vec<f64>]) {
    let ChoiceModel::MixedLogit { pi, u } = mixture else {
        unreachable!("mixture expected")
    };
    let mut row = Vec::new();
    let mut terms = vec![0.0; pi.len()];
    for (obs, o) in ds.observations().iter().enumerate() {
        let c = o.chosen_position();
        for (k, t) in terms.iter_mut().enumerate() {
            row.clear();
            row.extend(o.choice_set.iter().map(|&i| u[(k, i)]));
            *t = pi[k].ln() + row[c] - crate::models::log_sum_exp(&row);
        }
        let total = crate::models::log_sum_exp(&terms);
        for (k, t) in terms.iter().enumerate() {
            resp[k][obs] = (t - total).exp();
        }
    }
}

/// IPW weights from `pm` combined with a covariate-using family.
pub fn fit_doubly_robust(
    spec: &ModelSpec,
    ds: &ChoiceDataset,
    pm: &PropensityModel,
    cfg: &FitConfig,
) -> Result<FitResult> {
    if !spec.family.uses_covariates() {
        return Err(Error::contract(format!(
            "doubly robust estimation needs a covariate family, got {}",
            spec.family
        )));
    }
    let w = ipw_weights(pm, ds, None)?;
    fit(spec, ds, &w, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Interner, Observation};

    fn binary(n0: usize, n1: usize) -> ChoiceDataset {
        let items = Interner::from_ids(["a", "b"]).unwrap();
        let total = n0 + n1;
        let choosers = Interner::from_ids((0..total).map(|k| format!("u{k}"))).unwrap();
        let obs = (0..total)
            .map(|k| Observation::new(k, vec![0, 1], usize::from(k >= n0)).unwrap())
            .collect();
        ChoiceDataset::from_parts(items, choosers, obs).unwrap()
    }

    fn prob_first(model: &ChoiceModel, ds: &ChoiceDataset) -> f64 {
        model.choice_probabilities(ds, 0).unwrap()[0]
    }

    #[test]
    fn binary_logit_recovers_rate() {
        let ds = binary(75, 25);
        let spec = ModelSpec::for_dataset(Family::Logit, &ds).unwrap();
        let fit = fit(&spec, &ds, &SampleWeights::uniform(100), &FitConfig::default()).unwrap();
        let p = prob_first(&fit.model, &ds);
        assert!((p - 0.75).abs() < 0.01, "{p}");
        assert_eq!(fit.final_objective, *fit.objective_trace.last().unwrap());
    }

    #[test]
    fn heavy_penalty_gives_uniform() {
        let ds = binary(90, 10);
        let spec = ModelSpec::for_dataset(Family::Logit, &ds).unwrap();
        let cfg = FitConfig {
            l2_lambda: 1e6,
            ..FitConfig::default()
        };
        let fit = fit(&spec, &ds, &SampleWeights::uniform(100), &cfg).unwrap();
        assert!(fit.model.flatten().iter().all(|v| v.abs() < 1e-3));
        assert!((prob_first(&fit.model, &ds) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn refit_is_bit_identical() {
        let ds = binary(60, 40);
        let spec = ModelSpec::for_dataset(Family::Logit, &ds).unwrap();
        let a = fit(&spec, &ds, &SampleWeights::uniform(100), &FitConfig::default()).unwrap();
        let b = fit(&spec, &ds, &SampleWeights::uniform(100), &FitConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn objective_never_below_start() {
        let ds = binary(30, 70);
        let spec = ModelSpec::for_dataset(Family::Logit, &ds).unwrap();
        let cfg = FitConfig {
            max_epochs: 3,
            ..FitConfig::default()
        };
        let fit = fit(&spec, &ds, &SampleWeights::uniform(100), &cfg).unwrap();
        assert!(fit.final_objective >= fit.objective_trace[0]);
        assert!(fit.objective_trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = FitConfig::default();
        cfg.rprop.eta_minus = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mixture_is_not_fitted_by_rprop() {
        let ds = binary(3, 3);
        let spec = ModelSpec::new(Family::MixedLogit, 2, 0, 0).with_components(2);
        assert!(fit(&spec, &ds, &SampleWeights::uniform(6), &FitConfig::default()).is_err());
    }

    #[test]
    fn single_component_em_matches_logit() {
        let ds = binary(70, 30);
        let cfg = FitConfig::default();
        let plain = fit(&ModelSpec::for_dataset(Family::Logit, &ds).unwrap(), &ds, &SampleWeights::uniform(100), &cfg).unwrap();
        let em = fit_mixed_logit(1, &ds, &cfg, &EmConfig::default()).unwrap();
        assert!((em.log_likelihood - plain.log_likelihood).abs() < 1e-6);
    }

    #[test]
    fn too_many_components() {
        let ds = binary(1, 1);
        assert!(fit_mixed_logit(3, &ds, &FitConfig::default(), &EmConfig::default()).is_err());
    }

    #[test]
    fn doubly_robust_rejects_plain_logit() {
        let ds = binary(5, 5);
        let spec = ModelSpec::for_dataset(Family::Logit, &ds).unwrap();
        let pm = PropensityModel::ItemLogistic(crate::propensity::PerItemLogistic::new(
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
        ));
        assert!(fit_doubly_robust(&spec, &ds, &pm, &FitConfig::default()).is_err());
    }
}
