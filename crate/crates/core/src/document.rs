//! Self-describing JSON documents for fitted models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ChoiceDataset;
use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::models::{ChoiceModel, ModelSpec};

pub const MODEL_FORMAT: &str = "choice-confound/model";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub l2_lambda: f64,
    pub epochs_run: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub final_grad_norm_sq: f64,
    /// Unweighted, unregularized log-likelihood on the training data.
    pub log_likelihood: f64,
    pub objective_trace: Vec<f64>,
}

impl From<&FitResult> for FitMetadata {
    fn from(f: &FitResult) -> Self {
        Self {
            l2_lambda: f.l2_lambda,
            epochs_run: f.epochs_run,
            converged: f.converged,
            final_objective: f.final_objective,
            final_grad_norm_sq: f.final_grad_norm_sq,
            log_likelihood: f.log_likelihood,
            objective_trace: f.objective_trace.clone(),
        }
    }
}

/// Family and dimensions, flattened parameters in the documented layout,
/// the item order they refer to, and optional fit metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub spec: ModelSpec,
    pub params: Vec<f64>,
    pub item_ids: Vec<String>,
    #[serde(default)]
    pub covariate_names: Vec<String>,
    #[serde(default)]
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub fit: Option<FitMetadata>,
}

impl ModelDocument {
    /// Records `model` against the item order and table columns of `ds`.
    pub fn new(model: &ChoiceModel, ds: &ChoiceDataset) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            spec: model.spec(),
            params: model.flatten(),
            item_ids: ds.items().ids().to_vec(),
            covariate_names: ds.chooser_covariates().map(|t| t.names().to_vec()).unwrap_or_default(),
            feature_names: ds.item_features().map(|t| t.names().to_vec()).unwrap_or_default(),
            fit: None,
        }
    }

    pub fn from_fit(f: &FitResult, ds: &ChoiceDataset) -> Self {
        Self {
            fit: Some(FitMetadata::from(f)),
            ..Self::new(&f.model, ds)
        }
    }

    pub fn model(&self) -> Result<ChoiceModel> {
        if self.format != MODEL_FORMAT {
            return Err(Error::contract(format!("not a model document (format {:?})", self.format)));
        }
        // Feature-only families carry no per-item parameters, so any item
        // order is consistent with them.
        if self.spec.family.has_item_params() && self.item_ids.len() != self.spec.n_items {
            return Err(Error::dims("item ids", self.spec.n_items, self.item_ids.len()));
        }
        let m = ChoiceModel::from_flat(&self.spec, &self.params)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(s)?;
        doc.model()?;
        Ok(doc)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
