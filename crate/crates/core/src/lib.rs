//! Discrete choice estimation under choice set confounding.
//!
//! The crate fits logit-family choice models by weighted maximum likelihood
//! and provides the tools to correct for chooser-dependent choice sets:
//! inverse probability weighting, covariate regression, their doubly robust
//! combination, and choice-set-based spectral co-clustering of choosers.

pub mod clustering;
pub mod dataset;
pub mod document;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod models;
pub mod propensity;
pub mod rng;
pub mod stats;
pub mod synthetic;
pub mod weights;

pub use dataset::{ChoiceDataset, ChoiceFormat, Interner, Observation, Table};
pub use document::ModelDocument;
pub use error::{Error, Result};
pub use estimation::{FitConfig, FitResult};
pub use models::{ChoiceModel, Family, ModelSpec};
pub use weights::{SampleWeights, WeightKind};
