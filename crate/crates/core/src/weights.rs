use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Uniform,
    IpwRaw,
    IpwMeanNormalized,
}

/// Nonnegative per-observation weights with their provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    values: Vec<f64>,
    kind: WeightKind,
    clip_quantile: Option<f64>,
}

impl SampleWeights {
    pub fn uniform(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
            kind: WeightKind::Uniform,
            clip_quantile: None,
        }
    }

    pub fn new(values: Vec<f64>, kind: WeightKind) -> Result<Self> {
        if let Some(k) = values.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::contract(format!(
                "weight {k} is {} (weights must be finite and nonnegative)",
                values[k]
            )));
        }
        let mut w = Self {
            values,
            kind,
            clip_quantile: None,
        };
        if kind == WeightKind::IpwMeanNormalized {
            w = w.mean_normalized()?;
        }
        Ok(w)
    }

    pub(crate) fn with_clip_quantile(mut self, q: Option<f64>) -> Self {
        self.clip_quantile = q;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn clip_quantile(&self) -> Option<f64> {
        self.clip_quantile
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.total() / self.values.len().max(1) as f64
    }

    /// Rescales to mean 1. Uniform weights stay uniform.
    pub fn mean_normalized(&self) -> Result<Self> {
        let mean = self.mean();
        if !(mean > 0.0) {
            return Err(Error::contract("cannot normalize weights with zero total"));
        }
        let kind = match self.kind {
            WeightKind::Uniform => WeightKind::Uniform,
            _ => WeightKind::IpwMeanNormalized,
        };
        Ok(Self {
            values: self.values.iter().map(|w| w / mean).collect(),
            kind,
            clip_quantile: self.clip_quantile,
        })
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.values.len() != n {
            return Err(Error::dims("weight vector", n, self.values.len()));
        }
        Ok(())
    }

    /// Writes `obs_index,weight` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["obs_index", "weight"])?;
        for (k, w) in self.values.iter().enumerate() {
            wtr.write_record([k.to_string(), format!("{w:e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads `obs_index,weight` rows; indices must cover `0..n` exactly once.
    pub fn read_csv(path: impl AsRef<Path>, kind: WeightKind) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        let mut pairs = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let parse = |s: &str| s.parse::<f64>().ok();
            let idx = record.get(0).and_then(|s| s.parse::<usize>().ok());
            let w = record.get(1).and_then(parse);
            match (idx, w) {
                (Some(i), Some(w)) => pairs.push((i, w)),
                _ => {
                    return Err(Error::Parse {
                        line,
                        message: "expected `obs_index,weight`".into(),
                    })
                }
            }
        }
        let mut values = vec![f64::NAN; pairs.len()];
        for (i, w) in pairs {
            if i >= values.len() || !values[i].is_nan() {
                return Err(Error::contract(format!("weight index {i} out of range or repeated")));
            }
            values[i] = w;
        }
        Self::new(values, kind)
    }
}
