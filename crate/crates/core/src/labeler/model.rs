use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::boost::BoostParams;
use super::metrics::sigmoid;
use super::tree::Tree;
use super::LabelError;
use crate::features::{FeatureMatrix, SCHEMA_VERSION};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One appended batch of fine-tuning rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneRecord {
    pub rounds: usize,
    pub rows: usize,
    pub replayed_rows: usize,
    pub trees_before: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub feature_schema_version: String,
    pub hyperparameters: BoostParams,
    /// Mean held-out AUC of the selected configuration, when trained by search.
    pub cv_auc: Option<f64>,
    pub cv_fold_auc: Vec<f64>,
    pub seed: u64,
    pub training_rows: usize,
    pub training_positives: usize,
    /// SHA-256 over the training matrix and labels.
    pub data_fingerprint: String,
    /// Supplied by the caller (e.g. from `SOURCE_DATE_EPOCH`); never read
    /// from the clock, so identical inputs give identical files.
    pub trained_at: Option<String>,
    #[serde(default)]
    pub fine_tunes: Vec<FineTuneRecord>,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

/// Boosted regression trees over a named feature schema.
///
/// `P(label = 1) = sigmoid(base_score + learning_rate * sum(tree outputs))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub version: u32,
    /// Feature names in the order tree split indices refer to.
    pub schema: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    pub metadata: ModelMetadata,
}

impl TreeEnsembleModel {
    /// A model with no trees.
    pub fn empty(schema: Vec<String>, base_score: f64, params: BoostParams) -> Self {
        TreeEnsembleModel {
            version: MODEL_FORMAT_VERSION,
            schema,
            base_score,
            learning_rate: params.learning_rate,
            trees: Vec::new(),
            metadata: ModelMetadata {
                feature_schema_version: SCHEMA_VERSION.to_string(),
                hyperparameters: params,
                cv_auc: None,
                cv_fold_auc: Vec::new(),
                seed: 0,
                training_rows: 0,
                training_positives: 0,
                data_fingerprint: String::new(),
                trained_at: None,
                fine_tunes: Vec::new(),
                extra: BTreeMap::new(),
            },
        }
    }

    /// Margin for one row already in schema order.
    pub fn margin(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        self.base_score + self.learning_rate * sum
    }

    /// Column index in `x` for every schema feature, by name.
    pub fn align(&self, x: &FeatureMatrix) -> Result<Vec<usize>, LabelError> {
        let index: HashMap<&str, usize> = x
            .schema
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let missing: Vec<String> = self
            .schema
            .iter()
            .filter(|n| !index.contains_key(n.as_str()))
            .cloned()
            .collect();
        let known: std::collections::HashSet<&str> = self.schema.iter().map(String::as_str).collect();
        let extra: Vec<String> = x
            .schema
            .names
            .iter()
            .filter(|n| !known.contains(n.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(LabelError::SchemaMismatch { missing, extra });
        }
        Ok(self.schema.iter().map(|n| index[n.as_str()]).collect())
    }

    /// `x` with columns reordered into schema order.
    pub fn aligned_matrix(&self, x: &FeatureMatrix) -> Result<FeatureMatrix, LabelError> {
        let cols = self.align(x)?;
        if cols.iter().enumerate().all(|(i, &c)| i == c) {
            return Ok(x.clone());
        }
        let mut values = Vec::with_capacity(x.values.len());
        for r in 0..x.n_rows() {
            let row = x.row(r);
            values.extend(cols.iter().map(|&c| row[c]));
        }
        Ok(FeatureMatrix::new(
            crate::features::FeatureSchema {
                version: x.schema.version.clone(),
                names: self.schema.clone(),
            },
            x.user_ids.clone(),
            values,
        ))
    }

    pub fn predict_margins(&self, x: &FeatureMatrix) -> Result<Vec<f64>, LabelError> {
        let x = self.aligned_matrix(x)?;
        Ok(crate::par::map_range(0..x.n_rows(), |r| self.margin(x.row(r))))
    }

    /// Probability of the positive label for every row of `x`. Columns are
    /// matched by name, so their order in `x` does not matter.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, LabelError> {
        Ok(self.predict_margins(x)?.into_iter().map(sigmoid).collect())
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(LabelError::InvalidModel(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        if !self.base_score.is_finite() || !self.learning_rate.is_finite() {
            return Err(LabelError::InvalidModel("non-finite base score or learning rate".into()));
        }
        for (i, t) in self.trees.iter().enumerate() {
            t.validate(self.schema.len())
                .map_err(|e| LabelError::InvalidModel(format!("tree {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, LabelError> {
        let m: TreeEnsembleModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), LabelError> {
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|e| LabelError::io(path, &e))
    }

    pub fn load(path: &Path) -> Result<Self, LabelError> {
        let text = fs::read_to_string(path).map_err(|e| LabelError::io(path, &e))?;
        Self::from_json(&text)
    }
}
