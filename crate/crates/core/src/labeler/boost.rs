//! Second-order gradient boosting on the logistic loss.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::binning::BinnedMatrix;
use super::metrics::{logit, sigmoid};
use super::model::{FineTuneRecord, TreeEnsembleModel};
use super::tree::{GrowParams, Tree, TreeGrower};
use super::LabelError;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub rounds: usize,
    /// Fraction of rows sampled (without replacement) per round.
    pub subsample: f64,
    /// Fraction of features sampled per tree.
    pub colsample: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            learning_rate: 0.1,
            max_depth: 4,
            rounds: 100,
            subsample: 1.0,
            colsample: 1.0,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 0.0,
        }
    }
}

impl BoostParams {
    fn grow(&self) -> GrowParams {
        GrowParams {
            max_depth: self.max_depth,
            lambda: self.lambda,
            gamma: self.gamma,
            min_child_weight: self.min_child_weight,
        }
    }
}

/// Labels in `[0, 1]` thresholded at 0.5.
pub fn binarize(labels: &[f64]) -> Result<Vec<f64>, LabelError> {
    labels
        .iter()
        .map(|&y| {
            if (0.0..=1.0).contains(&y) {
                Ok(if y >= 0.5 { 1.0 } else { 0.0 })
            } else {
                Err(LabelError::LabelOutOfRange(y))
            }
        })
        .collect()
}

pub(crate) fn fingerprint(x: &FeatureMatrix, y: &[f64]) -> String {
    let mut h = Sha256::new();
    for n in &x.schema.names {
        h.update(n.as_bytes());
        h.update([0]);
    }
    for v in &x.values {
        h.update(v.to_bits().to_le_bytes());
    }
    for v in y {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `rounds` boosting rounds starting from `margins`, updating them in
/// place, and returns the new trees.
pub(crate) fn boost_rounds(
    x: &FeatureMatrix,
    y: &[f64],
    margins: &mut [f64],
    params: &BoostParams,
    rounds: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Tree> {
    let n = x.n_rows();
    let n_features = x.n_cols();
    let binned = BinnedMatrix::build(x);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(rounds);
    let row_count = ((params.subsample * n as f64).ceil() as usize).clamp(1, n.max(1));
    let feature_count = ((params.colsample * n_features as f64).round() as usize).clamp(1, n_features.max(1));

    for _ in 0..rounds {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = p - y[i];
            hess[i] = p * (1.0 - p);
        }
        let rows: Vec<usize> = if row_count >= n {
            (0..n).collect()
        } else {
            let mut r = index::sample(rng, n, row_count).into_vec();
            r.sort_unstable();
            r
        };
        let features: Vec<usize> = if feature_count >= n_features {
            (0..n_features).collect()
        } else {
            let mut f = index::sample(rng, n_features, feature_count).into_vec();
            f.sort_unstable();
            f
        };
        let tree = TreeGrower {
            binned: &binned,
            grad: &grad,
            hess: &hess,
            features: &features,
            params: params.grow(),
        }
        .grow(rows);
        for (i, m) in margins.iter_mut().enumerate() {
            *m += params.learning_rate * tree.predict(x.row(i));
        }
        trees.push(tree);
    }
    trees
}

fn check_rows(x: &FeatureMatrix, y: &[f64]) -> Result<(), LabelError> {
    if x.n_rows() != y.len() {
        return Err(LabelError::LengthMismatch {
            rows: x.n_rows(),
            labels: y.len(),
        });
    }
    Ok(())
}

/// Fits an ensemble with a fixed configuration. `base_score` defaults to
/// the prior log-odds of `y`.
pub fn fit(
    x: &FeatureMatrix,
    y: &[f64],
    params: &BoostParams,
    base_score: Option<f64>,
    seed: u64,
) -> Result<TreeEnsembleModel, LabelError> {
    check_rows(x, y)?;
    let y = binarize(y)?;
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    let base = base_score.unwrap_or_else(|| {
        // clamp keeps the prior finite for single-class data
        let n = y.len().max(1) as f64;
        logit((positives as f64 / n).clamp(1e-6, 1.0 - 1e-6))
    });

    let mut model = TreeEnsembleModel::empty(x.schema.names.clone(), base, *params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margins = vec![base; y.len()];
    model.trees = boost_rounds(x, &y, &mut margins, params, params.rounds, &mut rng);
    model.metadata.feature_schema_version = x.schema.version.clone();
    model.metadata.seed = seed;
    model.metadata.training_rows = y.len();
    model.metadata.training_positives = positives;
    model.metadata.data_fingerprint = fingerprint(x, &y);
    Ok(model)
}

#[derive(Debug, Clone, Default)]
pub struct FineTuneOptions<'a> {
    pub rounds: usize,
    /// Earlier labeled data to mix into the fine-tuning set.
    pub replay: Option<(&'a FeatureMatrix, &'a [f64])>,
    pub seed: u64,
}

/// Appends `rounds` trees fitted at the model's current margins on the new
/// labels (plus any replayed rows). The input model is left untouched.
pub fn fine_tune(
    model: &TreeEnsembleModel,
    x_new: &FeatureMatrix,
    y_new: &[f64],
    opts: &FineTuneOptions<'_>,
) -> Result<TreeEnsembleModel, LabelError> {
    check_rows(x_new, y_new)?;
    let mut x = model.aligned_matrix(x_new)?;
    let mut y = binarize(y_new)?;
    let new_rows = y.len();
    if let Some((rx, ry)) = opts.replay {
        check_rows(rx, ry)?;
        let rx = model.aligned_matrix(rx)?;
        x.values.extend_from_slice(&rx.values);
        x.user_ids.extend(rx.user_ids.iter().cloned());
        y.extend(binarize(ry)?);
    }
    if opts.rounds == 0 {
        return Ok(model.clone());
    }
    if y.is_empty() {
        return Err(LabelError::TooFewRows { got: 0, min: 1 });
    }

    let mut margins = model.predict_margins(&x)?;
    let mut params = model.metadata.hyperparameters;
    params.learning_rate = model.learning_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let trees = boost_rounds(&x, &y, &mut margins, &params, opts.rounds, &mut rng);

    let mut out = model.clone();
    out.metadata.fine_tunes.push(FineTuneRecord {
        rounds: opts.rounds,
        rows: new_rows,
        replayed_rows: y.len() - new_rows,
        trees_before: model.trees.len(),
    });
    out.trees.extend(trees);
    Ok(out)
}
