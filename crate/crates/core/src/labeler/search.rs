//! Random hyperparameter search scored by stratified k-fold CV AUC.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::boost::{binarize, fit, BoostParams};
use super::metrics::roc_auc;
use super::model::TreeEnsembleModel;
use super::LabelError;
use crate::features::FeatureMatrix;
use crate::par;

pub const MIN_TRAINING_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub rounds: Vec<usize>,
    pub subsample: Vec<f64>,
    pub colsample: Vec<f64>,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: vec![0.05, 0.1, 0.3],
            max_depth: vec![3, 4, 6],
            rounds: vec![50, 100, 200],
            subsample: vec![0.8, 1.0],
            colsample: vec![0.5, 0.8, 1.0],
            lambda: 1.0,
            gamma: 0.0,
        }
    }
}

impl SearchSpace {
    fn grid_len(&self) -> usize {
        self.learning_rate.len()
            * self.max_depth.len()
            * self.rounds.len()
            * self.subsample.len()
            * self.colsample.len()
    }

    /// Decodes a mixed-radix grid index into a configuration.
    fn config(&self, mut k: usize) -> BoostParams {
        let mut pick = |len: usize| {
            let i = k % len;
            k /= len;
            i
        };
        let lr = pick(self.learning_rate.len());
        let depth = pick(self.max_depth.len());
        let rounds = pick(self.rounds.len());
        let sub = pick(self.subsample.len());
        let col = pick(self.colsample.len());
        BoostParams {
            learning_rate: self.learning_rate[lr],
            max_depth: self.max_depth[depth],
            rounds: self.rounds[rounds],
            subsample: self.subsample[sub],
            colsample: self.colsample[col],
            lambda: self.lambda,
            gamma: self.gamma,
            min_child_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub space: SearchSpace,
    /// Number of distinct configurations drawn.
    pub draws: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            space: SearchSpace::default(),
            draws: 20,
            folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub params: BoostParams,
    /// AUC per fold; folds lacking a class are skipped.
    pub fold_auc: Vec<f64>,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub candidates: Vec<CandidateResult>,
    pub best: usize,
    pub folds: usize,
    pub seed: u64,
}

impl SearchReport {
    pub fn best(&self) -> &CandidateResult {
        &self.candidates[self.best]
    }
}

/// Fold index of every row: each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[f64], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    for class in [0.0, 1.0] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    fold
}

fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined inputs
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn check_labels(y: &[f64]) -> Result<Vec<f64>, LabelError> {
    if y.len() < MIN_TRAINING_ROWS {
        return Err(LabelError::TooFewRows {
            got: y.len(),
            min: MIN_TRAINING_ROWS,
        });
    }
    let y = binarize(y)?;
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == y.len() {
        return Err(LabelError::DegenerateLabels);
    }
    Ok(y)
}

/// Draws configurations, scores each by mean stratified CV AUC, and refits
/// the best one (ties: earliest draw) on all rows. Every (candidate, fold)
/// fit is independent and runs in parallel; results do not depend on the
/// thread count.
pub fn train(
    x: &FeatureMatrix,
    y: &[f64],
    config: &SearchConfig,
) -> Result<(TreeEnsembleModel, SearchReport), LabelError> {
    if x.n_rows() != y.len() {
        return Err(LabelError::LengthMismatch {
            rows: x.n_rows(),
            labels: y.len(),
        });
    }
    let y = check_labels(y)?;
    let k = config.folds.max(2);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let grid = config.space.grid_len();
    let draws = config.draws.clamp(1, grid.max(1));
    let candidates: Vec<BoostParams> = index::sample(&mut rng, grid, draws)
        .into_iter()
        .map(|g| config.space.config(g))
        .collect();

    let folds = stratified_folds(&y, k, derive_seed(config.seed, u64::MAX, 0));
    let splits: Vec<(FeatureMatrix, Vec<f64>, FeatureMatrix, Vec<f64>)> = (0..k)
        .map(|f| {
            let train_idx: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
            let test_idx: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
            (
                x.select_rows(&train_idx),
                train_idx.iter().map(|&i| y[i]).collect(),
                x.select_rows(&test_idx),
                test_idx.iter().map(|&i| y[i]).collect(),
            )
        })
        .collect();

    let jobs = candidates.len() * k;
    let aucs: Vec<Result<Option<f64>, LabelError>> = par::map_range(0..jobs, |job| {
        let (c, f) = (job / k, job % k);
        let (xt, yt, xv, yv) = &splits[f];
        let seed = derive_seed(config.seed, c as u64, f as u64);
        let model = fit(xt, yt, &candidates[c], None, seed)?;
        Ok(roc_auc(&model.predict(xv)?, yv))
    });

    let mut results = Vec::with_capacity(candidates.len());
    for (c, params) in candidates.into_iter().enumerate() {
        let mut fold_auc = Vec::with_capacity(k);
        for a in &aucs[c * k..(c + 1) * k] {
            match a {
                Ok(Some(v)) => fold_auc.push(*v),
                Ok(None) => {}
                Err(e) => return Err(e.clone()),
            }
        }
        let mean_auc = if fold_auc.is_empty() {
            f64::NAN
        } else {
            fold_auc.iter().sum::<f64>() / fold_auc.len() as f64
        };
        results.push(CandidateResult {
            params,
            fold_auc,
            mean_auc,
        });
    }

    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.mean_auc > results[best].mean_auc || results[best].mean_auc.is_nan() {
            best = i;
        }
    }

    let mut model = fit(x, &y, &results[best].params, None, derive_seed(config.seed, best as u64, u64::MAX))?;
    model.metadata.seed = config.seed;
    model.metadata.cv_auc = Some(results[best].mean_auc).filter(|v| v.is_finite());
    model.metadata.cv_fold_auc = results[best].fold_auc.clone();
    let report = SearchReport {
        candidates: results,
        best,
        folds: k,
        seed: config.seed,
    };
    Ok((model, report))
}
