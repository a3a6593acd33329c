use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use log::info;

use cascade_spotter_core::labeler::{fine_tune, FineTuneOptions, TreeEnsembleModel};
use cascade_spotter_core::pipeline::{append_annotation, labeled_rows, ANNOTATIONS_FILE, MODEL_FILE};
use cascade_spotter_core::table::{
    load_cascade_rows, load_jsonl, CascadeMeta, CascadeRow, UserProfile, UsersTable, CASCADES_FILE,
    CASCADE_META_FILE, PROFILES_FILE, USERS_FILE,
};

use crate::ServiceError;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Output directory of a `process` run.
    pub data_dir: PathBuf,
    /// Defaults to `model.json` in `data_dir` when that file exists.
    pub model: Option<PathBuf>,
    /// Defaults to `annotations.csv` in `data_dir`.
    pub annotations: Option<PathBuf>,
    /// Built explorer assets served at `/`.
    pub ui_dir: Option<PathBuf>,
    pub fine_tune_rounds: usize,
    pub seed: u64,
}

impl ServiceConfig {
    pub fn new(data_dir: PathBuf) -> Self {
        ServiceConfig {
            data_dir,
            model: None,
            annotations: None,
            ui_dir: None,
            fine_tune_rounds: cascade_spotter_core::pipeline::DEFAULT_FINE_TUNE_ROUNDS,
            seed: 0,
        }
    }
}

pub struct CascadeData {
    pub meta: CascadeMeta,
    pub events: Vec<CascadeRow>,
}

/// Everything read from the data directory; never modified after loading.
pub struct Dataset {
    pub table: UsersTable,
    pub profiles: Vec<Option<UserProfile>>,
    pub user_index: HashMap<String, usize>,
    pub percentile: Vec<f64>,
    pub cascades: Vec<CascadeData>,
    pub cascade_index: HashMap<String, usize>,
}

/// Mean-rank percentile: `100 * (#{v < x} + #{v == x} / 2) / N`. NaN ranks as 0.
pub fn percentiles(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let v: Vec<f64> = values.iter().map(|x| if x.is_nan() { 0.0 } else { *x }).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let tied = (j - i + 1) as f64;
        let pct = 100.0 * (i as f64 + 0.5 * tied) / n as f64;
        for &k in &order[i..=j] {
            out[k] = pct;
        }
        i = j + 1;
    }
    out
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, ServiceError> {
        let table = UsersTable::load(&dir.join(USERS_FILE))?;
        let user_index: HashMap<String, usize> = table
            .user_ids()
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();

        let mut profiles: Vec<Option<UserProfile>> = vec![None; table.len()];
        let profile_path = dir.join(PROFILES_FILE);
        if profile_path.exists() {
            for p in load_jsonl::<UserProfile>(&profile_path)? {
                if let Some(&i) = user_index.get(&p.user_id) {
                    profiles[i] = Some(p);
                }
            }
        }

        let mut cascades: Vec<CascadeData> = Vec::new();
        let mut cascade_index = HashMap::new();
        let meta_path = dir.join(CASCADE_META_FILE);
        if meta_path.exists() {
            for meta in load_jsonl::<CascadeMeta>(&meta_path)? {
                cascade_index.insert(meta.cascade_id.clone(), cascades.len());
                cascades.push(CascadeData {
                    meta,
                    events: Vec::new(),
                });
            }
        }
        let rows_path = dir.join(CASCADES_FILE);
        if rows_path.exists() {
            for row in load_cascade_rows(&rows_path)? {
                let k = *cascade_index.entry(row.cascade_id.clone()).or_insert_with(|| {
                    cascades.push(CascadeData {
                        meta: CascadeMeta {
                            cascade_id: row.cascade_id.clone(),
                            root_text: String::new(),
                            root_created_at: 0,
                            orphan_of: None,
                            events: 0,
                        },
                        events: Vec::new(),
                    });
                    cascades.len() - 1
                });
                cascades[k].events.push(row);
            }
        }

        let percentile = percentiles(&table.influence);
        Ok(Dataset {
            table,
            profiles,
            user_index,
            percentile,
            cascades,
            cascade_index,
        })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn screen_name(&self, i: usize) -> &str {
        &self.table.screen_names[i]
    }
}

/// Model and scores that are swapped as a unit.
pub struct Snapshot {
    pub version: u64,
    pub model: Option<Arc<TreeEnsembleModel>>,
    pub botness: Vec<f64>,
}

pub struct AppState {
    pub data: Dataset,
    pub config: ServiceConfig,
    annotations_path: PathBuf,
    base_model: Option<Arc<TreeEnsembleModel>>,
    snapshot: RwLock<Arc<Snapshot>>,
    annotation_lock: Mutex<()>,
    retraining: AtomicBool,
}

/// Clears the single-flight flag when dropped.
pub struct RetrainGuard<'a>(&'a AtomicBool);

impl Drop for RetrainGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

pub struct RetrainOutcome {
    pub version: u64,
    pub annotations_used: usize,
    pub trees: usize,
}

impl AppState {
    pub fn load(config: ServiceConfig) -> Result<Self, ServiceError> {
        let data = Dataset::load(&config.data_dir)?;
        let default_model = config.data_dir.join(MODEL_FILE);
        let model_path = config
            .model
            .clone()
            .or_else(|| default_model.exists().then_some(default_model));
        let model = model_path
            .map(|p| TreeEnsembleModel::load(&p))
            .transpose()?
            .map(Arc::new);
        let botness = match (&model, &data.table.botness) {
            (Some(m), _) => m.predict(&data.table.features)?,
            (None, Some(b)) => b.clone(),
            // what a model without trees would predict
            (None, None) => vec![0.5; data.len()],
        };
        let annotations_path = config
            .annotations
            .clone()
            .unwrap_or_else(|| config.data_dir.join(ANNOTATIONS_FILE));
        Ok(AppState {
            data,
            config,
            annotations_path,
            base_model: model.clone(),
            snapshot: RwLock::new(Arc::new(Snapshot {
                version: 1,
                model,
                botness,
            })),
            annotation_lock: Mutex::new(()),
            retraining: AtomicBool::new(false),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn annotations_path(&self) -> &Path {
        &self.annotations_path
    }

    /// Appends and syncs one annotation; returns once it is on disk.
    pub fn annotate(&self, user: usize, label: f64) -> Result<(), ServiceError> {
        let _g = self.annotation_lock.lock().expect("annotation lock");
        append_annotation(
            &self.annotations_path,
            &self.data.table.user_ids()[user],
            self.data.screen_name(user),
            label,
        )?;
        Ok(())
    }

    /// `None` when a retrain is already running.
    pub fn try_begin_retrain(&self) -> Option<RetrainGuard<'_>> {
        self.retraining
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| RetrainGuard(&self.retraining))
    }

    /// Fine-tunes the startup model on every annotation so far and swaps in
    /// the new model and scores.
    pub fn retrain(&self, rounds: usize) -> Result<RetrainOutcome, ServiceError> {
        let base = self.base_model.clone().ok_or(ServiceError::NoModel)?;
        let (x, y) = {
            let _g = self.annotation_lock.lock().expect("annotation lock");
            if !self.annotations_path.exists() {
                return Err(ServiceError::NoAnnotations);
            }
            labeled_rows(&self.data.table.features, &self.annotations_path)?
        };
        if y.is_empty() {
            return Err(ServiceError::NoAnnotations);
        }
        let opts = FineTuneOptions {
            rounds,
            replay: None,
            seed: self.config.seed,
        };
        let model = fine_tune(&base, &x, &y, &opts)?;
        let botness = model.predict(&self.data.table.features)?;
        let trees = model.trees.len();
        let mut slot = self.snapshot.write().expect("snapshot lock");
        let version = slot.version + 1;
        *slot = Arc::new(Snapshot {
            version,
            model: Some(Arc::new(model)),
            botness,
        });
        info!("retrained on {} annotations: {trees} trees, scores version {version}", y.len());
        Ok(RetrainOutcome {
            version,
            annotations_used: y.len(),
            trees,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_rank_percentiles() {
        assert_eq!(percentiles(&[]), Vec::<f64>::new());
        assert_eq!(percentiles(&[5.0]), vec![50.0]);
        assert_eq!(percentiles(&[1.0, 2.0, 3.0, 4.0]), vec![12.5, 37.5, 62.5, 87.5]);
        // ties share the mean rank
        assert_eq!(percentiles(&[2.0, 1.0, 2.0, 2.0]), vec![62.5, 12.5, 62.5, 62.5]);
        assert_eq!(percentiles(&[f64::NAN, 1.0]), vec![25.0, 75.0]);
    }
}
