//! The `process`, `train` and `label` commands as library calls.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{assemble_features, EmbeddingTable, FeatureError, FeatureMatrix, DEFAULT_VOCAB_SIZE};
use crate::influence::{influence_report, InfluenceError, KernelParams};
use crate::ingest::{aggregate_users, build_cascades, Corpus, IngestError};
use crate::labeler::{
    fine_tune, load_annotations, train, FineTuneOptions, LabelError, SearchConfig, SearchReport,
    TreeEnsembleModel,
};
use crate::table::{
    cascade_rows, hashtag_rows, write_cascade_rows, write_hashtag_rows, write_jsonl, CascadeMeta,
    RunMeta, StagedWrites, TableError, UserProfile, UsersTable, CASCADES_FILE, CASCADE_META_FILE,
    HASHTAGS_FILE, PROFILES_FILE, RUN_META_FILE, USERS_FILE,
};

pub const MODEL_FILE: &str = "model.json";
pub const CV_REPORT_FILE: &str = "cv_report.json";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const DEFAULT_FINE_TUNE_ROUNDS: usize = 10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("{0}")]
    Invalid(String),
}

impl PipelineError {
    /// 0 success, 1 I/O, 2 validation or schema, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Ingest(IngestError::Io { .. }) => 1,
            PipelineError::Table(TableError::Io { .. }) => 1,
            PipelineError::Features(FeatureError::Io { .. }) => 1,
            PipelineError::Label(LabelError::Io { .. }) => 1,
            PipelineError::Table(TableError::Format { .. })
            | PipelineError::Features(_)
            | PipelineError::Influence(_)
            | PipelineError::Label(_)
            | PipelineError::Invalid(_) => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProcessConfig {
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub kernel: KernelParams,
    pub embeddings: Option<PathBuf>,
    pub vocab_size: usize,
    /// Adds a `botness` column when set.
    pub model: Option<PathBuf>,
}

impl ProcessConfig {
    pub fn new(inputs: Vec<PathBuf>, out_dir: PathBuf) -> Self {
        ProcessConfig {
            inputs,
            out_dir,
            kernel: KernelParams::default(),
            embeddings: None,
            vocab_size: DEFAULT_VOCAB_SIZE,
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSummary {
    pub meta: RunMeta,
    pub written: Vec<PathBuf>,
}

fn display_paths(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

/// Ingests the dumps, computes influence and features and writes all tables.
/// Nothing is left in `out_dir` on failure.
pub fn process(cfg: &ProcessConfig) -> Result<ProcessSummary, PipelineError> {
    cfg.kernel.validate()?;
    for p in &cfg.inputs {
        if !p.is_file() {
            return Err(IngestError::Io {
                path: p.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            }
            .into());
        }
    }
    let model = cfg.model.as_deref().map(TreeEnsembleModel::load).transpose()?;
    let table = cfg.embeddings.as_deref().map(EmbeddingTable::load).transpose()?;
    if let Some(t) = &table {
        info!("loaded {} embeddings of dimension {}", t.len(), t.dim());
    }

    let start = Instant::now();
    let corpus = Corpus::load(&cfg.inputs)?;
    let stats = corpus.stats;
    info!(
        "read {} lines: {} tweets, {} duplicates, {} skipped ({:.2?})",
        stats.lines,
        stats.tweets,
        stats.duplicates,
        stats.skipped(),
        start.elapsed()
    );
    let cascades = build_cascades(&corpus.tweets);
    let users = aggregate_users(&corpus.tweets, &cascades);
    let now = corpus.reference_time();

    let t = Instant::now();
    let report = influence_report(&cascades, &cfg.kernel)?;
    info!("influence for {} cascades ({:.2?})", cascades.len(), t.elapsed());

    let t = Instant::now();
    let features = assemble_features(&users, table.as_ref(), cfg.vocab_size, now);
    info!(
        "{} features for {} users ({:.2?})",
        features.matrix.n_cols(),
        users.len(),
        t.elapsed()
    );

    let botness = model.as_ref().map(|m| m.predict(&features.matrix)).transpose()?;
    let users_table = UsersTable {
        screen_names: users.iter().map(|u| u.profile.screen_name.clone()).collect(),
        influence: users
            .iter()
            .map(|u| report.users.get(&u.user_id).map_or(f64::NAN, |i| i.influence))
            .collect(),
        botness,
        features: features.matrix,
    };
    let profiles: Vec<UserProfile> = users
        .iter()
        .map(|u| UserProfile::from_record(u, report.users.get(&u.user_id).copied()))
        .collect();
    let metas: Vec<CascadeMeta> = cascades.iter().map(CascadeMeta::from_cascade).collect();
    let event_rows = cascade_rows(&cascades, &report.cascades);
    let tag_rows = hashtag_rows(&users, &features.vocabulary, &features.tfidf);

    let meta = RunMeta {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: display_paths(&cfg.inputs),
        stats,
        tweets: corpus.tweets.len(),
        cascades: cascades.len(),
        orphan_cascades: cascades.iter().filter(|c| c.orphan_of.is_some()).count(),
        users: users.len(),
        kernel: cfg.kernel,
        vocab_size: cfg.vocab_size,
        hashtag_vocabulary: features.vocabulary.len(),
        embeddings: cfg.embeddings.as_ref().map(|p| p.display().to_string()),
        embedding_dim: table.as_ref().map_or(0, EmbeddingTable::dim),
        feature_schema_version: users_table.features.schema.version.clone(),
        features: users_table.features.n_cols(),
        model: cfg.model.as_ref().map(|p| p.display().to_string()),
        reference_time: now,
    };

    let mut staged = StagedWrites::new(&cfg.out_dir)?;
    staged.write_csv(USERS_FILE, |w| users_table.write_to(w))?;
    staged.write_csv(CASCADES_FILE, |w| write_cascade_rows(w, &event_rows))?;
    staged.write_csv(HASHTAGS_FILE, |w| write_hashtag_rows(w, &tag_rows))?;
    let jsonl_err = |name: &str, e: std::io::Error| TableError::Io {
        path: cfg.out_dir.join(name).display().to_string(),
        source: e,
    };
    staged.write(PROFILES_FILE, |w| write_jsonl(w, &profiles).map_err(|e| jsonl_err(PROFILES_FILE, e)))?;
    staged.write(CASCADE_META_FILE, |w| {
        write_jsonl(w, &metas).map_err(|e| jsonl_err(CASCADE_META_FILE, e))
    })?;
    staged.write_bytes(RUN_META_FILE, &json_bytes(&meta))?;
    let written = staged.commit()?;
    info!("processed {} tweets in {:.2?}", meta.tweets, start.elapsed());
    Ok(ProcessSummary { meta, written })
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

/// Labeled rows: the feature rows of annotated users and their labels.
/// Unlabeled annotations are ignored; annotated users missing from the
/// table are skipped with a warning.
pub fn labeled_rows(table: &FeatureMatrix, annotations: &Path) -> Result<(FeatureMatrix, Vec<f64>), PipelineError> {
    let records = load_annotations(annotations)?;
    let index: HashMap<&str, usize> = table
        .user_ids
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    // later annotations of the same user override earlier ones
    let mut latest: Vec<(usize, f64)> = Vec::new();
    let mut pos: HashMap<usize, usize> = HashMap::new();
    let mut unknown = 0;
    for r in &records {
        let Some(label) = r.label else { continue };
        match index.get(r.user_id.as_str()) {
            Some(&row) => match pos.get(&row) {
                Some(&k) => latest[k].1 = label,
                None => {
                    pos.insert(row, latest.len());
                    latest.push((row, label));
                }
            },
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        warn!("{unknown} annotated users are not in the feature table");
    }
    let rows: Vec<usize> = latest.iter().map(|&(r, _)| r).collect();
    Ok((table.select_rows(&rows), latest.iter().map(|&(_, y)| y).collect()))
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// A `users.csv` produced by `process`.
    pub features: PathBuf,
    pub annotations: PathBuf,
    /// Where the model is written; the CV report goes next to it.
    pub model_out: PathBuf,
    /// Fine-tune this model instead of searching from scratch.
    pub fine_tune: Option<PathBuf>,
    pub fine_tune_rounds: usize,
    /// Earlier annotations replayed during fine-tuning.
    pub replay: Option<PathBuf>,
    pub search: SearchConfig,
    /// Stored verbatim in the model metadata.
    pub trained_at: Option<String>,
}

impl TrainConfig {
    pub fn new(features: PathBuf, annotations: PathBuf, model_out: PathBuf) -> Self {
        TrainConfig {
            features,
            annotations,
            model_out,
            fine_tune: None,
            fine_tune_rounds: DEFAULT_FINE_TUNE_ROUNDS,
            replay: None,
            search: SearchConfig::default(),
            trained_at: None,
        }
    }

    pub fn report_path(&self) -> PathBuf {
        self.model_out.with_file_name(CV_REPORT_FILE)
    }
}

/// Written next to the model by [`train_command`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: String,
    pub labeled_rows: usize,
    pub positives: usize,
    pub trees: usize,
    pub cv_auc: Option<f64>,
    pub search: Option<SearchReport>,
}

pub fn train_command(cfg: &TrainConfig) -> Result<(TreeEnsembleModel, TrainReport), PipelineError> {
    let table = UsersTable::load(&cfg.features)?;
    let (x, y) = labeled_rows(&table.features, &cfg.annotations)?;
    let positives = y.iter().filter(|&&v| v >= 0.5).count();
    info!("{} labeled rows, {} positive", y.len(), positives);

    let (mut model, report) = match &cfg.fine_tune {
        Some(base_path) => {
            let base = TreeEnsembleModel::load(base_path)?;
            let replay = cfg
                .replay
                .as_deref()
                .map(|p| labeled_rows(&table.features, p))
                .transpose()?;
            let opts = FineTuneOptions {
                rounds: cfg.fine_tune_rounds,
                replay: replay.as_ref().map(|(rx, ry)| (rx, ry.as_slice())),
                seed: cfg.search.seed,
            };
            let model = fine_tune(&base, &x, &y, &opts)?;
            let report = TrainReport {
                mode: "fine-tune".into(),
                labeled_rows: y.len(),
                positives,
                trees: model.trees.len(),
                cv_auc: model.metadata.cv_auc,
                search: None,
            };
            (model, report)
        }
        None => {
            let (model, search) = train(&x, &y, &cfg.search)?;
            info!(
                "best of {} configurations: mean CV AUC {:.4}",
                search.candidates.len(),
                search.best().mean_auc
            );
            let report = TrainReport {
                mode: "search".into(),
                labeled_rows: y.len(),
                positives,
                trees: model.trees.len(),
                cv_auc: model.metadata.cv_auc,
                search: Some(search),
            };
            (model, report)
        }
    };
    if cfg.trained_at.is_some() {
        model.metadata.trained_at = cfg.trained_at.clone();
    }

    let dir = match cfg.model_out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = cfg
        .model_out
        .file_name()
        .ok_or_else(|| PipelineError::Invalid(format!("bad model path {}", cfg.model_out.display())))?
        .to_string_lossy()
        .into_owned();
    let mut staged = StagedWrites::new(&dir)?;
    let mut text = model.to_json().into_bytes();
    text.push(b'\n');
    staged.write_bytes(&name, &text)?;
    staged.write_bytes(CV_REPORT_FILE, &json_bytes(&report))?;
    staged.commit()?;
    Ok((model, report))
}

#[derive(Debug, Clone)]
pub struct LabelConfig {
    pub features: PathBuf,
    pub model: PathBuf,
    /// Directory receiving the labeled `users.csv`.
    pub out_dir: PathBuf,
}

/// Rewrites `users.csv` with a `botness` column from `model`.
pub fn label_command(cfg: &LabelConfig) -> Result<UsersTable, PipelineError> {
    let model = TreeEnsembleModel::load(&cfg.model)?;
    let mut table = UsersTable::load(&cfg.features)?;
    table.botness = Some(model.predict(&table.features)?);
    let mut staged = StagedWrites::new(&cfg.out_dir)?;
    staged.write_csv(USERS_FILE, |w| table.write_to(w))?;
    staged.commit()?;
    Ok(table)
}

/// Appends one annotation row, creating the file with a header if needed,
/// and syncs it to disk.
pub fn append_annotation(path: &Path, user_id: &str, screen_name: &str, label: f64) -> Result<(), TableError> {
    let io = |e| TableError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        if fresh {
            w.write_record(crate::labeler::annotations::ANNOTATION_HEADER)
                .expect("in-memory write");
        }
        w.write_record([user_id, screen_name, &label.to_string()])
            .expect("in-memory write");
        w.flush().expect("in-memory write");
    }
    f.write_all(&buf).map_err(io)?;
    f.sync_all().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeler::AnnotationRecord;

    #[test]
    fn exit_codes_follow_error_kind() {
        let io = PipelineError::Label(LabelError::Io {
            path: "m".into(),
            message: "gone".into(),
        });
        assert_eq!(io.exit_code(), 1);
        assert_eq!(PipelineError::Label(LabelError::DegenerateLabels).exit_code(), 2);
        assert_eq!(PipelineError::Invalid("x".into()).exit_code(), 2);
    }

    #[test]
    fn appended_annotations_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(ANNOTATIONS_FILE);
        append_annotation(&p, "7", "sev,en", 0.0).unwrap();
        append_annotation(&p, "8", "eight", 1.0).unwrap();
        let got = load_annotations(&p).unwrap();
        assert_eq!(
            got,
            vec![
                AnnotationRecord {
                    user_id: "7".into(),
                    screen_name: "sev,en".into(),
                    label: Some(0.0)
                },
                AnnotationRecord {
                    user_id: "8".into(),
                    screen_name: "eight".into(),
                    label: Some(1.0)
                },
            ]
        );
    }

    #[test]
    fn latest_annotation_wins() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(ANNOTATIONS_FILE);
        std::fs::write(&p, "user_id,screen_name,label\n1,a,1\n2,b,\n1,a,0\nzz,q,1\n").unwrap();
        let x = FeatureMatrix::new(
            crate::features::FeatureSchema::new(vec!["f".into()]),
            vec!["1".into(), "2".into()],
            vec![10.0, 20.0],
        );
        let (sub, y) = labeled_rows(&x, &p).unwrap();
        assert_eq!(sub.user_ids, vec!["1"]);
        assert_eq!(y, vec![0.0]);
    }
}
