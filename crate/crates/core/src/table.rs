//! On-disk formats shared by the commands and the service.
//!
//! * `users.csv`: `user_id, screen_name, influence[, botness], <features...>`
//! * `cascades.csv`: one row per event
//! * `hashtags.csv`: the non-zero TF-IDF entries, one row per (user, hashtag)
//! * `profiles.jsonl`, `cascade_meta.jsonl`: display data for the explorer
//! * `run_meta.json`: counts and parameters of a `process` run

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureMatrix, FeatureSchema, HashtagVocabulary, SparseRow, SCHEMA_VERSION};
use crate::influence::{KernelParams, UserInfluence};
use crate::ingest::{Cascade, IngestStats, UserRecord};

pub const USERS_FILE: &str = "users.csv";
pub const CASCADES_FILE: &str = "cascades.csv";
pub const HASHTAGS_FILE: &str = "hashtags.csv";
pub const PROFILES_FILE: &str = "profiles.jsonl";
pub const CASCADE_META_FILE: &str = "cascade_meta.jsonl";
pub const RUN_META_FILE: &str = "run_meta.json";

/// Non-feature columns of `users.csv`.
pub const RESERVED_COLUMNS: [&str; 4] = ["user_id", "screen_name", "influence", "botness"];

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl TableError {
    fn format(path: &Path, message: impl Into<String>) -> Self {
        TableError::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        TableError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn from_csv(path: &Path, e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(source) => TableError::io(path, source),
                _ => unreachable!(),
            }
        } else {
            TableError::format(path, e.to_string())
        }
    }
}

/// Shortest text that parses back to the same `f64`; NaN is written empty.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|_| format!("{s:?} is not a number"))
}

/// The contents of `users.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct UsersTable {
    pub screen_names: Vec<String>,
    /// NaN for users outside every cascade.
    pub influence: Vec<f64>,
    pub botness: Option<Vec<f64>>,
    /// Feature columns; row ids are the user ids.
    pub features: FeatureMatrix,
}

impl UsersTable {
    pub fn len(&self) -> usize {
        self.features.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn user_ids(&self) -> &[String] {
        &self.features.user_ids
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = vec!["user_id", "screen_name", "influence"];
        if self.botness.is_some() {
            header.push("botness");
        }
        header.extend(self.features.schema.names.iter().map(String::as_str));
        w.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            rec.clear();
            rec.push(self.features.user_ids[i].clone());
            rec.push(self.screen_names[i].clone());
            rec.push(fmt_f64(self.influence[i]));
            if let Some(b) = &self.botness {
                rec.push(fmt_f64(b[i]));
            }
            rec.extend(self.features.row(i).iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R, path: &Path) -> Result<Self, TableError> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers().map_err(|e| TableError::from_csv(path, e))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let Some(id_col) = col("user_id") else {
            return Err(TableError::format(path, "missing user_id column"));
        };
        let name_col = col("screen_name");
        let infl_col = col("influence");
        let bot_col = col("botness");
        let feature_cols: Vec<usize> = (0..headers.len())
            .filter(|&i| !RESERVED_COLUMNS.contains(&&headers[i]))
            .collect();
        let names: Vec<String> = feature_cols.iter().map(|&i| headers[i].to_string()).collect();

        let mut ids = Vec::new();
        let mut screen_names = Vec::new();
        let mut influence = Vec::new();
        let mut botness = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| TableError::from_csv(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |i: usize| {
                parse_f64(&rec[i]).map_err(|m| TableError::format(path, format!("line {line}: {m}")))
            };
            ids.push(rec[id_col].to_string());
            screen_names.push(name_col.map_or(String::new(), |c| rec[c].to_string()));
            influence.push(match infl_col {
                Some(c) => num(c)?,
                None => f64::NAN,
            });
            if let Some(c) = bot_col {
                botness.push(num(c)?);
            }
            for &c in &feature_cols {
                values.push(num(c)?);
            }
        }
        let schema = FeatureSchema {
            version: SCHEMA_VERSION.to_string(),
            names,
        };
        Ok(UsersTable {
            screen_names,
            influence,
            botness: bot_col.map(|_| botness),
            features: FeatureMatrix::new(schema, ids, values),
        })
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        let f = File::open(path).map_err(|e| TableError::io(path, e))?;
        Self::read_from(BufReader::new(f), path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeRow {
    pub cascade_id: String,
    pub tweet_id: String,
    pub user_id: String,
    pub rel_time: f64,
    pub mark: u64,
    /// Index of the most likely parent within the cascade; empty for the root.
    pub expected_parent: Option<usize>,
    /// Tweet influence of this event.
    pub influence: f64,
}

pub fn cascade_rows(
    cascades: &[Cascade],
    influence: &[crate::influence::CascadeInfluence],
) -> Vec<CascadeRow> {
    let mut rows = Vec::new();
    for (c, inf) in cascades.iter().zip(influence) {
        for (i, e) in c.events.iter().enumerate() {
            rows.push(CascadeRow {
                cascade_id: c.cascade_id.clone(),
                tweet_id: e.tweet_id.clone(),
                user_id: e.user_id.clone(),
                rel_time: e.rel_time,
                mark: e.mark,
                expected_parent: inf.expected_parent[i],
                influence: inf.tweet_influence[i],
            });
        }
    }
    rows
}

/// Header is written even when `rows` is empty.
fn write_serde_rows<W: Write, T: Serialize>(out: W, header: &[&str], rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_serde_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, TableError> {
    let f = File::open(path).map_err(|e| TableError::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(f));
    rdr.deserialize()
        .map(|r| r.map_err(|e| TableError::from_csv(path, e)))
        .collect()
}

pub const CASCADE_COLUMNS: [&str; 7] = [
    "cascade_id",
    "tweet_id",
    "user_id",
    "rel_time",
    "mark",
    "expected_parent",
    "influence",
];

pub fn write_cascade_rows<W: Write>(out: W, rows: &[CascadeRow]) -> Result<(), csv::Error> {
    write_serde_rows(out, &CASCADE_COLUMNS, rows)
}

pub fn load_cascade_rows(path: &Path) -> Result<Vec<CascadeRow>, TableError> {
    read_serde_rows(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashtagRow {
    pub user_id: String,
    pub hashtag: String,
    pub count: u32,
    pub tfidf: f64,
}

pub const HASHTAG_COLUMNS: [&str; 4] = ["user_id", "hashtag", "count", "tfidf"];

pub fn hashtag_rows(users: &[UserRecord], vocab: &HashtagVocabulary, tfidf: &[SparseRow]) -> Vec<HashtagRow> {
    let mut rows = Vec::new();
    for (u, row) in users.iter().zip(tfidf) {
        for &(k, score) in row {
            let tag = &vocab.entries[k].tag;
            rows.push(HashtagRow {
                user_id: u.user_id.clone(),
                hashtag: tag.clone(),
                count: u.hashtags[tag],
                tfidf: score,
            });
        }
    }
    rows
}

pub fn write_hashtag_rows<W: Write>(out: W, rows: &[HashtagRow]) -> Result<(), csv::Error> {
    write_serde_rows(out, &HASHTAG_COLUMNS, rows)
}

pub fn load_hashtag_rows(path: &Path) -> Result<Vec<HashtagRow>, TableError> {
    read_serde_rows(path)
}

/// Display data for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub screen_name: String,
    pub location: String,
    pub profile_image_url: String,
    pub followers_count: u64,
    pub friends_count: u64,
    pub statuses_count: u64,
    pub tweets_in_dump: u32,
    pub hashtags: Vec<(String, u32)>,
    pub top_hashtag: Option<String>,
    pub cascade_ids: Vec<String>,
    pub influence: Option<UserInfluence>,
}

impl UserProfile {
    pub fn from_record(u: &UserRecord, influence: Option<UserInfluence>) -> Self {
        let p = &u.profile;
        UserProfile {
            user_id: u.user_id.clone(),
            screen_name: p.screen_name.clone(),
            location: p.location.clone(),
            profile_image_url: p.profile_image_url.clone(),
            followers_count: p.followers_count,
            friends_count: p.friends_count,
            statuses_count: p.statuses_count,
            tweets_in_dump: u.tweets_in_dump,
            hashtags: u.hashtags.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            top_hashtag: u.top_hashtag().map(str::to_string),
            cascade_ids: u.cascade_ids.iter().cloned().collect(),
            influence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeMeta {
    pub cascade_id: String,
    pub root_text: String,
    pub root_created_at: i64,
    pub orphan_of: Option<String>,
    pub events: usize,
}

impl CascadeMeta {
    pub fn from_cascade(c: &Cascade) -> Self {
        CascadeMeta {
            cascade_id: c.cascade_id.clone(),
            root_text: c.root_text.clone(),
            root_created_at: c.root_created_at,
            orphan_of: c.orphan_of.clone(),
            events: c.len(),
        }
    }
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, TableError> {
    let f = File::open(path).map_err(|e| TableError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| TableError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| TableError::format(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Summary of a `process` run. Holds no timings or wall-clock times so that
/// identical inputs give an identical file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub inputs: Vec<String>,
    pub stats: IngestStats,
    pub tweets: usize,
    pub cascades: usize,
    pub orphan_cascades: usize,
    pub users: usize,
    pub kernel: KernelParams,
    pub vocab_size: usize,
    pub hashtag_vocabulary: usize,
    pub embeddings: Option<String>,
    pub embedding_dim: usize,
    pub feature_schema_version: String,
    pub features: usize,
    pub model: Option<String>,
    /// Latest tweet time in the dump, used as "now" for account age.
    pub reference_time: i64,
}

/// Writes files into a directory all-or-nothing: each file goes to a hidden
/// temporary first and is renamed into place by [`commit`](Self::commit).
/// Dropping without committing removes the temporaries.
pub struct StagedWrites {
    dir: PathBuf,
    staged: Vec<(PathBuf, PathBuf)>,
    committed: bool,
}

impl StagedWrites {
    pub fn new(dir: &Path) -> Result<Self, TableError> {
        fs::create_dir_all(dir).map_err(|e| TableError::io(dir, e))?;
        Ok(StagedWrites {
            dir: dir.to_path_buf(),
            staged: Vec::new(),
            committed: false,
        })
    }

    /// Stages `name` with contents produced by `write`.
    pub fn write<F>(&mut self, name: &str, write: F) -> Result<(), TableError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), TableError>,
    {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.{}.tmp", std::process::id()));
        let f = File::create(&tmp).map_err(|e| TableError::io(&tmp, e))?;
        self.staged.push((tmp.clone(), target));
        let mut w = BufWriter::new(f);
        write(&mut w)?;
        let f = w.into_inner().map_err(|e| TableError::io(&tmp, e.into_error()))?;
        f.sync_all().map_err(|e| TableError::io(&tmp, e))?;
        Ok(())
    }

    pub fn write_csv<F>(&mut self, name: &str, write: F) -> Result<(), TableError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), csv::Error>,
    {
        let path = self.dir.join(name);
        self.write(name, |w| write(w).map_err(|e| TableError::from_csv(&path, e)))
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), TableError> {
        let path = self.dir.join(name);
        self.write(name, |w| w.write_all(bytes).map_err(|e| TableError::io(&path, e)))
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>, TableError> {
        let mut done = Vec::new();
        for (tmp, target) in &self.staged {
            fs::rename(tmp, target).map_err(|e| TableError::io(target, e))?;
            done.push(target.clone());
        }
        self.committed = true;
        Ok(done)
    }
}

impl Drop for StagedWrites {
    fn drop(&mut self) {
        if !self.committed {
            for (tmp, _) in &self.staged {
                let _ = fs::remove_file(tmp);
            }
        }
    }
}
