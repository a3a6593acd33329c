//! Per-user feature vectors.
//!
//! A vector is the concatenation of four blocks, always in this order:
//!
//! 1. profile and activity statistics ([`USER_STAT_NAMES`]);
//! 2. mean word embedding of the profile description;
//! 3. content embedding: mean over the user's tweets of each tweet's mean
//!    word embedding;
//! 4. hashtag TF-IDF over the dataset's most frequent hashtags.
//!
//! Blocks 2 and 3 are absent when no embedding table is supplied.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::UserRecord;
use crate::par;

/// Version tag of the feature layout; stored with every trained model.
pub const SCHEMA_VERSION: &str = "cascade-spotter-features/1";

pub const DEFAULT_VOCAB_SIZE: usize = 1000;

pub const DESC_PREFIX: &str = "desc_emb_";
pub const CONTENT_PREFIX: &str = "content_emb_";
pub const HASHTAG_PREFIX: &str = "hashtag:";

pub const USER_STAT_NAMES: [&str; 18] = [
    "followers_count",
    "friends_count",
    "statuses_count",
    "favourites_count",
    "listed_count",
    "verified",
    "default_profile",
    "default_profile_image",
    "account_age_days",
    "follower_friend_ratio",
    "statuses_per_day",
    "retweet_fraction",
    "hashtags_per_tweet",
    "mentions_per_tweet",
    "urls_per_tweet",
    "screen_name_length",
    "screen_name_digits",
    "description_length",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot read embeddings {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("embedding file header must be \"<count> <dimension>\", got {0:?}")]
    BadHeader(String),
    #[error("embedding table has dimension {table} but the model schema expects {model}")]
    DimensionMismatch { table: usize, model: usize },
    #[error("column {name} has {got} values, expected {expected}")]
    ColumnLength {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("duplicate feature name {0}")]
    DuplicateName(String),
}

/// Word vectors keyed by lowercased word.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
    /// Lines dropped while loading.
    pub skipped_lines: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Adds a word; the first vector inserted for a (lowercased) word wins.
    pub fn insert(&mut self, word: &str, vector: Vec<f32>) {
        assert_eq!(vector.len(), self.dim, "vector dimension mismatch");
        self.vectors.entry(word.to_lowercase()).or_insert(vector);
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.vectors.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// Reads the common text layout: a `<count> <dim>` header, then one word
    /// followed by `dim` numbers per line. Malformed lines are skipped.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, FeatureError> {
        let io_err = |source| FeatureError::Io {
            path: "<reader>".into(),
            source,
        };
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(l) => l.map_err(io_err)?,
            None => return Err(FeatureError::BadHeader(String::new())),
        };
        let dim = {
            let parts: Vec<&str> = header.split_whitespace().collect();
            match parts.as_slice() {
                [count, dim] if count.parse::<u64>().is_ok() => dim
                    .parse::<usize>()
                    .map_err(|_| FeatureError::BadHeader(header.clone()))?,
                _ => return Err(FeatureError::BadHeader(header)),
            }
        };
        let mut table = EmbeddingTable::new(dim);
        for line in lines {
            let line = line.map_err(io_err)?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else {
                continue;
            };
            let vector: Result<Vec<f32>, _> = parts.map(str::parse::<f32>).collect();
            match vector {
                Ok(v) if v.len() == dim && v.iter().all(|x| x.is_finite()) => table.insert(word, v),
                _ => table.skipped_lines += 1,
            }
        }
        if table.skipped_lines > 0 {
            log::warn!("skipped {} malformed embedding line(s)", table.skipped_lines);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let file = File::open(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_from(BufReader::new(file))
    }
}

/// Lowercases, drops URLs and @mentions, strips `#` from hashtags and splits
/// on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lower.split_whitespace() {
        if chunk.starts_with('@')
            || chunk.starts_with("http://")
            || chunk.starts_with("https://")
            || chunk.starts_with("www.")
        {
            continue;
        }
        tokens.extend(
            chunk
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .map(str::to_string),
        );
    }
    tokens
}

/// Mean vector of the in-vocabulary tokens of `text` (zero vector if none).
pub fn embed_text(text: &str, table: &EmbeddingTable) -> Vec<f64> {
    let mut acc = vec![0.0; table.dim()];
    let mut hits = 0usize;
    for tok in tokenize(text) {
        if let Some(v) = table.get(&tok) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += f64::from(*x);
            }
            hits += 1;
        }
    }
    if hits > 0 {
        acc.iter_mut().for_each(|a| *a /= hits as f64);
    }
    acc
}

/// Mean of per-tweet embeddings (each tweet weighs the same regardless of
/// its length). Zero vector for no tweets.
pub fn embed_tweets(texts: &[String], table: &EmbeddingTable) -> Vec<f64> {
    let mut acc = vec![0.0; table.dim()];
    if texts.is_empty() {
        return acc;
    }
    for t in texts {
        for (a, x) in acc.iter_mut().zip(embed_text(t, table)) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= texts.len() as f64);
    acc
}

const SECONDS_PER_DAY: f64 = 86_400.0;

/// The profile/activity block, in [`USER_STAT_NAMES`] order. `now` is the
/// reference time (seconds) for account age.
pub fn user_stat_features(u: &UserRecord, now: i64) -> Vec<f64> {
    let p = &u.profile;
    let age_days = ((now - p.account_created_at) as f64 / SECONDS_PER_DAY).max(0.0);
    let tweets = f64::from(u.tweets_in_dump.max(1));
    let per_tweet = |x: u32| if u.tweets_in_dump == 0 { 0.0 } else { f64::from(x) / tweets };
    let hashtag_uses: u32 = u.hashtags.values().sum();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    vec![
        p.followers_count as f64,
        p.friends_count as f64,
        p.statuses_count as f64,
        p.favourites_count as f64,
        p.listed_count as f64,
        flag(p.verified),
        flag(p.default_profile),
        flag(p.default_profile_image),
        age_days,
        (p.followers_count as f64 + 1.0) / (p.friends_count as f64 + 1.0),
        p.statuses_count as f64 / age_days.max(1.0),
        per_tweet(u.retweets_in_dump),
        per_tweet(hashtag_uses),
        per_tweet(u.mentions_in_dump),
        per_tweet(u.urls_in_dump),
        p.screen_name.chars().count() as f64,
        p.screen_name.chars().filter(char::is_ascii_digit).count() as f64,
        p.description.chars().count() as f64,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashtagEntry {
    pub tag: String,
    /// Total uses across all users.
    pub count: u64,
    /// Number of users who used it.
    pub df: u64,
}

/// Most frequent hashtags, by total uses descending then tag ascending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HashtagVocabulary {
    pub entries: Vec<HashtagEntry>,
    /// Number of users the document frequencies were computed over.
    pub n_users: usize,
}

impl HashtagVocabulary {
    pub fn build(users: &[UserRecord], vocab_size: usize) -> Self {
        let mut totals: HashMap<&str, (u64, u64)> = HashMap::new();
        for u in users {
            for (tag, &k) in &u.hashtags {
                let e = totals.entry(tag.as_str()).or_insert((0, 0));
                e.0 += u64::from(k);
                e.1 += 1;
            }
        }
        let mut entries: Vec<HashtagEntry> = totals
            .into_iter()
            .map(|(tag, (count, df))| HashtagEntry {
                tag: tag.to_string(),
                count,
                df,
            })
            .collect();
        entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.tag.cmp(&b.tag)));
        entries.truncate(vocab_size);
        HashtagVocabulary {
            entries,
            n_users: users.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `ln(N / df)` for each entry.
    pub fn idf(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| (self.n_users as f64 / e.df as f64).ln())
            .collect()
    }
}

/// Sparse TF-IDF row: `(vocabulary index, score)` pairs in index order.
pub type SparseRow = Vec<(usize, f64)>;

/// Raw term frequency times `ln(N / df)` over the top `vocab_size` hashtags.
pub fn hashtag_tfidf(users: &[UserRecord], vocab_size: usize) -> (HashtagVocabulary, Vec<SparseRow>) {
    let vocab = HashtagVocabulary::build(users, vocab_size);
    let idf = vocab.idf();
    let index: HashMap<&str, usize> = vocab
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.tag.as_str(), i))
        .collect();
    let rows = par::map_slice(users, |u| {
        let mut row: SparseRow = u
            .hashtags
            .iter()
            .filter_map(|(tag, &tf)| index.get(tag.as_str()).map(|&i| (i, f64::from(tf) * idf[i])))
            .collect();
        row.sort_by_key(|(i, _)| *i);
        row
    });
    (vocab, rows)
}

/// Ordered feature names plus a layout version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: String,
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>) -> Self {
        FeatureSchema {
            version: SCHEMA_VERSION.to_string(),
            names,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Embedding dimension implied by the description block.
    pub fn embedding_dim(&self) -> usize {
        self.names.iter().filter(|n| n.starts_with(DESC_PREFIX)).count()
    }

    /// Fails when `table_dim` disagrees with the embedding blocks of this
    /// schema.
    pub fn check_embedding_dim(&self, table_dim: usize) -> Result<(), FeatureError> {
        let model = self.embedding_dim();
        if model == table_dim {
            Ok(())
        } else {
            Err(FeatureError::DimensionMismatch {
                table: table_dim,
                model,
            })
        }
    }
}

/// Row-major dense features for a set of users.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub schema: FeatureSchema,
    pub user_ids: Vec<String>,
    /// `user_ids.len() * schema.len()` values.
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(schema: FeatureSchema, user_ids: Vec<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), user_ids.len() * schema.len());
        FeatureMatrix {
            schema,
            user_ids,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_cols();
        &self.values[i * w..(i + 1) * w]
    }

    /// Appends an extra numeric column (one value per row).
    pub fn append_column(&mut self, name: &str, column: &[f64]) -> Result<(), FeatureError> {
        if column.len() != self.n_rows() {
            return Err(FeatureError::ColumnLength {
                name: name.to_string(),
                got: column.len(),
                expected: self.n_rows(),
            });
        }
        if self.schema.names.iter().any(|n| n == name) {
            return Err(FeatureError::DuplicateName(name.to_string()));
        }
        let w = self.n_cols();
        let mut values = Vec::with_capacity(self.values.len() + column.len());
        for (i, x) in column.iter().enumerate() {
            values.extend_from_slice(&self.values[i * w..(i + 1) * w]);
            values.push(*x);
        }
        self.values = values;
        self.schema.names.push(name.to_string());
        Ok(())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols());
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            schema: self.schema.clone(),
            user_ids: rows.iter().map(|&r| self.user_ids[r].clone()).collect(),
            values,
        }
    }
}

/// Output of [`assemble_features`].
#[derive(Debug, Clone)]
pub struct UserFeatures {
    pub matrix: FeatureMatrix,
    pub vocabulary: HashtagVocabulary,
    /// The TF-IDF block on its own (also embedded in `matrix`).
    pub tfidf: Vec<SparseRow>,
}

/// Builds the full feature matrix for `users` (in input order).
pub fn assemble_features(
    users: &[UserRecord],
    table: Option<&EmbeddingTable>,
    vocab_size: usize,
    now: i64,
) -> UserFeatures {
    let (vocabulary, tfidf) = hashtag_tfidf(users, vocab_size);
    let dim = table.map_or(0, EmbeddingTable::dim);

    let mut names: Vec<String> = USER_STAT_NAMES.iter().map(|s| s.to_string()).collect();
    names.extend((0..dim).map(|i| format!("{DESC_PREFIX}{i}")));
    names.extend((0..dim).map(|i| format!("{CONTENT_PREFIX}{i}")));
    names.extend(
        vocabulary
            .entries
            .iter()
            .map(|e| format!("{HASHTAG_PREFIX}{}", e.tag)),
    );
    let width = names.len();
    let vocab_len = vocabulary.len();

    let rows = par::map_range(0..users.len(), |i| {
        let u = &users[i];
        let mut row = user_stat_features(u, now);
        if let Some(t) = table {
            row.extend(embed_text(&u.profile.description, t));
            row.extend(embed_tweets(&u.texts, t));
        }
        let mut block = vec![0.0; vocab_len];
        for &(k, v) in &tfidf[i] {
            block[k] = v;
        }
        row.extend(block);
        debug_assert_eq!(row.len(), width);
        row
    });

    let matrix = FeatureMatrix::new(
        FeatureSchema::new(names),
        users.iter().map(|u| u.user_id.clone()).collect(),
        rows.concat(),
    );
    UserFeatures {
        matrix,
        vocabulary,
        tfidf,
    }
}
