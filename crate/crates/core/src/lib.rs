//! Offline analysis of Twitter JSON-lines dumps.
//!
//! The pipeline has four stages, each in its own module:
//!
//! * [`ingest`] parses tweet dumps, assembles retweet cascades and aggregates
//!   per-user records.
//! * [`influence`] attributes every retweet to its likely parent under a
//!   marked Hawkes kernel and derives tweet and user influence.
//! * [`features`] turns user records into numeric feature vectors
//!   (profile statistics, text embeddings, hashtag TF-IDF).
//! * [`labeler`] trains and applies a boosted-tree classifier over those
//!   features, including fine-tuning on a handful of relabeled users.
//!
//! [`pipeline`] wires the stages into the `process`, `train` and `label`
//! commands and owns the on-disk table formats.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise.

pub mod features;
pub mod influence;
pub mod ingest;
pub mod labeler;
pub mod par;
pub mod pipeline;
pub mod synthetic;
pub mod table;

pub use features::{EmbeddingTable, FeatureMatrix, FeatureSchema};
pub use influence::{CascadeInfluence, InfluenceReport, KernelKind, KernelParams};
pub use ingest::{Cascade, CascadeEvent, Corpus, RawTweet, RawUser, UserRecord};
pub use labeler::{SearchConfig, TreeEnsembleModel};
