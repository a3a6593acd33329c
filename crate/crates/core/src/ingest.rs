//! Streaming ingestion of Twitter v1.1 JSON-lines dumps.
//!
//! A dump is read line by line (plain or gzip-compressed). Each line is parsed
//! independently into a [`RawTweet`] or a skip marker; parsed tweets are then
//! de-duplicated, grouped into retweet [`Cascade`]s and folded into per-user
//! [`UserRecord`]s.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};
use flate2::read::MultiGzDecoder;
use serde::de::IgnoredAny;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

/// Lines are parsed in batches of this size; each batch is parsed in parallel.
const PARSE_BATCH: usize = 8192;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Author snapshot attached to a tweet.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawUser {
    pub user_id: String,
    pub screen_name: String,
    pub description: String,
    pub followers_count: u64,
    pub friends_count: u64,
    pub statuses_count: u64,
    pub favourites_count: u64,
    pub listed_count: u64,
    pub verified: bool,
    pub default_profile: bool,
    pub default_profile_image: bool,
    /// Account creation time, seconds since the Unix epoch.
    pub account_created_at: i64,
    pub location: String,
    pub profile_image_url: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawTweet {
    pub tweet_id: String,
    pub author: RawUser,
    /// Seconds since the Unix epoch, truncated to whole seconds.
    pub created_at: i64,
    pub text: String,
    /// Lowercased hashtags, in order of appearance.
    pub hashtags: Vec<String>,
    pub mention_count: u32,
    pub url_count: u32,
    /// Id of the original tweet when this is a retweet.
    pub retweet_of: Option<String>,
}

impl RawTweet {
    pub fn is_retweet(&self) -> bool {
        self.retweet_of.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    Blank,
    /// Valid JSON that is not a tweet (delete/limit notices and the like).
    NotTweet,
    /// Invalid JSON, invalid UTF-8 or an unparseable timestamp.
    Malformed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedLine {
    Tweet(Box<RawTweet>),
    Skip(SkipReason),
}

/// Counters collected while reading a dump.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines: u64,
    pub tweets: u64,
    pub duplicates: u64,
    pub blank: u64,
    pub not_tweet: u64,
    pub malformed: u64,
}

impl IngestStats {
    pub fn skipped(&self) -> u64 {
        self.blank + self.not_tweet + self.malformed
    }
}

// Wire format. Only the fields we consume are declared; everything else in
// the tweet object is skipped by serde.

#[derive(Deserialize)]
struct TweetJson {
    id_str: Option<String>,
    id: Option<u64>,
    created_at: Option<String>,
    text: Option<String>,
    full_text: Option<String>,
    extended_tweet: Option<ExtendedJson>,
    entities: Option<EntitiesJson>,
    user: Option<UserJson>,
    retweeted_status: Option<IdRefJson>,
}

#[derive(Deserialize)]
struct ExtendedJson {
    full_text: Option<String>,
    entities: Option<EntitiesJson>,
}

#[derive(Deserialize, Default)]
struct EntitiesJson {
    #[serde(default)]
    hashtags: Option<Vec<HashtagJson>>,
    #[serde(default)]
    user_mentions: Option<Vec<IgnoredAny>>,
    #[serde(default)]
    urls: Option<Vec<IgnoredAny>>,
}

#[derive(Deserialize)]
struct HashtagJson {
    text: Option<String>,
}

#[derive(Deserialize)]
struct IdRefJson {
    id_str: Option<String>,
    id: Option<u64>,
}

#[derive(Deserialize)]
struct UserJson {
    id_str: Option<String>,
    id: Option<u64>,
    screen_name: Option<String>,
    description: Option<String>,
    followers_count: Option<i64>,
    friends_count: Option<i64>,
    statuses_count: Option<i64>,
    favourites_count: Option<i64>,
    listed_count: Option<i64>,
    verified: Option<bool>,
    default_profile: Option<bool>,
    default_profile_image: Option<bool>,
    created_at: Option<String>,
    location: Option<String>,
    profile_image_url_https: Option<String>,
    profile_image_url: Option<String>,
}

fn id_of(id_str: Option<String>, id: Option<u64>) -> Option<String> {
    id_str
        .filter(|s| !s.is_empty())
        .or_else(|| id.map(|n| n.to_string()))
}

fn count(v: Option<i64>) -> u64 {
    v.unwrap_or(0).max(0) as u64
}

/// Parses Twitter's `created_at` layout (`Wed Oct 10 20:19:24 +0000 2018`),
/// falling back to RFC 3339. Sub-second precision is dropped.
pub fn parse_twitter_time(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_str(s, "%a %b %d %H:%M:%S %z %Y") {
        return Some(t.timestamp());
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S")
        .ok()
        .map(|t| t.and_utc().timestamp())
}

/// Parses one line of a dump.
pub fn parse_tweet_line(line: &str) -> ParsedLine {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return ParsedLine::Skip(SkipReason::Blank);
    }
    let json: TweetJson = match serde_json::from_str(trimmed) {
        Ok(j) => j,
        Err(_) => return ParsedLine::Skip(SkipReason::Malformed),
    };
    let (Some(tweet_id), Some(created_raw), Some(user)) =
        (id_of(json.id_str, json.id), json.created_at, json.user)
    else {
        return ParsedLine::Skip(SkipReason::NotTweet);
    };
    let Some(user_id) = id_of(user.id_str, user.id) else {
        return ParsedLine::Skip(SkipReason::NotTweet);
    };
    let Some(created_at) = parse_twitter_time(&created_raw) else {
        return ParsedLine::Skip(SkipReason::Malformed);
    };

    let (text, entities) = match json.extended_tweet {
        Some(ext) => (
            ext.full_text.or(json.full_text).or(json.text),
            ext.entities.or(json.entities),
        ),
        None => (json.full_text.or(json.text), json.entities),
    };
    let entities = entities.unwrap_or_default();
    let hashtags = entities
        .hashtags
        .unwrap_or_default()
        .into_iter()
        .filter_map(|h| h.text)
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect();

    let author = RawUser {
        user_id,
        screen_name: user.screen_name.unwrap_or_default(),
        description: user.description.unwrap_or_default(),
        followers_count: count(user.followers_count),
        friends_count: count(user.friends_count),
        statuses_count: count(user.statuses_count),
        favourites_count: count(user.favourites_count),
        listed_count: count(user.listed_count),
        verified: user.verified.unwrap_or(false),
        default_profile: user.default_profile.unwrap_or(false),
        default_profile_image: user.default_profile_image.unwrap_or(false),
        account_created_at: user
            .created_at
            .as_deref()
            .and_then(parse_twitter_time)
            .unwrap_or(created_at),
        location: user.location.unwrap_or_default(),
        profile_image_url: user
            .profile_image_url_https
            .or(user.profile_image_url)
            .unwrap_or_default(),
    };

    ParsedLine::Tweet(Box::new(RawTweet {
        tweet_id,
        author,
        created_at,
        text: text.unwrap_or_default(),
        hashtags,
        mention_count: entities.user_mentions.map_or(0, |v| v.len() as u32),
        url_count: entities.urls.map_or(0, |v| v.len() as u32),
        retweet_of: json
            .retweeted_status
            .and_then(|r| id_of(r.id_str, r.id)),
    }))
}

/// Total order on tweet/user ids: numeric ids by value, then anything else
/// lexicographically.
pub fn cmp_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u128>(), b.parse::<u128>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// De-duplicated tweets of one or more dumps, in input order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub tweets: Vec<RawTweet>,
    pub stats: IngestStats,
    seen: HashSet<String>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a corpus from already parsed tweets (duplicates dropped).
    pub fn from_tweets(tweets: impl IntoIterator<Item = RawTweet>) -> Self {
        let mut corpus = Self::new();
        for t in tweets {
            corpus.stats.lines += 1;
            corpus.push(ParsedLine::Tweet(Box::new(t)));
        }
        corpus
    }

    fn push(&mut self, parsed: ParsedLine) {
        match parsed {
            ParsedLine::Skip(SkipReason::Blank) => self.stats.blank += 1,
            ParsedLine::Skip(SkipReason::NotTweet) => self.stats.not_tweet += 1,
            ParsedLine::Skip(SkipReason::Malformed) => self.stats.malformed += 1,
            ParsedLine::Tweet(t) => {
                // first occurrence wins
                if self.seen.insert(t.tweet_id.clone()) {
                    self.stats.tweets += 1;
                    self.tweets.push(*t);
                } else {
                    self.stats.duplicates += 1;
                }
            }
        }
    }

    fn push_batch(&mut self, batch: &[Vec<u8>]) {
        let parsed = par::map_slice(batch, |raw| match std::str::from_utf8(raw) {
            Ok(s) => parse_tweet_line(s),
            Err(_) => ParsedLine::Skip(SkipReason::Malformed),
        });
        self.stats.lines += batch.len() as u64;
        for p in parsed {
            self.push(p);
        }
    }

    /// Reads every line of `reader` into the corpus.
    pub fn read_from<R: BufRead>(&mut self, mut reader: R) -> io::Result<()> {
        let mut batch: Vec<Vec<u8>> = Vec::with_capacity(PARSE_BATCH);
        loop {
            let mut buf = Vec::new();
            if reader.read_until(b'\n', &mut buf)? == 0 {
                break;
            }
            if buf.last() == Some(&b'\n') {
                buf.pop();
                if buf.last() == Some(&b'\r') {
                    buf.pop();
                }
            }
            batch.push(buf);
            if batch.len() == PARSE_BATCH {
                self.push_batch(&batch);
                batch.clear();
            }
        }
        if !batch.is_empty() {
            self.push_batch(&batch);
        }
        let bad = self.stats.malformed;
        if bad > 0 {
            log::warn!("{bad} malformed line(s) skipped so far");
        }
        Ok(())
    }

    /// Reads a dump file, transparently decompressing gzip input.
    pub fn read_path(&mut self, path: &Path) -> Result<(), IngestError> {
        let wrap = |source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = open_dump(path).map_err(wrap)?;
        self.read_from(reader).map_err(wrap)
    }

    /// Reads several dumps in order.
    pub fn load(paths: &[PathBuf]) -> Result<Self, IngestError> {
        let mut corpus = Self::new();
        for p in paths {
            corpus.read_path(p)?;
        }
        Ok(corpus)
    }

    /// Latest tweet time in the corpus; the reference "now" for features.
    pub fn reference_time(&self) -> i64 {
        self.tweets.iter().map(|t| t.created_at).max().unwrap_or(0)
    }
}

/// Opens a dump, detecting gzip by its magic bytes.
pub fn open_dump(path: &Path) -> io::Result<Box<dyn BufRead>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let file = File::open(path)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// One (re)tweet inside a cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeEvent {
    /// Seconds since the cascade root.
    pub rel_time: f64,
    /// Follower count of the author at tweet time.
    pub mark: u64,
    pub user_id: String,
    pub tweet_id: String,
}

/// A root tweet and its retweets in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    /// Tweet id of the root event.
    pub cascade_id: String,
    pub events: Vec<CascadeEvent>,
    pub root_text: String,
    /// Absolute time of the root event.
    pub root_created_at: i64,
    /// For cascades whose original tweet is missing from the dump: the id of
    /// that original. The root is then the earliest observed retweet.
    pub orphan_of: Option<String>,
}

impl Cascade {
    /// Builds a cascade from `(rel_time, mark)` pairs, generating ids.
    /// Meant for fixtures and synthetic data; times must be sorted.
    pub fn from_times_marks(cascade_id: &str, events: &[(f64, u64)]) -> Self {
        let events = events
            .iter()
            .enumerate()
            .map(|(i, &(t, m))| CascadeEvent {
                rel_time: t,
                mark: m,
                user_id: format!("{cascade_id}-u{i}"),
                tweet_id: format!("{cascade_id}-{i}"),
            })
            .collect();
        Cascade {
            cascade_id: cascade_id.to_string(),
            events,
            root_text: String::new(),
            root_created_at: 0,
            orphan_of: None,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.rel_time).collect()
    }

    pub fn marks(&self) -> Vec<u64> {
        self.events.iter().map(|e| e.mark).collect()
    }
}

fn event_key(a: &RawTweet, b: &RawTweet) -> Ordering {
    a.created_at
        .cmp(&b.created_at)
        .then_with(|| cmp_ids(&a.tweet_id, &b.tweet_id))
}

fn make_cascade(root: &RawTweet, mut rest: Vec<&RawTweet>, orphan_of: Option<String>) -> Cascade {
    rest.sort_by(|a, b| event_key(a, b));
    let event = |t: &RawTweet| CascadeEvent {
        // retweets stamped before their original are clamped onto the root
        rel_time: (t.created_at - root.created_at).max(0) as f64,
        mark: t.author.followers_count,
        user_id: t.author.user_id.clone(),
        tweet_id: t.tweet_id.clone(),
    };
    let mut events = Vec::with_capacity(rest.len() + 1);
    events.push(event(root));
    events.extend(rest.into_iter().map(event));
    Cascade {
        cascade_id: root.tweet_id.clone(),
        events,
        root_text: root.text.clone(),
        root_created_at: root.created_at,
        orphan_of,
    }
}

/// Groups de-duplicated tweets into retweet cascades.
///
/// Originals become roots (singletons when never retweeted). Retweets whose
/// original is absent are rooted at their earliest observed retweet. Cascades
/// are returned ordered by root time, then root id.
pub fn build_cascades(tweets: &[RawTweet]) -> Vec<Cascade> {
    let originals: HashMap<&str, usize> = tweets
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_retweet())
        .map(|(i, t)| (t.tweet_id.as_str(), i))
        .collect();

    let mut children: HashMap<usize, Vec<&RawTweet>> = HashMap::new();
    let mut orphans: BTreeMap<&str, Vec<&RawTweet>> = BTreeMap::new();
    for t in tweets {
        let Some(orig) = t.retweet_of.as_deref() else {
            continue;
        };
        match originals.get(orig) {
            Some(&i) => children.entry(i).or_default().push(t),
            None => orphans.entry(orig).or_default().push(t),
        }
    }

    let mut cascades: Vec<Cascade> = tweets
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_retweet())
        .map(|(i, root)| make_cascade(root, children.remove(&i).unwrap_or_default(), None))
        .collect();

    for (orig, mut group) in orphans {
        group.sort_by(|a, b| event_key(a, b));
        let root = group.remove(0);
        cascades.push(make_cascade(root, group, Some(orig.to_string())));
    }

    cascades.sort_by(|a, b| {
        a.root_created_at
            .cmp(&b.root_created_at)
            .then_with(|| cmp_ids(&a.cascade_id, &b.cascade_id))
    });
    cascades
}

/// Everything the dump tells us about one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    /// Profile snapshot from the user's latest tweet.
    pub profile: RawUser,
    pub tweets_in_dump: u32,
    pub retweets_in_dump: u32,
    pub mentions_in_dump: u32,
    pub urls_in_dump: u32,
    pub hashtags: BTreeMap<String, u32>,
    /// Text of each tweet, in dump order.
    pub texts: Vec<String>,
    pub cascade_ids: BTreeSet<String>,
    /// Time and id of the tweet the profile snapshot came from.
    pub latest_at: i64,
    pub latest_tweet_id: String,
}

impl UserRecord {
    fn new(t: &RawTweet) -> Self {
        UserRecord {
            user_id: t.author.user_id.clone(),
            profile: t.author.clone(),
            tweets_in_dump: 0,
            retweets_in_dump: 0,
            mentions_in_dump: 0,
            urls_in_dump: 0,
            hashtags: BTreeMap::new(),
            texts: Vec::new(),
            cascade_ids: BTreeSet::new(),
            latest_at: t.created_at,
            latest_tweet_id: t.tweet_id.clone(),
        }
    }

    /// Most used hashtag, ties broken lexicographically.
    pub fn top_hashtag(&self) -> Option<&str> {
        self.hashtags
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(h, _)| h.as_str())
    }
}

/// Folds tweets into one record per author, ordered by user id.
pub fn aggregate_users(tweets: &[RawTweet], cascades: &[Cascade]) -> Vec<UserRecord> {
    let membership: HashMap<&str, &str> = cascades
        .iter()
        .flat_map(|c| {
            c.events
                .iter()
                .map(move |e| (e.tweet_id.as_str(), c.cascade_id.as_str()))
        })
        .collect();

    let mut users: HashMap<&str, UserRecord> = HashMap::new();
    for t in tweets {
        let rec = users
            .entry(t.author.user_id.as_str())
            .or_insert_with(|| UserRecord::new(t));
        rec.tweets_in_dump += 1;
        if t.is_retweet() {
            rec.retweets_in_dump += 1;
        }
        rec.mentions_in_dump += t.mention_count;
        rec.urls_in_dump += t.url_count;
        for h in &t.hashtags {
            *rec.hashtags.entry(h.clone()).or_insert(0) += 1;
        }
        rec.texts.push(t.text.clone());
        if let Some(cid) = membership.get(t.tweet_id.as_str()) {
            rec.cascade_ids.insert((*cid).to_string());
        }
        let newer = (t.created_at, t.tweet_id.as_str());
        let current = (rec.latest_at, rec.latest_tweet_id.as_str());
        if newer.0 > current.0
            || (newer.0 == current.0 && cmp_ids(newer.1, current.1) == Ordering::Greater)
        {
            rec.profile = t.author.clone();
            rec.latest_at = t.created_at;
            rec.latest_tweet_id = t.tweet_id.clone();
        }
    }

    let mut out: Vec<UserRecord> = users.into_values().collect();
    out.sort_by(|a, b| cmp_ids(&a.user_id, &b.user_id));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn tweet_json(id: &str, user: &str, secs: i64, retweet_of: Option<&str>) -> String {
        let created = DateTime::from_timestamp(secs, 0)
            .unwrap()
            .format("%a %b %d %H:%M:%S +0000 %Y")
            .to_string();
        let mut v = json!({
            "id_str": id,
            "created_at": created,
            "text": format!("tweet {id}"),
            "entities": {"hashtags": [{"text": "Rust"}], "user_mentions": [], "urls": [{}]},
            "user": {"id_str": user, "screen_name": format!("u{user}"), "followers_count": 5,
                     "created_at": "Mon Jan 01 00:00:00 +0000 2018"}
        });
        if let Some(r) = retweet_of {
            v["retweeted_status"] = json!({"id_str": r, "text": "orig"});
        }
        v.to_string()
    }

    fn parse(s: &str) -> RawTweet {
        match parse_tweet_line(s) {
            ParsedLine::Tweet(t) => *t,
            other => panic!("expected tweet, got {other:?}"),
        }
    }

    #[test]
    fn original_tweet_has_no_retweet_of() {
        let t = parse(&tweet_json("1", "9", 1_600_000_000, None));
        assert_eq!(t.retweet_of, None);
        assert_eq!(t.hashtags, vec!["rust"]);
        assert_eq!(t.url_count, 1);
        assert_eq!(t.mention_count, 0);
    }

    #[test]
    fn retweet_reference_is_extracted() {
        let t = parse(&tweet_json("2", "9", 1_600_000_000, Some("42")));
        assert_eq!(t.retweet_of.as_deref(), Some("42"));
    }

    #[test]
    fn garbage_and_notices_are_skipped_and_counted() {
        assert_eq!(
            parse_tweet_line("not json"),
            ParsedLine::Skip(SkipReason::Malformed)
        );
        assert_eq!(parse_tweet_line("   "), ParsedLine::Skip(SkipReason::Blank));
        assert_eq!(
            parse_tweet_line(r#"{"delete":{"status":{"id_str":"1"}}}"#),
            ParsedLine::Skip(SkipReason::NotTweet)
        );
        let mut c = Corpus::new();
        c.read_from("not json\n".as_bytes()).unwrap();
        assert_eq!(c.stats.malformed, 1);
        assert_eq!(c.stats.lines, 1);
    }

    #[test]
    fn extended_text_is_preferred() {
        let line = json!({
            "id": 7u64, "created_at": "Wed Oct 10 20:19:24 +0000 2018", "text": "short…",
            "extended_tweet": {"full_text": "the full text", "entities": {"hashtags": [{"text": "A"}, {"text": "b"}]}},
            "user": {"id": 3u64, "followers_count": -1}
        })
        .to_string();
        let t = parse(&line);
        assert_eq!(t.tweet_id, "7");
        assert_eq!(t.text, "the full text");
        assert_eq!(t.hashtags, vec!["a", "b"]);
        assert_eq!(t.author.user_id, "3");
        assert_eq!(t.author.followers_count, 0);
        assert_eq!(t.created_at, 1_539_202_764);
    }

    #[test]
    fn subsecond_timestamps_truncate() {
        assert_eq!(parse_twitter_time("2020-01-31T00:00:01.900Z"), Some(1_580_428_801));
    }

    #[test]
    fn empty_stream_has_no_cascades() {
        assert!(build_cascades(&[]).is_empty());
    }

    #[test]
    fn original_and_two_retweets() {
        let tweets: Vec<RawTweet> = [
            tweet_json("10", "1", 1000, None),
            tweet_json("12", "3", 1030, Some("10")),
            tweet_json("11", "2", 1010, Some("10")),
        ]
        .iter()
        .map(|s| parse(s))
        .collect();
        let cs = build_cascades(&tweets);
        assert_eq!(cs.len(), 1);
        let c = &cs[0];
        assert_eq!(c.cascade_id, "10");
        assert_eq!(c.times(), vec![0.0, 10.0, 30.0]);
        assert_eq!(c.events[1].tweet_id, "11");
        assert_eq!(c.orphan_of, None);
    }

    #[test]
    fn orphan_retweets_rebase_on_earliest() {
        let tweets: Vec<RawTweet> = [
            tweet_json("21", "2", 160, Some("5")),
            tweet_json("20", "1", 100, Some("5")),
        ]
        .iter()
        .map(|s| parse(s))
        .collect();
        let cs = build_cascades(&tweets);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].times(), vec![0.0, 60.0]);
        assert_eq!(cs[0].cascade_id, "20");
        assert_eq!(cs[0].orphan_of.as_deref(), Some("5"));
    }

    #[test]
    fn same_second_ties_break_by_numeric_id() {
        let tweets: Vec<RawTweet> = [
            tweet_json("1", "1", 0, None),
            tweet_json("100", "2", 5, Some("1")),
            tweet_json("99", "3", 5, Some("1")),
        ]
        .iter()
        .map(|s| parse(s))
        .collect();
        let c = &build_cascades(&tweets)[0];
        let ids: Vec<_> = c.events.iter().map(|e| e.tweet_id.as_str()).collect();
        assert_eq!(ids, vec!["1", "99", "100"]);
    }

    #[test]
    fn duplicates_first_wins() {
        let mut c = Corpus::new();
        let a = tweet_json("1", "1", 0, None);
        let b = tweet_json("1", "2", 50, None);
        c.read_from(format!("{a}\n{b}\n").as_bytes()).unwrap();
        assert_eq!(c.tweets.len(), 1);
        assert_eq!(c.tweets[0].author.user_id, "1");
        assert_eq!(c.stats.duplicates, 1);
    }

    #[test]
    fn user_counts_and_latest_profile() {
        let mut t: Vec<RawTweet> = [
            tweet_json("1", "7", 0, None),
            tweet_json("2", "7", 5, Some("99")),
            tweet_json("3", "7", 3, Some("98")),
        ]
        .iter()
        .map(|s| parse(s))
        .collect();
        t[0].author.followers_count = 10;
        t[1].author.followers_count = 12;
        t[2].author.followers_count = 11;
        let cs = build_cascades(&t);
        let users = aggregate_users(&t, &cs);
        assert_eq!(users.len(), 1);
        let u = &users[0];
        assert_eq!(u.tweets_in_dump, 3);
        assert_eq!(u.retweets_in_dump, 2);
        assert_eq!(u.profile.followers_count, 12);
        assert_eq!(u.cascade_ids.len(), 3);
        assert_eq!(u.hashtags.get("rust"), Some(&3));
    }

    #[test]
    fn hashtags_accumulate_per_user() {
        let mut t: Vec<RawTweet> = [
            tweet_json("1", "1", 0, None),
            tweet_json("2", "2", 1, None),
            tweet_json("3", "1", 2, None),
        ]
        .iter()
        .map(|s| parse(s))
        .collect();
        t[0].hashtags = vec!["a".into(), "b".into()];
        t[1].hashtags = vec!["b".into()];
        t[2].hashtags = vec!["a".into()];
        let users = aggregate_users(&t, &build_cascades(&t));
        assert_eq!(users[0].hashtags, BTreeMap::from([("a".into(), 2), ("b".into(), 1)]));
        assert_eq!(users[1].hashtags, BTreeMap::from([("b".into(), 1)]));
        assert_eq!(users[0].top_hashtag(), Some("a"));
    }

    #[test]
    fn gzip_dumps_are_detected() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dump.jsonl.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), flate2::Compression::fast());
        writeln!(enc, "{}", tweet_json("1", "1", 0, None)).unwrap();
        writeln!(enc, "{}", tweet_json("2", "2", 4, Some("1"))).unwrap();
        enc.finish().unwrap();
        let c = Corpus::load(&[path]).unwrap();
        assert_eq!(c.tweets.len(), 2);
    }
}
