//! Seeded synthetic data: random cascades, Twitter-style dumps with known
//! bot labels, and a separable labeled matrix.

use std::collections::BTreeMap;

use chrono::DateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::features::{FeatureMatrix, FeatureSchema};
use crate::ingest::Cascade;

/// Cascade with `n` events, marks uniform in `[0, max_mark]` and gaps
/// uniform in `[0, max_gap]` between consecutive events.
pub fn random_cascade<R: Rng>(rng: &mut R, id: &str, n: usize, max_mark: u64, max_gap: f64) -> Cascade {
    let mut t = 0.0;
    let events: Vec<(f64, u64)> = (0..n)
        .map(|i| {
            if i > 0 {
                t += rng.random::<f64>() * max_gap;
            }
            (t, rng.random_range(0..=max_mark))
        })
        .collect();
    Cascade::from_times_marks(id, &events)
}

#[derive(Debug, Clone)]
pub struct DumpConfig {
    /// Approximate number of tweets (originals plus retweets).
    pub tweets: usize,
    pub users: usize,
    pub bot_fraction: f64,
    /// Mean number of retweets per original.
    pub mean_retweets: f64,
    pub seed: u64,
}

impl Default for DumpConfig {
    fn default() -> Self {
        DumpConfig {
            tweets: 10_000,
            users: 2_000,
            bot_fraction: 0.3,
            mean_retweets: 9.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDump {
    /// One JSON tweet per line.
    pub lines: Vec<String>,
    /// Ground-truth label per user id (1 = bot).
    pub labels: BTreeMap<String, f64>,
}

impl SyntheticDump {
    pub fn text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

struct SynthUser {
    id: String,
    bot: bool,
    json: Value,
}

const WORDS: [&str; 24] = [
    "news", "today", "great", "vote", "election", "market", "crypto", "free", "win", "follow",
    "climate", "science", "game", "music", "health", "policy", "breaking", "deal", "click", "now",
    "people", "city", "report", "update",
];
const HUMAN_TAGS: [&str; 8] = ["science", "music", "climate", "sports", "news", "art", "books", "tech"];
const BOT_TAGS: [&str; 4] = ["giveaway", "crypto", "followback", "deals"];
const START: i64 = 1_577_836_800; // 2020-01-01T00:00:00Z

fn twitter_time(secs: i64) -> String {
    DateTime::from_timestamp(secs, 0)
        .expect("in range")
        .format("%a %b %d %H:%M:%S +0000 %Y")
        .to_string()
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> u64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp().floor() as u64
}

fn make_user<R: Rng>(rng: &mut R, i: usize, bot: bool) -> SynthUser {
    let id = (1_000_000 + i).to_string();
    let (followers, friends, statuses, age_days) = if bot {
        (
            log_uniform(rng, 1.0, 300.0),
            log_uniform(rng, 500.0, 5000.0),
            log_uniform(rng, 5_000.0, 200_000.0),
            rng.random_range(5..200),
        )
    } else {
        (
            log_uniform(rng, 20.0, 200_000.0),
            log_uniform(rng, 20.0, 2000.0),
            log_uniform(rng, 50.0, 20_000.0),
            rng.random_range(300..4000),
        )
    };
    let screen_name = if bot {
        format!("user{}", rng.random_range(10_000_000u64..99_999_999))
    } else {
        format!("{}_{}", WORDS[rng.random_range(0..WORDS.len())], WORDS[rng.random_range(0..WORDS.len())])
    };
    let description = if bot && rng.random_bool(0.6) {
        String::new()
    } else {
        (0..rng.random_range(3..12))
            .map(|_| WORDS[rng.random_range(0..WORDS.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let json = json!({
        "id_str": id,
        "screen_name": screen_name,
        "description": description,
        "followers_count": followers,
        "friends_count": friends,
        "statuses_count": statuses,
        "favourites_count": if bot { rng.random_range(0..50) } else { rng.random_range(0..5000) },
        "listed_count": if bot { 0 } else { rng.random_range(0..100) },
        "verified": !bot && rng.random_bool(0.02),
        "default_profile": bot && rng.random_bool(0.7),
        "default_profile_image": bot && rng.random_bool(0.5),
        "created_at": twitter_time(START - age_days * 86_400),
        "location": if bot { "" } else { "Somewhere" },
        "profile_image_url_https": format!("https://img.example.com/{id}.png"),
    });
    SynthUser { id, bot, json }
}

fn tweet_text<R: Rng>(rng: &mut R, bot: bool) -> (String, Vec<&'static str>, usize, usize) {
    let tags: Vec<&str> = (0..rng.random_range(0..3))
        .map(|_| {
            if bot {
                BOT_TAGS[rng.random_range(0..BOT_TAGS.len())]
            } else {
                HUMAN_TAGS[rng.random_range(0..HUMAN_TAGS.len())]
            }
        })
        .collect();
    let mentions = if bot { rng.random_range(0..4) } else { rng.random_range(0..2) };
    let urls = if bot { usize::from(rng.random_bool(0.8)) } else { usize::from(rng.random_bool(0.2)) };
    let mut words: Vec<String> = (0..rng.random_range(4..15))
        .map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string())
        .collect();
    words.extend(tags.iter().map(|t| format!("#{t}")));
    (words.join(" "), tags, mentions, urls)
}

fn tweet_json(id: u64, secs: i64, user: &SynthUser, text: &str, tags: &[&str], mentions: usize, urls: usize) -> Value {
    json!({
        "id_str": id.to_string(),
        "created_at": twitter_time(secs),
        "text": text,
        "entities": {
            "hashtags": tags.iter().map(|t| json!({"text": t})).collect::<Vec<_>>(),
            "user_mentions": (0..mentions).map(|k| json!({"id_str": k.to_string()})).collect::<Vec<_>>(),
            "urls": (0..urls).map(|_| json!({"url": "https://t.co/x"})).collect::<Vec<_>>(),
        },
        "user": user.json,
    })
}

/// Generates a dump of original tweets and retweet cascades. Bots differ
/// from humans in profile statistics, hashtags and activity, and retweet
/// more often.
pub fn synthetic_dump(cfg: &DumpConfig) -> SyntheticDump {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let users: Vec<SynthUser> = (0..cfg.users.max(1))
        .map(|i| {
            let bot = rng.random_bool(cfg.bot_fraction.clamp(0.0, 1.0));
            make_user(&mut rng, i, bot)
        })
        .collect();
    // bots are three times as likely to be picked as retweeters
    let weights: Vec<f64> = users.iter().map(|u| if u.bot { 3.0 } else { 1.0 }).collect();
    let total: f64 = weights.iter().sum();
    let pick = |rng: &mut ChaCha8Rng| {
        let mut x = rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                return i;
            }
            x -= w;
        }
        weights.len() - 1
    };

    let mut lines = Vec::with_capacity(cfg.tweets);
    let mut next_id: u64 = 1_200_000_000_000_000_000;
    let p_stop = 1.0 / (1.0 + cfg.mean_retweets.max(0.0));
    while lines.len() < cfg.tweets {
        let author = &users[rng.random_range(0..users.len())];
        let root_time = START + rng.random_range(0..30 * 86_400);
        let root_id = next_id;
        next_id += 1;
        let (text, tags, mentions, urls) = tweet_text(&mut rng, author.bot);
        let root = tweet_json(root_id, root_time, author, &text, &tags, mentions, urls);
        lines.push(root.to_string());

        let mut t = root_time as f64;
        while lines.len() < cfg.tweets && !rng.random_bool(p_stop) {
            // heavy-tailed gaps: mostly minutes, sometimes hours
            let u: f64 = rng.random::<f64>().max(1e-12);
            t += 60.0 * u.powf(-0.7);
            let rt_user = &users[pick(&mut rng)];
            let id = next_id;
            next_id += 1;
            let name = author.json["screen_name"].as_str().unwrap_or("");
            let mut rt = tweet_json(id, t as i64, rt_user, &format!("RT @{name}: {text}"), &tags, 1, 0);
            rt["retweeted_status"] = root.clone();
            lines.push(rt.to_string());
        }
    }
    let labels = users
        .iter()
        .map(|u| (u.id.clone(), if u.bot { 1.0 } else { 0.0 }))
        .collect();
    SyntheticDump { lines, labels }
}

/// `n` rows of `d >= 3` features uniform in `[-1, 1]`, labeled by the sign
/// of a fixed linear score. Rows within `margin` of the boundary are
/// resampled, so the classes are strictly separable.
pub fn separable_dataset(n: usize, d: usize, margin: f64, seed: u64) -> (FeatureMatrix, Vec<f64>) {
    assert!(d >= 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = |x: &[f64]| x[0] + 0.5 * x[1] - 0.75 * x[2];
    let mut values = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    while y.len() < n {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let s = w(&x);
        if s.abs() < margin {
            continue;
        }
        y.push(if s > 0.0 { 1.0 } else { 0.0 });
        values.extend(x);
    }
    let schema = FeatureSchema::new((0..d).map(|i| format!("x{i}")).collect());
    (FeatureMatrix::new(schema, (0..n).map(|i| i.to_string()).collect(), values), y)
}
