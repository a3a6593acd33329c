use std::fs;
use std::path::{Path, PathBuf};

use cascade_spotter_core::labeler::tree::{Tree, TreeNode};
use cascade_spotter_core::labeler::{BoostParams, LabelError, TreeEnsembleModel};
use cascade_spotter_core::pipeline::{
    label_command, process, train_command, LabelConfig, PipelineError, ProcessConfig, TrainConfig,
};
use cascade_spotter_core::synthetic::{synthetic_dump, DumpConfig};
use cascade_spotter_core::table::{load_cascade_rows, load_jsonl, RunMeta, UserProfile, UsersTable};
use serde_json::json;

fn tweet(id: &str, user: &str, secs: i64, retweet_of: Option<&str>, tags: &[&str]) -> String {
    let created = chrono::DateTime::from_timestamp(secs, 0)
        .unwrap()
        .format("%a %b %d %H:%M:%S +0000 %Y")
        .to_string();
    let mut t = json!({
        "id_str": id,
        "created_at": created,
        "text": format!("tweet {id}"),
        "entities": {"hashtags": tags.iter().map(|t| json!({"text": t})).collect::<Vec<_>>()},
        "user": {"id_str": user, "screen_name": format!("name{user}"), "followers_count": 10},
    });
    if let Some(o) = retweet_of {
        t["retweeted_status"] = json!({"id_str": o});
    }
    t.to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn empty_dump_gives_header_only_tables() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "empty.jsonl", "");
    let out = dir.path().join("out");
    let s = process(&ProcessConfig::new(vec![input], out.clone())).unwrap();
    assert_eq!(s.meta.tweets, 0);
    for f in ["users.csv", "cascades.csv", "hashtags.csv"] {
        assert_eq!(fs::read_to_string(out.join(f)).unwrap().lines().count(), 1, "{f}");
    }
    let meta: RunMeta = serde_json::from_str(&fs::read_to_string(out.join("run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta.tweets, 0);
}

#[test]
fn one_original_two_retweets() {
    let dir = tempfile::tempdir().unwrap();
    let text = [
        tweet("100", "1", 1000, None, &["Rust"]),
        tweet("101", "2", 1010, Some("100"), &["rust"]),
        tweet("102", "3", 1020, Some("100"), &[]),
        "{\"delete\":{}}".to_string(),
        "not json".to_string(),
    ]
    .join("\n");
    let input = write(dir.path(), "d.jsonl", &text);
    let out = dir.path().join("out");
    let s = process(&ProcessConfig::new(vec![input], out.clone())).unwrap();
    assert_eq!(s.meta.stats.skipped(), 2);

    let rows = load_cascade_rows(&out.join("cascades.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].expected_parent, None);
    assert!(rows[1..].iter().all(|r| r.expected_parent == Some(0) || r.expected_parent == Some(1)));
    let raw = fs::read_to_string(out.join("cascades.csv")).unwrap();
    let root_line = raw.lines().nth(1).unwrap();
    assert!(root_line.contains(",,"), "root parent should be empty: {root_line}");
    let total: f64 = rows.iter().filter(|r| r.tweet_id == "100").map(|r| r.influence).sum();
    assert!((total - 3.0).abs() < 1e-12);

    let users = UsersTable::load(&out.join("users.csv")).unwrap();
    assert_eq!(users.user_ids(), ["1", "2", "3"]);
    assert!(users.botness.is_none());
    assert!(users.features.schema.names.contains(&"hashtag:rust".to_string()));

    let profiles: Vec<UserProfile> = load_jsonl(&out.join("profiles.jsonl")).unwrap();
    assert_eq!(profiles[1].top_hashtag.as_deref(), Some("rust"));
    assert_eq!(profiles[0].cascade_ids, vec!["100"]);

    let tags = fs::read_to_string(out.join("hashtags.csv")).unwrap();
    // one user-hashtag pair per user who used it
    assert_eq!(tags.lines().count(), 3);
}

#[test]
fn unreadable_input_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let err = process(&ProcessConfig::new(vec![dir.path().join("missing.jsonl")], out.clone())).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(!out.exists() || names(&out).is_empty());
}

#[test]
fn failing_model_leaves_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "d.jsonl", &tweet("1", "1", 0, None, &[]));
    let bad = write(dir.path(), "model.json", "{\"version\": 1}");
    let out = dir.path().join("out");
    let mut cfg = ProcessConfig::new(vec![input], out.clone());
    cfg.model = Some(bad);
    let err = process(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!out.exists() || names(&out).is_empty());
}

fn processed(dir: &Path) -> (PathBuf, std::collections::BTreeMap<String, f64>) {
    let dump = synthetic_dump(&DumpConfig {
        tweets: 1500,
        users: 200,
        seed: 5,
        ..DumpConfig::default()
    });
    let input = write(dir, "d.jsonl", &dump.text());
    let out = dir.join("out");
    process(&ProcessConfig::new(vec![input], out.clone())).unwrap();
    (out, dump.labels)
}

fn annotations(dir: &Path, labels: &[(&String, &f64)]) -> PathBuf {
    let mut s = String::from("user_id,screen_name,label\n");
    for (u, y) in labels {
        s.push_str(&format!("{u},,{y}\n"));
    }
    write(dir, "annotations.csv", &s)
}

#[test]
fn train_is_deterministic_and_fine_tune_appends() {
    let dir = tempfile::tempdir().unwrap();
    let (out, labels) = processed(dir.path());
    let labels: Vec<_> = labels.iter().collect();
    let ann = annotations(dir.path(), &labels);
    let mut cfg = TrainConfig::new(out.join("users.csv"), ann.clone(), dir.path().join("m1/model.json"));
    cfg.search.draws = 3;
    let (m1, report) = train_command(&cfg).unwrap();
    assert!(report.cv_auc.unwrap() > 0.8);
    assert!(dir.path().join("m1/cv_report.json").exists());
    cfg.model_out = dir.path().join("m2/model.json");
    train_command(&cfg).unwrap();
    assert_eq!(
        fs::read(dir.path().join("m1/model.json")).unwrap(),
        fs::read(dir.path().join("m2/model.json")).unwrap()
    );

    let few = annotations(dir.path(), &labels[..3]);
    let mut ft = TrainConfig::new(out.join("users.csv"), few, dir.path().join("m3/model.json"));
    ft.fine_tune = Some(dir.path().join("m1/model.json"));
    ft.fine_tune_rounds = 4;
    let (m3, r3) = train_command(&ft).unwrap();
    assert_eq!(r3.mode, "fine-tune");
    assert_eq!(m3.trees.len(), m1.trees.len() + 4);
    assert_eq!(m3.metadata.fine_tunes.len(), 1);
}

#[test]
fn degenerate_labels_write_no_model() {
    let dir = tempfile::tempdir().unwrap();
    let (out, labels) = processed(dir.path());
    let ones: Vec<(String, f64)> = labels.keys().take(20).map(|u| (u.clone(), 1.0)).collect();
    let refs: Vec<_> = ones.iter().map(|(u, y)| (u, y)).collect();
    let ann = annotations(dir.path(), &refs);
    let model = dir.path().join("m/model.json");
    let err = train_command(&TrainConfig::new(out.join("users.csv"), ann, model.clone())).unwrap_err();
    assert!(matches!(err, PipelineError::Label(LabelError::DegenerateLabels)));
    assert_eq!(err.exit_code(), 2);
    assert!(!model.exists());
}

#[test]
fn fine_tune_with_wrong_schema_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (out, labels) = processed(dir.path());
    let labels: Vec<_> = labels.iter().take(2).collect();
    let ann = annotations(dir.path(), &labels);
    let foreign = TreeEnsembleModel::empty(vec!["followers".into(), "nope".into()], 0.0, BoostParams::default());
    let base = dir.path().join("foreign.json");
    foreign.save(&base).unwrap();
    let mut cfg = TrainConfig::new(out.join("users.csv"), ann, dir.path().join("m/model.json"));
    cfg.fine_tune = Some(base);
    let err = train_command(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let msg = err.to_string();
    assert!(msg.contains("nope") && msg.contains("friends"), "{msg}");
}

fn two_row_table(dir: &Path) -> PathBuf {
    write(dir, "users.csv", "user_id,screen_name,influence,x\na,A,1,0\nb,B,2,1\n")
}

#[test]
fn label_with_zero_tree_and_hand_models() {
    let dir = tempfile::tempdir().unwrap();
    let features = two_row_table(dir.path());
    let empty = TreeEnsembleModel::empty(vec!["x".into()], 0.0, BoostParams::default());
    let mp = dir.path().join("empty.json");
    empty.save(&mp).unwrap();
    let out = dir.path().join("out");
    let t = label_command(&LabelConfig {
        features: features.clone(),
        model: mp,
        out_dir: out.clone(),
    })
    .unwrap();
    assert_eq!(t.botness, Some(vec![0.5, 0.5]));

    let mut hand = TreeEnsembleModel::empty(
        vec!["x".into()],
        0.0,
        BoostParams {
            learning_rate: 1.0,
            ..BoostParams::default()
        },
    );
    hand.trees.push(Tree {
        nodes: vec![
            TreeNode::Split {
                feature: 0,
                threshold: 0.5,
                left: 1,
                right: 2,
                default_left: true,
            },
            TreeNode::Leaf { weight: -0.4 },
            TreeNode::Leaf { weight: 0.4 },
        ],
    });
    let mp = dir.path().join("hand.json");
    hand.save(&mp).unwrap();
    label_command(&LabelConfig {
        features,
        model: mp,
        out_dir: out.clone(),
    })
    .unwrap();
    let back = UsersTable::load(&out.join("users.csv")).unwrap();
    let b = back.botness.unwrap();
    assert!((b[0] - 0.40131).abs() < 1e-5 && (b[1] - 0.59869).abs() < 1e-5);
    assert_eq!(back.influence, vec![1.0, 2.0]);
}

#[test]
fn label_with_missing_model_is_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let err = label_command(&LabelConfig {
        features: two_row_table(dir.path()),
        model: dir.path().join("nope.json"),
        out_dir: dir.path().join("out"),
    })
    .unwrap_err();
    assert_eq!(err.exit_code(), 1);
}
