use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cascade-spotter"));
    c.env_remove("CASCADE_SPOTTER_OUT").env_remove("SOURCE_DATE_EPOCH").arg("--quiet");
    c
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--out").arg(out).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(out: &Path, args: &[&str]) {
    let o = run(out, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

/// Synthetic dump processed into `dir/out`; returns the dump path and labels path.
fn prepared(dir: &Path) -> (String, String) {
    let data = dir.join("data");
    ok(&data, &["synth", "--tweets", "1500", "--users", "300", "--seed", "4"]);
    let dump = data.join("synthetic.jsonl").display().to_string();
    let labels = data.join("synthetic_labels.csv").display().to_string();
    ok(&dir.join("out"), &["process", "--input", &dump]);
    (dump, labels)
}

#[test]
fn process_train_label_template() {
    let dir = tempfile::tempdir().unwrap();
    let (_, labels) = prepared(dir.path());
    let out = dir.path().join("out");

    let train = |model: &str| {
        let o = bin()
            .env("CASCADE_SPOTTER_OUT", &out)
            .env("SOURCE_DATE_EPOCH", "1700000000")
            .args(["train", "--annotations", &labels, "--draws", "3", "--model"])
            .arg(out.join(model))
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out.join(model)).unwrap()
    };
    let a = train("model.json");
    let b = train("again.json");
    assert_eq!(a, b);
    let model: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(model["metadata"]["trained_at"], "2023-11-14T22:13:20+00:00");
    assert!(out.join("cv_report.json").is_file());

    ok(&out, &["label"]);
    let users = fs::read_to_string(out.join("users.csv")).unwrap();
    let header: Vec<&str> = users.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "botness").unwrap();
    for line in users.lines().skip(1) {
        let v: f64 = line.split(',').nth(col).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }

    ok(&out, &["template"]);
    let template = fs::read_to_string(out.join("annotation_template.csv")).unwrap();
    assert_eq!(template.lines().next(), Some("user_id,screen_name,label"));
    assert_eq!(template.lines().count(), users.lines().count());

    ok(
        &out,
        &["train", "--fine-tune", out.join("model.json").to_str().unwrap(), "--annotations", &labels, "--rounds", "3"],
    );
    let tuned: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(
        tuned["trees"].as_array().unwrap().len(),
        model["trees"].as_array().unwrap().len() + 3
    );
}

#[test]
fn process_is_idempotent_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (dump, _) = prepared(dir.path());
    let again = dir.path().join("again");
    let o = bin()
        .args(["--threads", "1", "--out"])
        .arg(&again)
        .args(["process", "--input", &dump])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    for f in ["users.csv", "cascades.csv", "hashtags.csv", "profiles.jsonl", "cascade_meta.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join("out").join(f)).unwrap(),
            fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn power_law_kernel_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (dump, _) = prepared(dir.path());
    ok(
        &dir.path().join("plaw"),
        &["process", "--input", &dump, "--kernel", "plaw", "--theta", "0.5", "--c", "30"],
    );
    let meta = fs::read_to_string(dir.path().join("plaw/run_meta.json")).unwrap();
    assert!(meta.contains("power-law"));
}

#[test]
fn missing_input_is_exit_1_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&out, &["process", "--input", dir.path().join("absent.jsonl").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(!out.join("users.csv").exists());
}

#[test]
fn invalid_arguments_are_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.jsonl");
    fs::write(&input, "").unwrap();
    let input = input.to_str().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&run(&out, &["process", "--input", input, "--theta", "-1"])), 2);
    assert_eq!(code(&run(&out, &["process", "--input", input, "--kernel", "gauss"])), 2);
    assert_eq!(code(&run(&out, &["process"])), 2);
    assert!(!out.join("users.csv").exists());
}

#[test]
fn degenerate_labels_are_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let out = dir.path().join("out");
    let users = fs::read_to_string(out.join("users.csv")).unwrap();
    let mut ann = String::from("user_id,screen_name,label\n");
    for line in users.lines().skip(1) {
        let id = line.split(',').next().unwrap();
        ann.push_str(&format!("{id},,1\n"));
    }
    fs::write(out.join("annotations.csv"), ann).unwrap();
    let o = run(&out, &["train"]);
    assert_eq!(code(&o), 2);
    assert!(!out.join("model.json").exists());
}

#[test]
fn label_without_model_is_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let out = dir.path().join("out");
    let before = fs::read(out.join("users.csv")).unwrap();
    assert_eq!(code(&run(&out, &["label"])), 1);
    assert_eq!(fs::read(out.join("users.csv")).unwrap(), before);
}

#[test]
fn fine_tune_with_foreign_schema_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (_, labels) = prepared(dir.path());
    let out = dir.path().join("out");
    ok(&out, &["train", "--annotations", &labels, "--draws", "2"]);
    let mut model: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    model["schema"][0] = "not_a_feature".into();
    let foreign = dir.path().join("foreign.json");
    fs::write(&foreign, model.to_string()).unwrap();
    let o = run(&out, &["train", "--fine-tune", foreign.to_str().unwrap(), "--annotations", &labels]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

fn get(addr: &str, path: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    resp
}

#[test]
fn serve_answers_and_stops_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_cascade-spotter"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .args(["serve", "--port", "0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited early").unwrap();
        if let Some(a) = line.strip_prefix("listening on http://") {
            break a.to_string();
        }
    };
    assert!(get(&addr, "/health").starts_with("HTTP/1.1 200"));
    assert!(get(&addr, "/api/users/nobody").starts_with("HTTP/1.1 404"));
    let scatter = get(&addr, "/api/scatter?n=5");
    assert!(scatter.starts_with("HTTP/1.1 200"));
    assert!(scatter.contains("\"total_users\""));

    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn serve_on_taken_port_fails() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = run(&dir.path().join("out"), &["serve", "--port", &port]);
    assert_eq!(code(&o), 1);
}

#[test]
fn serve_without_data_is_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&dir.path().join("missing"), &["serve", "--port", "0"]);
    assert_eq!(code(&o), 1);
}
