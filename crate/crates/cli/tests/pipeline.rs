use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const ARTIFACTS: &[&str] = &[
    "documents.jsonl",
    "sentences.jsonl",
    "evidence.jsonl",
    "records.jsonl",
    "analysis.json",
    "breakdown.csv",
    "report.txt",
];

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

fn stancelab(args: &[&str], config: &Path, work: &Path, extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stancelab"));
    cmd.args(args)
        .arg("--config")
        .arg(config)
        .arg("--set")
        .arg(format!("work_dir={}", work.display()))
        .env_remove("STANCELAB_API_KEY")
        .env_remove("STANCELAB_API_BASE");
    for e in extra {
        cmd.arg("--set").arg(e);
    }
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn e2e() -> PathBuf {
    fixture("e2e/stancelab.conf")
}

#[test]
fn all_is_deterministic_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&stancelab(&["all"], &e2e(), a.path(), &[]));
    ok(&stancelab(&["all"], &e2e(), b.path(), &[]));
    for name in ARTIFACTS {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn all_equals_staged_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&stancelab(&["all"], &e2e(), a.path(), &[]));
    for stage in [
        "ingest", "segment", "filter", "classify", "analyze", "report",
    ] {
        ok(&stancelab(&[stage], &e2e(), b.path(), &[]));
    }
    for name in ARTIFACTS {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn rerun_with_warm_cache_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    ok(&stancelab(&["all"], &e2e(), dir.path(), &[]));
    let first = fs::read(dir.path().join("records.jsonl")).unwrap();
    let stamps = fs::read(dir.path().join("records.timestamps.jsonl")).unwrap();
    ok(&stancelab(&["classify"], &e2e(), dir.path(), &[]));
    assert_eq!(fs::read(dir.path().join("records.jsonl")).unwrap(), first);
    assert_ne!(
        fs::read(dir.path().join("records.timestamps.jsonl")).unwrap(),
        stamps
    );
    // Replay answers from the cache alone.
    ok(&stancelab(
        &["classify"],
        &e2e(),
        dir.path(),
        &["backend=replay"],
    ));
    assert_eq!(fs::read(dir.path().join("records.jsonl")).unwrap(), first);
}

#[test]
fn evidence_ids_and_breakdown_match_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = stancelab(&["all"], &e2e(), dir.path(), &[]);
    ok(&out);
    let ids: BTreeSet<String> = fs::read_to_string(dir.path().join("evidence.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            format!(
                "{}:{}",
                v["sentence"]["doc_id"].as_str().unwrap(),
                v["sentence"]["index"]
            )
        })
        .collect();
    let expected: BTreeSet<String> = fs::read_to_string(fixture("e2e/expected_evidence_ids.txt"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(ids, expected);
    assert_eq!(
        fs::read_to_string(dir.path().join("breakdown.csv")).unwrap(),
        fs::read_to_string(fixture("e2e/expected_breakdown.csv")).unwrap()
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("Total observed"));
}

#[test]
fn classify_before_filter_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = stancelab(&["classify"], &e2e(), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("filter"));
    assert_eq!(
        stancelab(&["segment"], &e2e(), dir.path(), &[])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        stancelab(&["analyze"], &e2e(), dir.path(), &[])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        stancelab(&["agree"], &e2e(), dir.path(), &[]).status.code(),
        Some(3)
    );
}

#[test]
fn report_without_records_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = stancelab(&["report"], &e2e(), dir.path(), &[]);
    ok(&out);
    let csv = fs::read_to_string(dir.path().join("breakdown.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[2], "0", "{row}");
        assert_eq!(f[8], "0", "{row}");
    }
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = stancelab(&["ingest"], &e2e(), dir.path(), &["concurrency_limit=0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = stancelab(&["ingest"], &e2e(), dir.path(), &["no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = stancelab(
        &["ingest"],
        &e2e(),
        dir.path(),
        &["manifest_path=missing.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("nope.conf");
    assert_eq!(
        stancelab(&["ingest"], &missing, dir.path(), &[])
            .status
            .code(),
        Some(2)
    );
    let out = Command::new(env!("CARGO_BIN_EXE_stancelab"))
        .args(["frobnicate", "--config", "x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn live_backend_without_key_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["ingest", "segment", "filter"] {
        ok(&stancelab(&[stage], &e2e(), dir.path(), &[]));
    }
    let out = stancelab(&["classify"], &e2e(), dir.path(), &["backend=live"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("STANCELAB_API_KEY"));
}

#[test]
fn unwritable_cache_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["ingest", "segment", "filter"] {
        ok(&stancelab(&[stage], &e2e(), dir.path(), &[]));
    }
    let blocked = dir.path().join("blocked");
    fs::create_dir(&blocked).unwrap();
    let out = stancelab(
        &["classify"],
        &e2e(),
        dir.path(),
        &[&format!("cache_path={}", blocked.display())],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn replay_cache_miss_records_failures() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["ingest", "segment", "filter"] {
        ok(&stancelab(&[stage], &e2e(), dir.path(), &[]));
    }
    ok(&stancelab(
        &["classify"],
        &e2e(),
        dir.path(),
        &["backend=replay"],
    ));
    let records = fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 9);
    for line in records.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["outcome"]["status"], "failed");
        assert_eq!(v["attempts"], 1);
    }
    ok(&stancelab(&["report"], &e2e(), dir.path(), &[]));
    let csv = fs::read_to_string(dir.path().join("breakdown.csv")).unwrap();
    assert!(csv.contains("TOTAL,AU,4,0,,0,,0,4"), "{csv}");
}

#[test]
fn annotation_agreement_and_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    ok(&stancelab(&["all"], &e2e(), dir.path(), &[]));
    let labels = fixture("e2e/labels.tsv");
    ok(&stancelab(
        &["annotate"],
        &e2e(),
        dir.path(),
        &[&format!("annotate_import={}", labels.display())],
    ));
    let sample = fs::read_to_string(dir.path().join("annotation_sample.jsonl")).unwrap();
    assert_eq!(sample.lines().count(), 6);
    assert_eq!(
        fs::read_to_string(dir.path().join("sessions.jsonl"))
            .unwrap()
            .lines()
            .count(),
        13
    );

    let out = stancelab(&["agree"], &e2e(), dir.path(), &[]);
    ok(&out);
    let agreement: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("agreement.json")).unwrap()).unwrap();
    // Agree on 5 of 6; chance term 1·1 + 2·3 + 3·2 = 13: (36 − 13) → (30 − 13) / 23.
    assert!((agreement["kappa"].as_f64().unwrap() - 17.0 / 23.0).abs() < 1e-12);

    ok(&stancelab(&["evaluate"], &e2e(), dir.path(), &[]));
    let eval: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(eval["n_evaluated"], 6);
    assert!((eval["metrics"]["accuracy"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-12);
    assert_eq!(eval["metrics"]["micro_f1"], eval["metrics"]["accuracy"]);
}

#[test]
fn evaluate_with_gold_file() {
    let dir = tempfile::tempdir().unwrap();
    ok(&stancelab(&["all"], &e2e(), dir.path(), &[]));
    let gold = dir.path().join("gold.jsonl");
    fs::write(
        &gold,
        "{\"sentence_id\":\"uk-phe:1\",\"label\":\"helpful\"}\n{\"sentence_id\":\"uk-ash:1\",\"label\":\"harmful\"}\n{\"sentence_id\":\"nowhere:0\",\"label\":\"neither\"}\n",
    )
    .unwrap();
    ok(&stancelab(
        &["evaluate"],
        &e2e(),
        dir.path(),
        &[&format!("gold_path={}", gold.display())],
    ));
    let eval: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("evaluation.json")).unwrap()).unwrap();
    assert_eq!(eval["n_gold"], 3);
    assert_eq!(eval["n_evaluated"], 2);
    assert_eq!(eval["n_unclassified"], 1);
    assert_eq!(eval["metrics"]["accuracy"], 0.5);
    assert!(eval["metrics"]["per_class"]["harmful"]["precision"].is_null());
}

fn http(port: u16, method: &str, path: &str, body: &str) -> (u16, String) {
    use std::io::{Read, Write};
    let mut s = std::net::TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let status = resp[9..12].parse().unwrap();
    let body = resp
        .split_once("\r\n\r\n")
        .map(|(_, b)| b.to_string())
        .unwrap_or_default();
    (status, body)
}

fn strip_at(log: &str) -> Vec<serde_json::Value> {
    log.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("at");
            v
        })
        .collect()
}

#[test]
fn http_labeling_matches_import() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let labels = fixture("e2e/labels.tsv");
    ok(&stancelab(&["all"], &e2e(), a.path(), &[]));
    ok(&stancelab(
        &["annotate"],
        &e2e(),
        a.path(),
        &[&format!("annotate_import={}", labels.display())],
    ));

    ok(&stancelab(&["all"], &e2e(), b.path(), &[]));
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_stancelab"))
        .args(["annotate", "--config"])
        .arg(e2e())
        .arg("--set")
        .arg(format!("work_dir={}", b.path().display()))
        .arg("--set")
        .arg(format!("annotation_port={port}"))
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let started = std::time::Instant::now();
    while std::net::TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(started.elapsed().as_secs() < 20, "server did not start");
        std::thread::sleep(std::time::Duration::from_millis(50));
    }

    let tsv = fs::read_to_string(&labels).unwrap();
    for line in tsv
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
    {
        let f: Vec<&str> = line.split('\t').collect();
        let (status, body) = http(
            port,
            "POST",
            &format!("/api/sessions/{}/labels", f[0]),
            &serde_json::json!({"sentence_id": f[1], "label": f[2]}).to_string(),
        );
        assert_eq!(status, 200, "{body}");
    }
    let (status, body) = http(port, "GET", "/api/agreement?a=ann_a&b=ann_b", "");
    assert_eq!(status, 200, "{body}");
    let served: serde_json::Value = serde_json::from_str(&body).unwrap();
    let (status, _) = http(port, "GET", "/", "");
    assert_eq!(status, 200);
    child.kill().unwrap();
    child.wait().unwrap();

    let log_a = fs::read_to_string(a.path().join("sessions.jsonl")).unwrap();
    let log_b = fs::read_to_string(b.path().join("sessions.jsonl")).unwrap();
    assert_eq!(strip_at(&log_a), strip_at(&log_b));

    ok(&stancelab(&["agree"], &e2e(), a.path(), &[]));
    let cli: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("agreement.json")).unwrap()).unwrap();
    assert!(served["kappa"].is_f64());
    assert_eq!(served, cli);
}

#[test]
fn summary_fixture_breakdown() {
    let dir = tempfile::tempdir().unwrap();
    ok(&stancelab(
        &["all"],
        &fixture("summary/stancelab.conf"),
        dir.path(),
        &[],
    ));
    assert_eq!(
        fs::read_to_string(dir.path().join("breakdown.csv")).unwrap(),
        fs::read_to_string(fixture("summary/expected_breakdown.csv")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("records.jsonl")).unwrap(),
        fs::read(fixture("summary/records.jsonl")).unwrap()
    );
}
