use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn duplex(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_duplex"))
        .args(args)
        .env_remove("DUPLEX_CONFIG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut input = child.stdin.take().unwrap();
    if let Some(text) = stdin {
        input.write_all(text.as_bytes()).unwrap();
    }
    drop(input);
    child.wait_with_output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    duplex(args, None).status.code().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = duplex(args, None);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small trained model, enough for the console and eval paths.
fn model(dir: &Path) -> std::path::PathBuf {
    let (data, out) = (dir.join("train.json"), dir.join("model.json"));
    ok(&["generate", "mixed", "40", "--seed", "5", "--out", s(&data)]);
    ok(&[
        "--set",
        "training.steps=30",
        "train",
        "sft",
        "--data",
        s(&data),
        "--out",
        s(&out),
    ]);
    out
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["generate", "mixed", "0"]), 2);
    assert_eq!(code(&["generate", "no-such-kind", "3"]), 2);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"no_such_field": 1}"#).unwrap();
    let out = s(&dir.path().join("x.json")).to_string();
    assert_eq!(
        code(&["--config", s(&bad), "generate", "mixed", "2", "--out", &out]),
        3
    );
    assert_eq!(
        code(&[
            "--set",
            "timing.block_ms=\"fast\"",
            "generate",
            "mixed",
            "2",
            "--out",
            &out
        ]),
        3
    );
}

#[test]
fn missing_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = dir.path().join("out");
    assert_eq!(
        code(&["eval", "--oracle", "--suite", s(&missing), "--out", s(&out)]),
        4
    );
    assert_eq!(
        code(&["console", "--model", s(&missing), "--no-realtime"]),
        4
    );
    assert_eq!(code(&["inspect", s(&missing)]), 4);
    assert_eq!(code(&["latency-report", s(&missing)]), 4);
}

#[test]
fn malformed_data_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{ not json").unwrap();
    assert_eq!(code(&["inspect", s(&junk)]), 6);
    assert_eq!(
        code(&[
            "eval",
            "--oracle",
            "--suite",
            s(&junk),
            "--out",
            s(&dir.path().join("o"))
        ]),
        6
    );
    let m = model(dir.path());
    let suite = dir.path().join("train.json");
    let out = dir.path().join("e");
    // the model was trained for the default strategy
    assert_eq!(
        code(&[
            "--set",
            "strategy=\"implicit\"",
            "eval",
            "--model",
            s(&m),
            "--suite",
            s(&suite),
            "--out",
            s(&out)
        ]),
        6
    );
}

#[test]
fn generate_is_deterministic_and_inspectable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    ok(&[
        "generate",
        "barge-in-dependent",
        "30",
        "--seed",
        "9",
        "--out",
        s(&a),
    ]);
    ok(&[
        "generate",
        "barge-in-dependent",
        "30",
        "--seed",
        "9",
        "--out",
        s(&b),
    ]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a.manifest.json")).unwrap(),
        std::fs::read(dir.path().join("b.manifest.json")).unwrap()
    );
    let summary = ok(&["inspect", s(&a)]);
    assert!(summary.contains("30"), "{summary}");
    ok(&["inspect", s(&dir.path().join("a.manifest.json"))]);
}

#[test]
fn oracle_eval_writes_reports_and_latency() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("tt.json");
    let out = dir.path().join("eval");
    ok(&[
        "generate",
        "turn-taking",
        "20",
        "--seed",
        "3",
        "--out",
        s(&suite),
    ]);
    ok(&[
        "eval",
        "--oracle",
        "--suite",
        s(&suite),
        "--echo",
        "0,1",
        "--out",
        s(&out),
        "--strict",
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    let latency = dir.path().join("latency.json");
    let text = ok(&[
        "latency-report",
        s(&out.join("transcripts")),
        "--out",
        s(&latency),
    ]);
    assert!(text.starts_with("40 transcripts"), "{text}");
    let l: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(latency).unwrap()).unwrap();
    assert_eq!(l["turn_taking_ms"]["p50"], 320);
}

#[test]
fn console_session_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(dir.path());
    let (session, suite, eval) = (
        dir.path().join("s.jsonl"),
        dir.path().join("s.json"),
        dir.path().join("eval"),
    );
    let script = "say 10\nstep 20\nbarge --relevance 0.9\nstep 6\nthird say 3\nstep 30\nquit\n";
    let out = duplex(
        &[
            "console",
            "--model",
            s(&m),
            "--no-realtime",
            "--out",
            s(&session),
            "--save-suite",
            s(&suite),
        ],
        Some(script),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    ok(&[
        "eval",
        "--model",
        s(&m),
        "--suite",
        s(&suite),
        "--out",
        s(&eval),
    ]);
    assert_eq!(
        std::fs::read_to_string(&session).unwrap(),
        std::fs::read_to_string(eval.join("transcripts/console.jsonl")).unwrap()
    );
}

#[test]
fn empty_console_session_still_writes_a_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(dir.path());
    let session = dir.path().join("s.jsonl");
    let out = duplex(
        &[
            "console",
            "--model",
            s(&m),
            "--no-realtime",
            "--out",
            s(&session),
        ],
        Some(""),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&session).unwrap();
    // header plus the grace period
    assert!(text.lines().count() > 1);
    ok(&["inspect", s(&session)]);
}

#[test]
fn console_needs_a_model() {
    assert_eq!(code(&["console", "--no-realtime"]), 3);
}

#[test]
fn divergence_exits_7_and_keeps_the_last_good_model() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out) = (dir.path().join("d.json"), dir.path().join("m.json"));
    ok(&["generate", "mixed", "10", "--seed", "1", "--out", s(&data)]);
    let args = [
        "--set",
        "training.lr=1e308",
        "--set",
        "training.optimizer=\"sgd\"",
        "train",
        "sft",
        "--data",
        s(&data),
        "--out",
        s(&out),
    ];
    assert_eq!(code(&args), 7);
    ok(&["inspect", s(&out)]);
}

#[test]
fn strict_eval_flags_violations() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("dep.json");
    ok(&[
        "generate",
        "barge-in-dependent",
        "20",
        "--seed",
        "2",
        "--out",
        s(&suite),
    ]);
    // an untrained model emits text while listening often enough
    let (data, m) = (dir.path().join("t.json"), dir.path().join("m.json"));
    ok(&["generate", "mixed", "5", "--seed", "5", "--out", s(&data)]);
    ok(&[
        "--set",
        "training.steps=1",
        "train",
        "sft",
        "--data",
        s(&data),
        "--out",
        s(&m),
    ]);
    let a = dir.path().join("a");
    let plain = [
        "eval",
        "--model",
        s(&m),
        "--suite",
        s(&suite),
        "--out",
        s(&a),
    ];
    assert_eq!(code(&plain), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/report.json")).unwrap())
            .unwrap();
    let violations = report["rows"][0]["violations"].as_u64().unwrap();
    let strict = [&plain[..], &["--strict"]].concat();
    assert!(violations > 0);
    assert_eq!(code(&strict), 5);
}
