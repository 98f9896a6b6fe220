mod common;

use std::fs;
use std::net::TcpListener;

use common::{assert_golden, json, run, stderr, stdout};
use serde_json::Value;

const SKY: &[&str] = &[
    "analyze",
    "--prompt",
    "Why is the sky blue",
    "--backend",
    "mock:echo",
    "--ratio",
    "0.0",
    "--seed",
    "7",
];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_owned(home: &std::path::Path, args: &[String]) -> std::process::Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(home, &refs)
}

#[test]
fn analyze_golden_output() {
    let home = tempfile::tempdir().unwrap();
    let out = run_owned(home.path(), &with(SKY, &["--deterministic", "--no-cache"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["units"].as_array().unwrap().len(), 5);
    assert_eq!(doc["plan_size"], 5);
    assert_eq!(doc["model_calls"], 6);
    assert_eq!(doc["seed"], 7);
    assert_eq!(doc["config"]["seed"], 7);
    assert_golden("analyze_sky.json", &stdout(&out));
}

#[test]
fn output_matches_published_schema() {
    let schema: Value = serde_json::from_str(
        &fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../docs/result.schema.json"
        ))
        .unwrap(),
    )
    .unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let home = tempfile::tempdir().unwrap();
    for args in [
        with(SKY, &[]),
        vec![
            "exact".into(),
            "--prompt".into(),
            "a b c d".into(),
            "--backend".into(),
            "mock:sorted-signature".into(),
        ],
        with(SKY, &["--normalization", "minmax", "--splitter", "pattern:\\s+"]),
    ] {
        let out = run_owned(home.path(), &args);
        assert!(out.status.success(), "{}", stderr(&out));
        let doc = json(&out);
        let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{args:?}: {errors:?}");
    }
    // The schema is strict enough to reject a trimmed document.
    let mut doc = json(&run_owned(home.path(), &with(SKY, &[])));
    doc.as_object_mut().unwrap().remove("phi_raw");
    assert!(!validator.is_valid(&doc));
}

#[test]
fn generated_seed_is_echoed_and_reproduces() {
    let home = tempfile::tempdir().unwrap();
    let args = [
        "analyze",
        "--prompt",
        "one two three four five six",
        "--backend",
        "mock:sorted-signature",
        "--ratio",
        "0.4",
        "--no-cache",
    ];
    let first = json(&run(home.path(), &args));
    let seed = first["config"]["seed"].as_u64().expect("seed echoed");
    assert_eq!(first["seed"].as_u64(), Some(seed));
    let mut again: Vec<&str> = args.to_vec();
    let seed_text = seed.to_string();
    again.extend(["--seed", &seed_text]);
    let second = json(&run(home.path(), &again));
    assert_eq!(first["phi_raw"], second["phi_raw"]);
}

#[test]
fn missing_prompt_is_usage_error() {
    let home = tempfile::tempdir().unwrap();
    let out = run(home.path(), &["analyze", "--backend", "mock:echo"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_flag_values_are_usage_errors() {
    let home = tempfile::tempdir().unwrap();
    for extra in [
        ["--ratio", "1.5"],
        ["--normalization", "l7"],
        ["--splitter", "pattern:("],
    ] {
        let out = run_owned(home.path(), &with(SKY[..5].as_ref(), &extra));
        assert_eq!(out.status.code(), Some(1), "{extra:?}: {}", stderr(&out));
    }
    let out = run(home.path(), &["analyze", "--prompt", "a b", "--backend", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_and_version_exit_zero() {
    let home = tempfile::tempdir().unwrap();
    assert_eq!(run(home.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(run(home.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn unreachable_backend_exits_2_with_json_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}");
    let home = tempfile::tempdir().unwrap();
    let out = run(
        home.path(),
        &[
            "analyze",
            "--prompt",
            "a b c",
            "--backend",
            "ollama",
            "--base-url",
            &url,
            "--max-retries",
            "0",
            "--json-errors",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], 2);
    assert_eq!(err["error"]["kind"], "backend");
    assert!(err["error"]["message"].as_str().unwrap().contains("unreachable"));
}

#[test]
fn exact_cap_exceeded_exits_3() {
    let home = tempfile::tempdir().unwrap();
    let prompt: Vec<String> = (1..=20).map(|i| format!("w{i}")).collect();
    let out = run(
        home.path(),
        &["exact", "--prompt", &prompt.join(" "), "--backend", "mock:echo"],
    );
    assert_eq!(out.status.code(), Some(3));
    let msg = stderr(&out);
    assert!(msg.contains("20") && msg.contains("16"), "{msg}");
}

#[test]
fn exact_counts_calls_and_matches_full_ratio() {
    let home = tempfile::tempdir().unwrap();
    let prompt = "Explain why the ocean is salty";
    let exact = json(&run(
        home.path(),
        &[
            "exact",
            "--prompt",
            prompt,
            "--backend",
            "mock:sorted-signature",
            "--no-cache",
        ],
    ));
    let n = exact["units"].as_array().unwrap().len();
    assert_eq!(exact["model_calls"], (1u64 << n) - 2 + 1);
    let full = json(&run(
        home.path(),
        &[
            "analyze",
            "--prompt",
            prompt,
            "--backend",
            "mock:sorted-signature",
            "--ratio",
            "1.0",
            "--seed",
            "5",
            "--no-cache",
        ],
    ));
    // Compared as JSON numbers, which round-trip f64 exactly.
    assert_eq!(exact["phi_raw"], full["phi_raw"]);
    assert_eq!(exact["mode"], "exact");
}

#[test]
fn exact_five_units_makes_31_calls() {
    let home = tempfile::tempdir().unwrap();
    let out = json(&run(
        home.path(),
        &[
            "exact",
            "--prompt",
            "Why is the sky blue",
            "--backend",
            "mock:echo",
        ],
    ));
    assert_eq!(out["model_calls"], 31);
    assert_eq!(out["plan_size"], 30);
}

#[test]
fn cache_stats_and_clear() {
    let home = tempfile::tempdir().unwrap();
    let dir = home.path().join("responses");
    let dir_s = dir.to_str().unwrap();
    let stats = |home: &std::path::Path| stdout(&run(home, &["cache", "stats", "--cache-dir", dir_s]));
    assert!(stats(home.path()).contains("entries: 0"));

    let out = run_owned(home.path(), &with(SKY, &["--cache-dir", dir_s]));
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(
        stats(home.path()).contains("entries: 6"),
        "{}",
        stats(home.path())
    );

    let cleared = run(home.path(), &["cache", "clear", "--cache-dir", dir_s]);
    assert!(stdout(&cleared).contains("removed 6"));
    assert!(stats(home.path()).contains("entries: 0"));
}

#[test]
fn cache_dir_from_env_and_config_file() {
    let home = tempfile::tempdir().unwrap();
    let env_dir = home.path().join("from-env");
    let file_dir = home.path().join("from-file");
    let mut cmd = std::process::Command::new(common::BIN);
    let out = cmd
        .args(SKY)
        .env("HOME", home.path())
        .env("XDG_CONFIG_HOME", home.path().join("config"))
        .env("TOKSHAP_CACHE_DIR", &env_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(json(&out)["config"]["cache_dir"], env_dir.to_str().unwrap());

    let cfg = home.path().join("settings.toml");
    fs::write(
        &cfg,
        format!(
            "cache_dir = {:?}\nnormalization = \"minmax\"\n",
            file_dir.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = std::process::Command::new(common::BIN)
        .args(SKY)
        .args(["--config", cfg.to_str().unwrap()])
        .env("HOME", home.path())
        .env("TOKSHAP_CACHE_DIR", &env_dir)
        .output()
        .unwrap();
    let doc = json(&out);
    assert_eq!(doc["config"]["cache_dir"], file_dir.to_str().unwrap());
    assert_eq!(doc["normalization"], "minmax");

    let out = run(
        home.path(),
        &[
            "analyze",
            "--prompt",
            "a b",
            "--backend",
            "mock:echo",
            "--config",
            "/nonexistent/x.toml",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn cache_permission_failure_exits_3() {
    let home = tempfile::tempdir().unwrap();
    // A regular file where the directory should be.
    let blocker = home.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let dir = blocker.join("cache");
    let out = run(
        home.path(),
        &["cache", "stats", "--cache-dir", dir.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn out_html_and_ansi_files() {
    let home = tempfile::tempdir().unwrap();
    let out_path = home.path().join("r.json");
    let html_path = home.path().join("r.html");
    let out = run_owned(
        home.path(),
        &with(
            SKY,
            &[
                "--out",
                out_path.to_str().unwrap(),
                "--html",
                html_path.to_str().unwrap(),
                "--ansi",
            ],
        ),
    );
    assert!(out.status.success());
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(doc["plan_size"], 5);
    assert_eq!(
        fs::read_to_string(&html_path)
            .unwrap()
            .matches("class=\"tok\"")
            .count(),
        5
    );
    // With --out, stdout holds the heatmap: one SGR set and one reset per unit.
    let text = stdout(&out);
    assert_eq!(text.matches("\x1b[0m").count(), 5);
    assert_eq!(text.matches("\x1b[38;2;").count(), 5);
}

#[test]
fn ansi_goes_to_stderr_when_json_is_on_stdout() {
    let home = tempfile::tempdir().unwrap();
    let out = run_owned(home.path(), &with(SKY, &["--ansi", "--no-color"]));
    json(&out);
    assert!(stderr(&out).contains("Why[+0.000]"));
}

#[test]
fn experiment_inject_summaries() {
    let home = tempfile::tempdir().unwrap();
    let reports = home.path().join("reports");
    let out = run(
        home.path(),
        &[
            "experiment",
            "inject",
            "--corpus",
            "sample",
            "--methods",
            "random,tokenshap",
            "--backend",
            "mock:drop-stoplist",
            "--seeds",
            "1..50",
            "--out-dir",
            reports.to_str().unwrap(),
            "--no-cache",
            "--deterministic",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.lines().any(|l| l.starts_with("random")));
    assert!(table.lines().any(|l| l.starts_with("tokenshap")));

    let stem = reports.join("inject-19700101T000000Z-1");
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(stem.with_extension("json")).unwrap()).unwrap();
    let methods: Vec<&str> = summary["summary"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, ["random", "tokenshap"]);
    assert!(stem.with_extension("csv").is_file());
    assert!(stem.with_extension("schema.json").is_file());

    let mut csv = csv::Reader::from_path(stem.with_extension("csv")).unwrap();
    let header: Vec<String> = csv.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        [
            "method",
            "prompt_index",
            "seed",
            "group",
            "unit_index",
            "unit",
            "score"
        ]
    );
}

#[test]
fn experiment_converge_row_count() {
    let home = tempfile::tempdir().unwrap();
    let reports = home.path().join("reports");
    let out = run(
        home.path(),
        &[
            "experiment",
            "converge",
            "--ratios",
            "0,0.2,0.4,0.6,0.8,1.0",
            "--with-and-without-first-order",
            "--backend",
            "mock:sorted-signature",
            "--out-dir",
            reports.to_str().unwrap(),
            "--no-cache",
            "--deterministic",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(reports.join("converge-19700101T000000Z-1.json")).unwrap())
            .unwrap();
    assert_eq!(summary["aggregates"].as_array().unwrap().len(), 12);
    // Header plus 12 aggregate lines plus the report path.
    assert_eq!(stdout(&out).lines().count(), 14);
}

#[test]
fn empty_or_broken_corpus_exits_3() {
    let home = tempfile::tempdir().unwrap();
    let empty = home.path().join("empty.jsonl");
    fs::write(&empty, "\n\n").unwrap();
    let out = run(
        home.path(),
        &[
            "experiment",
            "inject",
            "--corpus",
            empty.to_str().unwrap(),
            "--backend",
            "mock:echo",
        ],
    );
    assert_eq!(out.status.code(), Some(3));

    let broken = home.path().join("broken.jsonl");
    fs::write(&broken, "{\"prompt\": \"fine prompt here\"}\n{\"prompt\": \n").unwrap();
    let out = run(
        home.path(),
        &[
            "experiment",
            "converge",
            "--corpus",
            broken.to_str().unwrap(),
            "--backend",
            "mock:echo",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains(":2:"), "{}", stderr(&out));
}
