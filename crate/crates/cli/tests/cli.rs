use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn btme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btme"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> String {
    path_str(&repo().join("fixtures").join(name)).to_string()
}

#[test]
fn help_exits_zero_and_lists_config_keys() {
    for args in [vec!["--help"], vec!["rank", "--help"]] {
        let out = btme(&args);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8_lossy(&out.stdout);
        for key in [
            "seed",
            "samples",
            "chains",
            "u =",
            "proposal_sd",
            "weight_proposal",
            "dirichlet_proposal_concentration",
            "burn_in",
            "thin",
            "top_orders",
            "[[features]]",
            "name",
            "goal",
            "range",
            "importance",
            "alpha",
            "deviation",
        ] {
            assert!(text.contains(key), "help lacks {key}");
        }
    }
}

#[test]
fn missing_features_key_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "seed = 1\nsamples = 100\n").unwrap();
    let out = btme(&[
        "rank",
        "--data",
        &fixture("synthetic_8x10x4.csv"),
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1);
    let line: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(line["error"], "config");
    assert!(line["message"].as_str().unwrap().contains("features"));
}

#[test]
fn bad_usage_exits_two() {
    assert_eq!(btme(&["rank"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = btme(&["bench", "--grid", "K=2", "Q=1", "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = btme(&["simulate", "--k", "1", "--m", "1", "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_summary_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "1", "3"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{i}"));
        let out = btme(&[
            "rank",
            "--data",
            &fixture("synthetic_8x10x4.csv"),
            "--config",
            &fixture("synthetic_8x10x4.toml"),
            "--out",
            path_str(&out_dir),
            "--seed",
            "7",
            "--samples",
            "3000",
            "--threads",
            threads,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(fs::read(out_dir.join("summary.json")).unwrap());
        assert!(out_dir.join("tie_report.json").exists());
        assert!(!out_dir.join("draws.csv").exists());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn bundled_fixture_matches_golden_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = btme(&[
        "rank",
        "--data",
        &fixture("synthetic_8x10x4.csv"),
        "--config",
        &fixture("synthetic_8x10x4.toml"),
        "--out",
        path_str(dir.path()),
    ]);
    assert!(out.status.success());
    let got = fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let want = fs::read_to_string(repo().join("fixtures/golden/summary.json")).unwrap();
    assert!(got == want, "summary.json differs from fixtures/golden/summary.json");
    let summary: serde_json::Value = serde_json::from_str(&got).unwrap();
    assert_eq!(summary["treatments"].as_array().unwrap().len(), 8);
    assert_eq!(summary["ranking"][0]["order"].as_array().unwrap().len(), 8);
}

#[test]
fn simulate_two_by_one_writes_two_ordered_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = btme(&[
            "simulate",
            "--k",
            "2",
            "--m",
            "1",
            "--seed",
            "3",
            "--out",
            path_str(&out_dir),
        ]);
        assert!(out.status.success());
        out_dir
    };
    let a = run("a");
    let csv = fs::read_to_string(a.join("comparisons.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    let counts: u64 = rows
        .iter()
        .map(|r| r.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(counts, 100);
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("truth.json")).unwrap()).unwrap();
    for row in truth["w"].as_array().unwrap() {
        let s: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    let b = run("b");
    assert_eq!(
        fs::read(a.join("comparisons.csv")).unwrap(),
        fs::read(b.join("comparisons.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("truth.json")).unwrap(),
        fs::read(b.join("truth.json")).unwrap()
    );
}

#[test]
fn simulated_counts_can_be_ranked_with_draws() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert!(btme(&[
        "simulate",
        "--k",
        "3",
        "--m",
        "2",
        "--seed",
        "5",
        "--out",
        path_str(&sim)
    ])
    .status
    .success());
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "samples = 400\nchains = 2\n[[features]]\nname = \"f2\"\ngoal = \"max\"\n[[features]]\nname = \"f1\"\ngoal = \"max\"\n",
    )
    .unwrap();
    let out_dir = dir.path().join("rank");
    let out = btme(&[
        "rank",
        "--comparisons",
        path_str(&sim.join("comparisons.csv")),
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&out_dir),
        "--draws",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let draws = fs::read_to_string(out_dir.join("draws.csv")).unwrap();
    assert!(draws.starts_with("chain,iter,param,index,value\n"));
    // 2 chains x 400 iterations x (3 indexes + 6 weights)
    assert_eq!(draws.lines().count(), 1 + 2 * 400 * 9);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["features"], serde_json::json!(["f2", "f1"]));
}

#[test]
fn bench_smoke_run_writes_two_spearman_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = btme(&[
        "bench",
        "--grid",
        "K=2",
        "M=1",
        "--replicates",
        "2",
        "--samples",
        "1000",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("study.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",spearman,")).count(), 2);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("study.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["samples"], 1000);
    assert_eq!(json["scenarios"].as_array().unwrap().len(), 1);
}
