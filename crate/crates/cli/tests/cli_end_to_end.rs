//! End-to-end runs of the compiled binary: generation determinism,
//! density reporting, the analyze table, and a remote evaluation against
//! the stub server.

use std::path::Path;
use std::process::Command;

use manyshot_cli::corpus::CorpusRecord;
use manyshot_cli::stub::{spawn_ephemeral, StubMode};

fn manyshot() -> Command {
    Command::new(env!("CARGO_BIN_EXE_manyshot"))
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn generate_is_byte_identical_across_runs_and_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a.jsonl");
    let out_b = dir.path().join("b.jsonl");
    let out_c = dir.path().join("c.jsonl");
    let config = dir.path().join("cfg.txt");
    std::fs::write(&config, "m_max = 64\nmaster_seed = 9\n").unwrap();

    for (out, workers) in [(&out_a, "1"), (&out_b, "4"), (&out_c, "4")] {
        let status = manyshot()
            .args(["generate", "--config"])
            .arg(&config)
            .args(["--count", "8", "--workers", workers, "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(read(&out_a), read(&out_b));
    assert_eq!(read(&out_b), read(&out_c));
    assert_eq!(String::from_utf8(read(&out_a)).unwrap().lines().count(), 8);
}

#[test]
fn truncation_keeps_big_tasks_out_of_the_infeasible_corner() {
    // Under the digit-level profile a 32k budget cannot hold 513+ shots
    // at 42+ features, so that density cell must stay empty.
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let csv = dir.path().join("density.csv");
    let config = dir.path().join("cfg.txt");
    std::fs::write(&config, "budget_profile = digit-level\nmaster_seed = 4\n").unwrap();

    let status = manyshot()
        .args(["generate", "--config"])
        .arg(&config)
        .args(["--count", "60", "--workers", "8", "--out"])
        .arg(&corpus)
        .status()
        .unwrap();
    assert!(status.success());

    let records: Vec<CorpusRecord> = std::fs::read_to_string(&corpus)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(
        records.iter().any(|r| r.m_raw > r.m),
        "no task was actually truncated; corner check would be vacuous"
    );
    for r in &records {
        let cost = r.costs.iter().find(|c| c.profile == "digit-level").unwrap();
        assert!(cost.total <= 32_768);
        if r.d >= 42 {
            assert!(r.m < 513, "d = {} task kept {} shots", r.d, r.m);
        }
    }

    let output = manyshot()
        .args(["density", "--corpus"])
        .arg(&corpus)
        .args(["--csv"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("total tasks: 60"));
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.contains("d42-50,m0513-1024,0"));
}

#[test]
fn analyze_tokens_prints_the_boxed_ratios() {
    let output = manyshot().arg("analyze-tokens").output().unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("5.5x"));
    assert!(stdout.contains("3.2x"));
    assert!(stdout.contains("47.7x"));
}

#[test]
fn eval_against_the_stub_completes_with_zero_parse_failures() {
    let addr = spawn_ephemeral(StubMode::Cycle).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let output = manyshot()
        .args([
            "eval",
            "--backend",
            "remote",
            "--endpoint",
            &addr.to_string(),
            "--synthetic-tasks",
            "2",
            "--rows",
            "220",
            "--shots",
            "8,16",
            "--v",
            "3",
            "--n",
            "20",
            "--seed",
            "5",
            "--labels-only",
            "--out",
        ])
        .arg(&report_path)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["failed_chunks"], 0);
    for task in report["tasks"].as_array().unwrap() {
        for slice in task["report"]["slices"].as_array().unwrap() {
            assert_eq!(slice["chunks_failed"], 0);
            assert!(slice["parse_failures"].as_object().unwrap().is_empty());
        }
    }
}

#[test]
fn eval_csv_dataset_with_knn_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    let mut text = String::from("f0,f1,label\n");
    for i in 0..160 {
        let class = i % 2;
        let x0 = if class == 0 { -1.0 - i as f64 * 0.01 } else { 1.0 + i as f64 * 0.01 };
        text.push_str(&format!("{x0},{},{class}\n", i as f64 * 0.05));
    }
    std::fs::write(&csv, text).unwrap();
    let output = manyshot()
        .args(["eval", "--backend", "knn", "--dataset"])
        .arg(&csv)
        .args(["--shots", "8,32", "--v", "1", "--n", "16", "--seed", "2"])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("backend knn"));
}
