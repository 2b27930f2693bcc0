//! End-to-end checks of the `qcs` binary: exit codes, CSV shape, and
//! rerun determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qcs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcs"))
        .args(args)
        .env("QCS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, json).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL_PARALLEL: &str = r#"{
    "u": 5, "L_km": 1.0, "N": 0, "k": 7,
    "t_fwd_us": 100.0, "c_km_per_us": 0.2, "t_control_us": 0.0,
    "p": {"fixed": 1.0},
    "n": 7, "w": 10, "lambda0_per_us": 1e-4,
    "strategy": "parallel"
}"#;

#[test]
fn eval_reports_the_reference_point() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "scenario.json", SMALL_PARALLEL);
    let out = qcs(&["eval", &path]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("u,L_km,N,k,n,w,lambda0_per_us,strategy,"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("5,1.0,0,7,7,10,0.0001,parallel,7,1,1,0.001,closed_form,1,"));
    assert!(row.contains("116.79775280898876"));
}

#[test]
fn eval_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // Overloaded: u = 6, k = 1 sequential. Exit 3, row still written.
    let overloaded = SMALL_PARALLEL
        .replace("\"k\": 7", "\"k\": 1")
        .replace("\"u\": 5", "\"u\": 6");
    let path = write_scenario(
        dir.path(),
        "over.json",
        &overloaded.replace("parallel", "sequential"),
    );
    let out = qcs(&["eval", &path]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("1.065"), "load must be reported: {text}");

    // Infeasible window: exit 2.
    let bad = SMALL_PARALLEL
        .replace("\"w\": 10", "\"w\": 1")
        .replace("parallel", "sequential");
    let path = write_scenario(dir.path(), "bad.json", &bad);
    let out = qcs(&["eval", &path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("infeasible"));

    // Malformed JSON: exit 2.
    let path = write_scenario(dir.path(), "broken.json", "{ not json");
    let out = qcs(&["eval", &path]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_figure_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("x.csv");
    let out = qcs(&["figure", "fig99", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn figure_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, seed) in [(&a, "11"), (&b, "11")] {
        let out = qcs(&[
            "figure",
            "fig4b",
            "--samples",
            "3000",
            "--seed",
            seed,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let a = fs::read(&a).unwrap();
    let b = fs::read(&b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);

    let text = String::from_utf8(a).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "u,k,mst_seq,mst_seq_se,mst_par,mst_par_se,rel_diff,rel_diff_se,label"
    );
    // The lossy k = 2 column: beyond the parallel limit nobody serves.
    assert!(text
        .lines()
        .any(|l| l.starts_with("20,2,") && l.ends_with(",none")));
}

#[test]
fn sweep_runs_from_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let scenario: serde_json::Value = serde_json::from_str(SMALL_PARALLEL).unwrap();
    let spec = serde_json::json!({
        "scenario": scenario,
        "axes": {"u": [5, 14], "strategy": ["sequential", "parallel"]},
        "seed": 5
    });
    let spec_path = write_scenario(dir.path(), "sweep.json", &spec.to_string());
    let out_path = dir.path().join("sweep.csv");
    let out = qcs(&["sweep", &spec_path, "--out", out_path.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 5); // header + 2 users * 2 strategies
                                         // u = 14 overloads parallel (limit 13) but not sequential (limit 14);
                                         // the unstable row renders as inf without an error.
    assert!(text
        .lines()
        .any(|l| l.starts_with("14,") && l.contains("parallel") && l.contains(",inf,")));
    assert!(text
        .lines()
        .any(|l| l.starts_with("14,") && l.contains("sequential") && !l.contains(",inf,")));
}

#[test]
fn simulate_emits_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "scenario.json", SMALL_PARALLEL);
    let out = qcs(&[
        "simulate",
        &path,
        "--replications",
        "5",
        "--measured",
        "2000",
        "--seed",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("replications,warmup_requests,"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("5,"));
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols.len(), 15);
    let mean_wait: f64 = cols[3].parse().unwrap();
    assert!((mean_wait - 6.8).abs() < 2.0, "wait {mean_wait}");

    // Overloaded simulation is exit 3.
    let overloaded = SMALL_PARALLEL
        .replace("\"k\": 7", "\"k\": 1")
        .replace("\"u\": 5", "\"u\": 6");
    let path = write_scenario(dir.path(), "over.json", &overloaded);
    let out = qcs(&["simulate", &path]);
    assert_eq!(out.status.code(), Some(3));
}
