use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn pivotal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pivotal"))
        .args(args)
        .env_remove("PIVOTAL_JOBS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn sample_is_deterministic_under_a_seed() {
    let dir = TempDir::new().unwrap();
    let w = write(dir.path(), "w.csv", "id,weight\na,0.1\nb,0.2\nc,0.3\nd,0.15\ne,0.25\n");
    for procedure in ["x", "x-star", "x-star-star"] {
        let args = ["sample", p(&w), "--k", "2", "--procedure", procedure, "--seed", "9", "--count", "50"];
        let first = pivotal(&args);
        let second = pivotal(&args);
        assert!(first.status.success());
        assert_eq!(first.stdout, second.stdout);
        let lines: Vec<Value> = stdout(&first).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 50);
        for line in &lines {
            assert_eq!(line["seed"], 9);
            assert_eq!(line["sample"].as_array().unwrap().len(), 2);
        }
    }
}

#[test]
fn sample_reports_generated_seed() {
    let dir = TempDir::new().unwrap();
    let w = write(dir.path(), "w.json", "[0.5, 0.5]");
    let out = pivotal(&["sample", p(&w), "--k", "1"]);
    assert!(out.status.success());
    let line: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    let seed = line["seed"].as_u64().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains(&seed.to_string()));
}

#[test]
fn sample_frequency_matches_weight() {
    let dir = TempDir::new().unwrap();
    let w = write(dir.path(), "w.csv", "id,weight\nzero,0.3\none,0.7\n");
    let out = pivotal(&["sample", p(&w), "--k", "1", "--count", "1000000", "--seed", "42"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let mut total = 0u64;
    let mut hits = 0u64;
    for line in text.lines() {
        total += 1;
        if line.contains("\"sample\":[\"zero\"]") {
            hits += 1;
        }
    }
    assert_eq!(total, 1_000_000);
    let fraction = hits as f64 / total as f64;
    assert!((fraction - 0.3).abs() <= 4.0 * 0.00046, "fraction {fraction}");
}

#[test]
fn full_sample_when_n_equals_k() {
    let dir = TempDir::new().unwrap();
    let w = write(dir.path(), "w.csv", "weight\n1\n1\n1\n");
    let out = pivotal(&["sample", p(&w), "--k", "3", "--normalize", "--seed", "1", "--count", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for line in stdout(&out).lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["sample"], serde_json::json!([0, 1, 2]));
    }
}

#[test]
fn trace_and_rounds_are_reported() {
    let dir = TempDir::new().unwrap();
    let w = write(dir.path(), "w.json", "[0.1, 0.2, 0.3, 0.15, 0.25]");
    let out = pivotal(&["sample", p(&w), "--k", "2", "--procedure", "x-star", "--trace", "--seed", "3"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(v["rounds"], 2);
    assert!(!v["trace"]["steps"].as_array().unwrap().is_empty());
}

#[test]
fn invalid_weights_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let w = write(dir.path(), "w.csv", "weight\n0.9\n0.1\n");
    let a = write(dir.path(), "a.json", "[0]");
    let out = pivotal(&["sample", p(&w), "--k", "2", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("WeightTooLarge"));
    let out = pivotal(&["verify", p(&w), "--k", "2", "--subset-file", p(&a), "--delta", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("WeightTooLarge"));

    let garbled = write(dir.path(), "g.csv", "weight\nabc\n");
    assert_eq!(pivotal(&["sample", p(&garbled), "--k", "1"]).status.code(), Some(2));
    let missing = dir.path().join("missing.csv");
    assert_eq!(pivotal(&["sample", p(&missing), "--k", "1"]).status.code(), Some(2));
}

#[test]
fn bounds_reproduce_table_column() {
    let out = pivotal(&["bounds", "--alpha", "0.2", "--delta", "1/3-1/5", "--k", "100", "--m", "inf"]);
    assert!(out.status.success());
    let v = json(&out);
    let upper = &v["reports"][0];
    assert!((upper["freedman"].as_f64().unwrap() - 0.0249).abs() <= 5e-5);
    assert!((upper["fgl"].as_f64().unwrap() - 0.0212).abs() <= 5e-5);
    assert_eq!(v["inputs"]["provenance"]["kind"], "eta_bar");
}

#[test]
fn zero_delta_gives_trivial_bounds() {
    let out = pivotal(&["bounds", "--alpha", "0.2", "--delta", "0", "--k", "100", "--m", "inf"]);
    assert!(out.status.success());
    for report in json(&out)["reports"].as_array().unwrap() {
        for key in ["chernoff", "hoeffding_simple", "azuma", "freedman", "freedman_simplified", "fgl"] {
            assert_eq!(report[key].as_f64().unwrap(), 1.0, "{key}");
        }
    }
}

#[test]
fn exact_eta_bounds_are_no_worse_than_eta_bar() {
    let dir = TempDir::new().unwrap();
    let weights: Vec<String> = (1..=20).map(|i| format!("{}", i as f64 / 210.0)).collect();
    let w = write(dir.path(), "w.json", &format!("[{}]", weights.join(",")));
    let a = write(dir.path(), "a.json", "[0, 3, 7, 12, 19]");
    let exact = json(&pivotal(&[
        "bounds", "--weights-file", p(&w), "--subset-file", p(&a), "--k", "5", "--delta", "0.1",
    ]));
    let alpha = exact["inputs"]["alpha"].as_f64().unwrap();
    assert_eq!(exact["inputs"]["provenance"]["kind"], "exact");
    let alpha_arg = alpha.to_string();
    for m in ["inf", "5"] {
        let bar = json(&pivotal(&["bounds", "--alpha", &alpha_arg, "--delta", "0.1", "--k", "5", "--m", m]));
        for (e, b) in exact["reports"].as_array().unwrap().iter().zip(bar["reports"].as_array().unwrap()) {
            for key in ["freedman", "fgl"] {
                assert!(e[key].as_f64().unwrap() <= b[key].as_f64().unwrap() + 1e-12, "{key} m={m}");
            }
        }
    }
}

#[test]
fn inconsistent_bounds_flags_exit_two() {
    let out = pivotal(&["bounds", "--delta", "0.1", "--k", "10"]);
    assert_eq!(out.status.code(), Some(2));
    let out = pivotal(&["bounds", "--alpha", "1.5", "--delta", "0.1", "--k", "10", "--m", "inf"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn table_defaults() {
    let out = pivotal(&["table", "--format", "json"]);
    assert!(out.status.success());
    let v = json(&out);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let expected = [
        [0.0077, 0.0077, 0.0077, 0.0077],
        [0.0249, 0.0233, 0.0117, 0.0037],
        [0.0212, 0.0198, 0.0097, 0.0029],
    ];
    for (row, want) in rows.iter().zip(expected) {
        let values: Vec<f64> = row["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        for (got, want) in values.iter().zip(want) {
            assert!((got - want).abs() <= 5e-5, "{} {got} vs {want}", row["label"]);
        }
    }
    let pretty = stdout(&pivotal(&["table"]));
    assert!(pretty.contains("Procedure X* (pi*)"));
    assert_eq!(pretty, stdout(&pivotal(&["table"])));
}

#[test]
fn table_single_column_and_csv() {
    let out = pivotal(&["table", "--m-list", "inf", "--format", "csv"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[1].split(',').count(), 2);
}

#[test]
fn verify_exact_passes_on_small_instance() {
    let dir = TempDir::new().unwrap();
    let w = write(dir.path(), "w.json", "[0.1, 0.25, 0.05, 0.2, 0.15, 0.25]");
    let a = write(dir.path(), "a.json", "[0, 1, 4]");
    for procedure in ["x", "x-star", "x-star-star"] {
        let out = pivotal(&[
            "verify", p(&w), "--k", "2", "--subset-file", p(&a), "--delta", "0.1", "--procedure", procedure,
        ]);
        assert_eq!(out.status.code(), Some(0), "{procedure}: {}", stdout(&out));
        let v = json(&out);
        assert_eq!(v["pass"], true);
        assert!(v["verdicts"].as_array().unwrap().iter().all(|x| x["pass"] == true));
    }
}

#[test]
fn verify_mc_passes_on_two_elements() {
    let dir = TempDir::new().unwrap();
    let w = write(dir.path(), "w.csv", "weight\n0.3\n0.7\n");
    let a = write(dir.path(), "a.json", "[0]");
    let args = [
        "verify", p(&w), "--k", "1", "--subset-file", p(&a), "--delta", "0.1", "--mode", "mc", "--trials", "1000",
        "--seed", "5",
    ];
    let out = pivotal(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert_eq!(json(&out)["pass"], true);
    assert_eq!(out.stdout, pivotal(&args).stdout);
}

#[test]
fn verify_mc_report_is_independent_of_jobs() {
    let dir = TempDir::new().unwrap();
    let w = write(dir.path(), "w.json", "[0.1, 0.25, 0.05, 0.2, 0.15, 0.25]");
    let a = write(dir.path(), "a.json", "[0, 1, 4]");
    let run = |jobs: &str| {
        pivotal(&[
            "verify", p(&w), "--k", "2", "--subset-file", p(&a), "--delta", "0.1", "--mode", "mc", "--trials",
            "5000", "--seed", "11", "--policy", "random-pair", "--jobs", jobs,
        ])
        .stdout
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn verify_exact_rejects_large_instances() {
    let dir = TempDir::new().unwrap();
    let w = write(dir.path(), "w.json", &format!("[{}]", vec!["0.0625"; 16].join(",")));
    let a = write(dir.path(), "a.json", "[0]");
    let out = pivotal(&["verify", p(&w), "--k", "1", "--subset-file", p(&a), "--delta", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}
