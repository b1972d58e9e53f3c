use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn prevest() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_prevest"));
    c.env_remove("PREVEST_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    prevest().args(args).output().expect("spawn prevest")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr:\n{}", stderr(&o));
    o
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const MIN_MAX: &str = "population-size = 1000\nseed = 3\n[regimen]\nkind = \"min-max\"\nmin-gap = 5\nmax-gap = 10\ninitial-window = 10\n";

/// Reads the simulated matrix back the way the simulator produced it.
const SIM_POLICY: &str = "[policy]\nresult-delay-days = 0\npost-isolation-exemption-days = 0\n\
                          keep-first-test-per-week = false\nmin-daily-tests = 50\n";

fn report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Per-day estimates by estimator from a series CSV.
fn series(path: &Path) -> Vec<(i64, String, Option<f64>)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "day,kind,estimate,lo,hi,n_tests,n_pos,n_fallback_strata"
    );
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].to_string(), f[2].parse().ok())
        })
        .collect()
}

#[test]
fn simulate_one_replicate_writes_21_rows_quickly() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", MIN_MAX);
    let out = dir.path().join("traj.csv");
    let rep = dir.path().join("report.json");
    ok(run(&["simulate", "--config", s(&cfg), "--out", s(&out), "--report", s(&rep)]));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 22);
    assert!(text.starts_with("day,mean_prevalence,"));
    let r = report(&rep);
    assert_eq!(r["command"], "simulate");
    assert_eq!(r["seed"], 3);
    assert!(r["wall_time_secs"].as_f64().unwrap() < 1.0, "{r}");
    assert!(r["config_digest"].as_str().unwrap().starts_with("sha256:"));
    for p in r["outputs"].as_array().unwrap() {
        assert!(Path::new(p.as_str().unwrap()).exists());
    }
}

#[test]
fn simulate_same_seed_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", MIN_MAX);
    let outs: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|n| {
            let out = dir.path().join(n);
            ok(run(&["simulate", "--config", s(&cfg), "--replicates", "5", "--seed", "11", "--out", s(&out)]));
            fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    let other = dir.path().join("c");
    ok(run(&["simulate", "--config", s(&cfg), "--replicates", "5", "--seed", "12", "--out", s(&other)]));
    assert_ne!(fs::read(other).unwrap(), outs[0]);
}

#[test]
fn zero_replicates_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", MIN_MAX);
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--replicates", "0"])), 2);
}

#[test]
fn config_errors_report_line_numbers() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", "seed = 1\n\nhorizon-days = \"long\"\n[regimen]\nkind = \"once-per-period\"\nperiod = 7\n");
    let o = run(&["simulate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_scenario_lists_valid_names() {
    let dir = TempDir::new().unwrap();
    let o = run(&["scenario", "herd-immunity", "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for name in ["simple-random", "contact-tracing", "clustered"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn malformed_matrix_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "m.csv", "id,2020-08-17,2020-08-18\na,N,\nb,X,P\n");
    let o = run(&["analyze", s(&m)]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["analyze", s(&dir.path().join("none.csv"))])), 5);
}

#[test]
fn contact_tracing_omits_htk_and_min_max_warns_on_few_htk_replicates() {
    let dir = TempDir::new().unwrap();
    let rep = dir.path().join("r.json");
    let common = ["--replicates", "8", "--htk-replicates", "8", "--bootstrap", "0", "--population", "300"];
    let mut args = vec!["scenario", "contact-tracing", "--out", s(dir.path()), "--report", s(&rep)];
    args.extend(common);
    ok(run(&args));
    let text = fs::read_to_string(dir.path().join("contact-tracing.summary.csv")).unwrap();
    assert!(text.starts_with("scenario,estimator,day,mean_estimate,mean_truth,bias,rmse,coverage,bias_se,replicates"));
    assert!(text.contains(",TPR,") && text.contains(",HT-E,"));
    assert!(!text.contains("HT-K"));
    assert!(report(&rep)["warnings"].to_string().contains("not available"));

    let mut args = vec!["scenario", "min-max", "--out", s(dir.path()), "--report", s(&rep), "--format", "jsonl"];
    args.extend(common);
    ok(run(&args));
    let text = fs::read_to_string(dir.path().join("min-max.summary.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(rows.iter().any(|r| r["estimator"] == "HT-K"));
    assert_eq!(rows.iter().filter(|r| r["estimator"] == "TPR").count(), 21);
    assert!(report(&rep)["warnings"].to_string().contains("fewer than the recommended"));
}

#[test]
fn scenario_output_does_not_depend_on_jobs() {
    let dir = TempDir::new().unwrap();
    let outs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|jobs| {
            let out = dir.path().join(jobs);
            let o = prevest()
                .env("PREVEST_JOBS", jobs)
                .args(["scenario", "max-gap", "--out", s(&out), "--replicates", "6"])
                .args(["--htk-replicates", "12", "--bootstrap", "20", "--population", "300", "--seed", "4"])
                .output()
                .unwrap();
            ok(o);
            fs::read(out.join("max-gap.summary.csv")).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn all_absent_matrix_gives_empty_series_with_warning() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "m.csv", "2020-08-17,2020-08-18\n,\n,\n");
    let out = dir.path().join("e.csv");
    let rep = dir.path().join("r.json");
    ok(run(&["estimate", s(&m), "--out", s(&out), "--report", s(&rep)]));
    assert!(series(&out).is_empty());
    let r = report(&rep);
    assert!(r["warnings"].to_string().contains("every day is excluded"));
    assert_eq!(r["excluded_days"], serde_json::json!([1, 2]));
}

/// Simulates a matrix with the given regimen TOML, returning its path.
fn simulated_matrix(dir: &Path, config: &str, seed: &str) -> PathBuf {
    let cfg = write(dir, "sim.toml", config);
    let m = dir.join(format!("m{seed}.csv"));
    let traj = dir.join("traj.csv");
    ok(run(&["simulate", "--config", s(&cfg), "--seed", seed, "--out", s(&traj), "--matrix", s(&m)]));
    m
}

#[test]
fn anonymized_matrix_reanalyzes_identically() {
    let dir = TempDir::new().unwrap();
    let m = simulated_matrix(dir.path(), MIN_MAX, "5");
    let policy = write(dir.path(), "a.toml", SIM_POLICY);
    let (a1, a2) = (dir.path().join("a1.csv"), dir.path().join("a2.csv"));
    for a in [&a1, &a2] {
        ok(run(&["anonymize", s(&m), "--seed", "9", "--config", s(&policy), "--out", s(a)]));
    }
    assert_eq!(fs::read(&a1).unwrap(), fs::read(&a2).unwrap());
    assert_ne!(fs::read(&a1).unwrap(), fs::read(&m).unwrap());

    let estimate = |input: &Path, name: &str| {
        let out = dir.path().join(name);
        ok(run(&["analyze", s(input), "--config", s(&policy), "--bootstrap", "0", "--out", s(&out)]));
        fs::read(out).unwrap()
    };
    let original = estimate(&m, "e0.csv");
    assert_eq!(original, estimate(&a1, "e1.csv"));
    assert!(String::from_utf8(original).unwrap().contains("HT-E"));
}

#[test]
fn hte_estimates_sit_below_tpr_late_in_each_week() {
    // Everyone tested once per Monday-start week; TPR climbs over the week as
    // the untested pool fills with people infected since Monday.
    let dir = TempDir::new().unwrap();
    let cfg = "population-size = 2000\n[regimen]\nkind = \"once-per-period\"\nperiod = 7\n";
    let policy = write(dir.path(), "a.toml", &format!("{SIM_POLICY}[intervals]\nbootstrap-iterations = 0\n"));
    let (mut below, mut total) = (0, 0);
    for seed in ["1", "2"] {
        let m = simulated_matrix(dir.path(), cfg, seed);
        let out = dir.path().join("e.csv");
        ok(run(&["analyze", s(&m), "--config", s(&policy), "--out", s(&out)]));
        let rows = series(&out);
        let get = |day: i64, kind: &str| rows.iter().find(|r| r.0 == day && r.1 == kind).and_then(|r| r.2);
        for day in (1..=21).filter(|d| (d - 1) % 7 >= 3) {
            if let (Some(tpr), Some(hte)) = (get(day, "TPR"), get(day, "HT-E")) {
                total += 1;
                below += usize::from(hte <= tpr);
            }
        }
    }
    assert!(total >= 20, "{total}");
    assert!(below * 4 >= total * 3, "{below}/{total}");
}

#[test]
fn anonymizing_a_large_matrix_is_fast() {
    let dir = TempDir::new().unwrap();
    let mut text = String::new();
    text.push_str(&consecutive_dates(100).join(","));
    text.push('\n');
    let mut x: u64 = 12345;
    for _ in 0..1000 {
        let row: Vec<&str> = (0..100)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                match x >> 60 {
                    0 => "P",
                    1..=4 => "N",
                    _ => "",
                }
            })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let m = write(dir.path(), "big.csv", &text);
    let out = dir.path().join("anon.csv");
    let rep = dir.path().join("r.json");
    ok(run(&["anonymize", s(&m), "--seed", "1", "--out", s(&out), "--report", s(&rep)]));
    assert!(report(&rep)["wall_time_secs"].as_f64().unwrap() < 5.0);
    assert_eq!(fs::read_to_string(out).unwrap().lines().count(), 1001);
}

/// ISO dates for `n` consecutive days from Monday 2021-01-04.
fn consecutive_dates(n: usize) -> Vec<String> {
    let first = chrono::NaiveDate::from_ymd_opt(2021, 1, 4).unwrap();
    first.iter_days().take(n).map(|d| d.to_string()).collect()
}

#[test]
fn help_documents_flags_and_env() {
    let o = ok(run(&["--help"]));
    let text = String::from_utf8(o.stdout).unwrap();
    for needle in ["simulate", "scenario", "analyze", "estimate", "anonymize", "--jobs", "PREVEST_JOBS", "Exit codes"] {
        assert!(text.contains(needle), "{needle} missing from:\n{text}");
    }
    let o = ok(run(&["scenario", "--help"]));
    let text = String::from_utf8(o.stdout).unwrap();
    for needle in ["--replicates", "--seed", "--out", "--format", "csv", "jsonl"] {
        assert!(text.contains(needle), "{needle} missing");
    }
}
