use std::fs;
use std::path::Path;
use std::process::Command;

use confdim_lab::carpet_suite::run_carpet_suite;
use confdim_lab::config::{ExperimentConfig, SpecFile};
use confdim_lab::io::{read_json, write_json, SolutionRecord};
use confdim_lab::report::{Report, SCHEMA_VERSION};

fn confdim(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_confdim")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

fn write_spec(dir: &Path, name: &str, spec: &SpecFile) -> String {
    let p = dir.join(name);
    write_json(&p, spec).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn carpet_suite_writes_a_passing_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, stdout, _) = confdim(&["carpet-suite", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("0 failed"));
    let r: Report = read_json(&out.join("report.json")).unwrap();
    assert_eq!(r.schema, SCHEMA_VERSION);
    assert_eq!(r.criteria.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6, 14]);
    let c = r.carpet.unwrap();
    assert!((c.box_slope - 1.5).abs() < 0.1);
    assert!(c.modulus.iter().take(2).all(|m| m.exact.as_deref() == Some("1")));
}

#[test]
fn failing_criterion_gives_exit_code_one() {
    let (code, stdout, _) = confdim(&["carpet-suite", "--tol", "carpet_dim=1e-6"]);
    assert_eq!(code, 1);
    assert!(stdout.contains("criterion  1 FAIL"));
}

#[test]
fn bad_input_gives_exit_code_two() {
    let (code, _, err) = confdim(&["carpet-suite", "--tol", "nonsense=1"]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown tolerance"));
    let (code, _, err) = confdim(&["carpet-suite", "--spec", "/nonexistent/spec.json"]);
    assert_eq!(code, 2);
    assert!(err.contains("does not exist"));
    let (code, _, _) = confdim(&["brownian-suite", "--seeds", "x..y"]);
    assert_eq!(code, 2);
}

#[test]
fn reports_are_deterministic_apart_from_timings() {
    let cfg = ExperimentConfig::carpet(None);
    let a = run_carpet_suite(&cfg).unwrap();
    let b = run_carpet_suite(&cfg).unwrap();
    assert_eq!(a.without_timings(), b.without_timings());
}

#[test]
fn full_grid_has_slope_two_and_unit_modulus() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "full.json", &SpecFile::Full { m: 3, ell: 2, max_generation: None });
    let out = dir.path().join("run");
    let (code, stdout, _) = confdim(&["carpet-suite", "--spec", &spec, "--gen", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    let c = read_json::<Report>(&out.join("report.json")).unwrap().carpet.unwrap();
    assert_eq!(c.dimension_formula, 2.0);
    assert!((c.box_slope - 2.0).abs() < 0.1, "{}", c.box_slope);
    assert!(c.modulus.iter().take(2).all(|m| m.exact.as_deref() == Some("1")));
}

#[test]
fn twelve_three_four_reports_its_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let cells = (0..3).flat_map(|row| (0..4).map(move |i| [3 * i + row, row])).collect();
    let spec = write_spec(dir.path(), "s.json", &SpecFile::Pattern { m: 12, ell: 3, cells, max_generation: None });
    let out = dir.path().join("run");
    let (_, stdout, err) = confdim(&["carpet-suite", "--spec", &spec, "--gen", "4", "--out", out.to_str().unwrap()]);
    let r: Report = read_json(&out.join("report.json")).unwrap_or_else(|_| panic!("{stdout}{err}"));
    assert!(r.criterion(1).unwrap().target.starts_with("1.5579"));
    let c = r.carpet.unwrap();
    assert!((c.dimension_formula - (1.0 + 4f64.ln() / 12f64.ln())).abs() < 1e-12);
}

#[test]
fn plots_from_a_carpet_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    confdim(&["carpet-suite", "--out", out.to_str().unwrap()]);
    let plots = dir.path().join("plots");
    let (code, stdout, _) = confdim(&["emit-plots", out.join("report.json").to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 8);
    let box_counts = fs::read_to_string(plots.join("carpet_box_counts.csv")).unwrap();
    let mut lines = box_counts.lines();
    assert_eq!(lines.next(), Some("n,log2N"));
    assert_eq!(lines.count(), 6);
    let modulus = fs::read_to_string(plots.join("modulus.csv")).unwrap();
    assert!(modulus.starts_with("generation,value,exact,sampled\n1,1,1,false\n"));
    let env = fs::read_to_string(plots.join("flat_envelope.csv")).unwrap();
    assert_eq!(env, "n,count,bound\n");
}

#[test]
fn plots_from_an_empty_report_have_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("empty.json");
    write_json(&report, &Report::new("empty", None)).unwrap();
    let plots = dir.path().join("plots");
    let (code, _, _) = confdim(&["emit-plots", report.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(code, 0);
    for e in fs::read_dir(&plots).unwrap() {
        let text = fs::read_to_string(e.unwrap().path()).unwrap();
        assert_eq!(text.lines().count(), 1);
    }
}

#[test]
fn modulus_from_spec_and_problem_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "f.json", &SpecFile::alternating());
    let (code, stdout, err) = confdim(&["modulus", "--spec", &spec, "--gen", "2"]);
    assert_eq!(code, 0, "{err}");
    let rec: SolutionRecord = serde_json::from_str(&stdout).unwrap();
    assert_eq!(rec.exact_value.as_deref(), Some("1"));

    // Two disjoint single-cell families of mass 1/2 each: Mod_2 = 1.
    let problem = dir.path().join("p.json");
    fs::write(&problem, r#"{"p": 1.0, "masses": ["1/2", "1/2"], "families": [[[0, "1"]], [[1, "1"]]]}"#).unwrap();
    let sol = dir.path().join("sol.json");
    let (code, _, err) = confdim(&["modulus", "--problem", problem.to_str().unwrap(), "--p", "2", "--out", sol.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let rec: SolutionRecord = read_json(&sol).unwrap();
    assert_eq!(rec.p, 2.0);
    assert!((rec.value - 1.0).abs() < 1e-8, "{}", rec.value);
    assert!(rec.duality_gap.unwrap() < 1e-8);
}
