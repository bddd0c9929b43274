//! Full acceptance run with default settings: one line per criterion.

use confdim_lab::brownian_suite::run_brownian_suite;
use confdim_lab::carpet_suite::run_carpet_suite;
use confdim_lab::config::ExperimentConfig;

#[test]
fn acceptance() {
    let mut report = run_carpet_suite(&ExperimentConfig::carpet(None)).expect("carpet suite");
    report.merge(run_brownian_suite(&ExperimentConfig::brownian((0..100).collect())).expect("brownian suite"));
    let mut failed = Vec::new();
    for id in 1..=14u8 {
        match report.line(id) {
            Some(line) => println!("{line}"),
            None => println!("criterion {id:>2} MISSING"),
        }
        if report.criterion_passed(id) != Some(true) {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
