//! Versioned JSON report with one entry per acceptance criterion.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::brownian_suite::BrownianData;
use crate::carpet_suite::CarpetData;
use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: &str = "confdim-report/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub measured: String,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
    pub limit_seconds: f64,
}

impl Timing {
    pub fn within(&self) -> bool {
        self.seconds <= self.limit_seconds
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub command: String,
    pub config: Option<ExperimentConfig>,
    pub criteria: Vec<CriterionResult>,
    /// Runtime per criterion id. Kept apart from the rest, which is a
    /// function of the config alone.
    pub timings: BTreeMap<u8, Timing>,
    pub carpet: Option<CarpetData>,
    pub brownian: Option<BrownianData>,
}

/// Runtime limits in seconds, by criterion id.
pub fn time_limit(id: u8) -> f64 {
    match id {
        1 => 10.0,
        2 | 3 | 6 => 5.0,
        4 => 30.0,
        5 => 10.0,
        7 | 10 | 14 => 60.0,
        8 | 11 | 12 => 300.0,
        9 => 600.0,
        13 => 120.0,
        _ => f64::INFINITY,
    }
}

impl Report {
    pub fn new(command: &str, config: Option<ExperimentConfig>) -> Self {
        Report {
            schema: SCHEMA_VERSION.into(),
            command: command.into(),
            config,
            criteria: Vec::new(),
            timings: BTreeMap::new(),
            carpet: None,
            brownian: None,
        }
    }

    /// Records a criterion; `seconds` is the time spent producing its evidence.
    pub fn record(&mut self, c: CriterionResult, seconds: f64) {
        self.timings.insert(c.id, Timing { seconds, limit_seconds: time_limit(c.id) });
        self.criteria.retain(|o| o.id != c.id);
        self.criteria.push(c);
        self.criteria.sort_by_key(|c| c.id);
    }

    pub fn criterion(&self, id: u8) -> Option<&CriterionResult> {
        self.criteria.iter().find(|c| c.id == id)
    }

    /// A criterion fails on its measured value or on its time limit.
    pub fn criterion_passed(&self, id: u8) -> Option<bool> {
        let c = self.criterion(id)?;
        Some(c.passed && self.timings.get(&id).is_none_or(Timing::within))
    }

    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| self.criterion_passed(c.id) == Some(true))
    }

    pub fn line(&self, id: u8) -> Option<String> {
        let c = self.criterion(id)?;
        let t = self.timings.get(&id);
        let verdict = if self.criterion_passed(id) == Some(true) { "PASS" } else { "FAIL" };
        let time = t.map_or(String::new(), |t| {
            format!("  [{:.2} s / limit {} s{}]", t.seconds, t.limit_seconds, if t.within() { "" } else { ", OVER TIME" })
        });
        Some(format!("criterion {:>2} {verdict}  {}: measured {}; target {}{time}", c.id, c.name, c.measured, c.target))
    }

    pub fn summary(&self) -> String {
        let mut out: Vec<String> = self.criteria.iter().filter_map(|c| self.line(c.id)).collect();
        let failed = self.criteria.iter().filter(|c| self.criterion_passed(c.id) != Some(true)).count();
        out.push(format!("{} criteria, {failed} failed", self.criteria.len()));
        out.join("\n")
    }

    /// Same report with timings removed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Report {
        Report { timings: BTreeMap::new(), ..self.clone() }
    }

    /// Merges another report's criteria and data into this one.
    pub fn merge(&mut self, other: Report) {
        for c in other.criteria {
            let secs = other.timings.get(&c.id).map_or(0.0, |t| t.seconds);
            self.record(c, secs);
        }
        if other.carpet.is_some() {
            self.carpet = other.carpet;
        }
        if other.brownian.is_some() {
            self.brownian = other.brownian;
        }
    }
}

/// Wall-clock stopwatch.
pub struct Stopwatch(Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Times a closure.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let w = Stopwatch::start();
    let out = f();
    (out, w.seconds())
}
