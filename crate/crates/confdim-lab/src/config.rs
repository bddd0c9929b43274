//! Experiment configuration, seed lists, tolerances and carpet spec files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use confdim::carpet::{AffineGraphSpec, CarpetSpec, Pattern, PatternSource};
use serde::{Deserialize, Serialize};

use crate::LabError;

/// Named tolerances and thresholds. Defaults are the acceptance values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tolerances(BTreeMap<String, f64>);

const DEFAULT_TOLERANCES: &[(&str, f64)] = &[
    // Half-widths around a target dimension.
    ("carpet_dim", 0.1),
    ("carpet_slice_dim", 0.07),
    ("snowflake_dim", 0.1),
    ("graph_dim", 0.15),
    ("brownian_slice_dim", 0.15),
    // Absolute error of a Monte Carlo probability.
    ("hitting", 0.01),
    // Fractions of (seed, level) pairs, seeds or balls.
    ("positivity", 0.95),
    ("majority", 0.6),
    ("lambda_fraction", 0.9),
    ("span_fraction", 0.95),
    ("convergence", 0.2),
    ("holder_min", 0.4),
    // Exponent slack in the 2^((1/2 + eps)(n + 1)) envelopes.
    ("envelope_eps", 0.25),
    // Relative slack for floating-point dominance checks.
    ("float", 1e-9),
];

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances(DEFAULT_TOLERANCES.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }
}

impl Tolerances {
    pub fn get(&self, name: &str) -> f64 {
        self.0[name]
    }

    /// Overrides one entry from `name=value`.
    pub fn set(&mut self, assignment: &str) -> Result<(), LabError> {
        let (name, value) = assignment
            .split_once('=')
            .ok_or_else(|| LabError::Config(format!("tolerance `{assignment}` is not name=value")))?;
        let name = name.trim();
        if !self.0.contains_key(name) {
            let known: Vec<&str> = self.0.keys().map(String::as_str).collect();
            return Err(LabError::Config(format!("unknown tolerance `{name}`; known: {}", known.join(", "))));
        }
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| LabError::Config(format!("tolerance `{name}` has non-numeric value `{value}`")))?;
        self.0.insert(name.to_string(), v);
        self.validate()
    }

    pub fn validate(&self) -> Result<(), LabError> {
        for (k, v) in &self.0 {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(LabError::Config(format!("tolerance `{k}` must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Parses `0..100`, `3,5,8` or a mix such as `0..10,42`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, LabError> {
    let bad = || LabError::Config(format!("cannot parse seed list `{text}`"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            seeds.extend(a..b);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.is_empty() {
        return Err(LabError::Config("seed list is empty".into()));
    }
    Ok(seeds)
}

/// Everything a suite run depends on. Reports are a function of this value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub seeds: Vec<u64>,
    pub spec: Option<PathBuf>,
    /// Carpet: generation used for box counting. Brownian: `g` with `dt = 2^-2g`.
    pub generation: u32,
    pub tolerances: Tolerances,
    pub out: Option<PathBuf>,
    pub brownian: BrownianKnobs,
}

/// Secondary Brownian settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrownianKnobs {
    /// Seeds `0..hitting_seeds` for the hitting law.
    pub hitting_seeds: u64,
    /// Grid step exponent for the hitting law: `dt = 2^-hitting_grid`.
    pub hitting_grid: u32,
    /// `g` (and finest generation) of the decomposition used for flat counts
    /// and vertical Cantor sets.
    pub decomposition_generation: u32,
    /// `g` of the decomposition used for the partition checks.
    pub partition_generation: u32,
    /// Finest generation of the partition checks.
    pub partition_depth: u32,
    /// Generation from which ancestors must be steep for a point to count as A-like.
    pub a_like_from: u32,
    /// Step budget per simulated path before the seed is substituted.
    pub max_steps: usize,
}

impl Default for BrownianKnobs {
    fn default() -> Self {
        BrownianKnobs {
            hitting_seeds: 100_000,
            hitting_grid: 10,
            decomposition_generation: 8,
            partition_generation: 7,
            partition_depth: 6,
            a_like_from: 4,
            max_steps: 50_000_000,
        }
    }
}

impl ExperimentConfig {
    pub fn carpet(spec: Option<PathBuf>) -> Self {
        ExperimentConfig {
            command: "carpet-suite".into(),
            seeds: (0..100).collect(),
            spec,
            generation: 8,
            tolerances: Tolerances::default(),
            out: None,
            brownian: BrownianKnobs::default(),
        }
    }

    pub fn brownian(seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            command: "brownian-suite".into(),
            seeds,
            spec: None,
            generation: 10,
            tolerances: Tolerances::default(),
            out: None,
            brownian: BrownianKnobs::default(),
        }
    }

    pub fn validate(&self) -> Result<(), LabError> {
        self.tolerances.validate()?;
        if self.seeds.is_empty() {
            return Err(LabError::Config("seed list is empty".into()));
        }
        if let Some(p) = &self.spec {
            if !p.is_file() {
                return Err(LabError::Config(format!("spec file {} does not exist", p.display())));
            }
        }
        let b = &self.brownian;
        if self.command == "brownian-suite" {
            if self.generation < 6 {
                return Err(LabError::Config("brownian generation must be at least 6".into()));
            }
            if b.partition_depth > b.partition_generation || b.decomposition_generation < 4 {
                return Err(LabError::Config("decomposition depth exceeds its grid resolution".into()));
            }
        }
        Ok(())
    }
}

/// On-disk carpet description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpecFile {
    /// One fixed pattern; cells are `[col, row]` with row 0 at the bottom.
    Pattern { m: u32, ell: u32, cells: Vec<[u32; 2]>, max_generation: Option<u32> },
    /// The full `m` by `ell` grid.
    Full { m: u32, ell: u32, max_generation: Option<u32> },
    /// Pattern `i` cuts generation-`i` cells.
    Sequence { m: u32, ell: u32, patterns: Vec<Vec<[u32; 2]>>, max_generation: Option<u32> },
    /// `k` random columns per row, drawn per cell.
    Random { m: u32, ell: u32, k: u32, seed: u64, max_generation: Option<u32> },
    /// Labeled substitution matrices, rows listed top first.
    Affine { m: u32, ell: u32, matrices: Vec<Vec<Vec<u32>>>, base: u32, max_generation: Option<u32> },
}

pub const DEFAULT_MAX_GENERATION: u32 = 10;

impl SpecFile {
    pub fn alternating() -> Self {
        SpecFile::Pattern {
            m: 4,
            ell: 2,
            cells: vec![[0, 0], [2, 0], [1, 1], [3, 1]],
            max_generation: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| LabError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn label(&self) -> String {
        match self {
            SpecFile::Pattern { m, ell, cells, .. } => format!("pattern ({m},{ell},{})", cells.len() as u32 / ell),
            SpecFile::Full { m, ell, .. } => format!("full ({m},{ell},{m})"),
            SpecFile::Sequence { m, ell, .. } => format!("sequence ({m},{ell})"),
            SpecFile::Random { m, ell, k, seed, .. } => format!("random ({m},{ell},{k}) seed {seed}"),
            SpecFile::Affine { m, ell, .. } => format!("affine ({m},{ell})"),
        }
    }

    pub fn to_spec(&self) -> Result<CarpetSpec, LabError> {
        let cells = |c: &[[u32; 2]]| c.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>();
        let g = |mg: &Option<u32>| mg.unwrap_or(DEFAULT_MAX_GENERATION);
        Ok(match self {
            SpecFile::Pattern { m, ell, cells: c, max_generation } => CarpetSpec::fixed(Pattern::new(*m, *ell, cells(c))?, g(max_generation))?,
            SpecFile::Full { m, ell, max_generation } => CarpetSpec::fixed(Pattern::full(*m, *ell)?, g(max_generation))?,
            SpecFile::Sequence { m, ell, patterns, max_generation } => {
                let ps = patterns.iter().map(|c| Pattern::new(*m, *ell, cells(c))).collect::<Result<Vec<_>, _>>()?;
                let first = ps.first().ok_or_else(|| LabError::Config("empty pattern sequence".into()))?;
                let k = confdim::carpet::validate_uniform_fibers(first)?;
                let depth = g(max_generation).min(ps.len() as u32);
                CarpetSpec::new(*m, *ell, k, PatternSource::Sequence(ps), depth)?
            }
            SpecFile::Random { m, ell, k, seed, max_generation } => {
                CarpetSpec::new(*m, *ell, *k, PatternSource::RandomFibers { seed: *seed }, g(max_generation))?
            }
            SpecFile::Affine { m, ell, matrices, base, max_generation } => {
                AffineGraphSpec::new(*m, *ell, matrices.clone(), *base)?.carpet(g(max_generation))?
            }
        })
    }
}
