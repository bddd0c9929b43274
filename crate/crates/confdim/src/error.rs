//! Error types for each module.

use alloc::vec::Vec;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("resolution must be positive, got {0}")]
    NonPositiveResolution(f64),
    #[error("a cloud has zero diameter")]
    DegenerateDiameter,
    #[error("snowflake exponent must lie in (0, 1], got {0}")]
    BadExponent(f64),
    #[error("resolution {resolution} is coarser than the finest box side {required}")]
    InsufficientResolution { resolution: f64, required: f64 },
    #[error("no generations to fit")]
    EmptyGenerations,
    #[error("points {0} and {1} coincide")]
    CoincidentPoints(usize, usize),
    #[error("pairing sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CarpetError {
    #[error("grid {m}x{ell} is invalid: need m > 1 and 1 < ell < m")]
    BadGrid { m: u32, ell: u32 },
    #[error("cell ({col}, {row}) lies outside the {m}x{ell} grid")]
    CellOutOfRange { col: u32, row: u32, m: u32, ell: u32 },
    #[error("pattern is empty")]
    EmptyPattern,
    #[error("rows do not carry equal cell counts: (row, count) = {0:?}")]
    NonUniform(Vec<(u32, usize)>),
    #[error("pattern has {found} cells per row but the carpet expects {expected}")]
    FiberMismatch { expected: u32, found: u32 },
    #[error("generation {requested} exceeds the configured maximum {max}")]
    GenerationTooDeep { requested: u32, max: u32 },
    #[error("pattern generator failed at generation {generation}, column {col}, row {row}: {reason}")]
    GeneratorFailure { generation: u32, col: u64, row: u64, reason: &'static str },
    #[error("height {0}/{1} is l-adic or outside (0, 1)")]
    AdicHeight(u64, u64),
    #[error("label {0} has no matrix")]
    UnknownLabel(u32),
    #[error("matrix {index} has shape {rows}x{cols}, expected {ell}x{m}")]
    MatrixShape { index: usize, rows: usize, cols: usize, ell: u32, m: u32 },
    #[error("grid coordinates overflow at generation {0}")]
    Overflow(u32),
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum MeasureError {
    #[error(transparent)]
    Carpet(#[from] CarpetError),
    #[error("selection under cell (gen {generation}, col {col}, row {row}) is invalid: {reason}")]
    InvalidSelection { generation: u32, col: u64, row: u64, reason: &'static str },
    #[error("ball at ({0}, {1}) of radius {2} has empty half ball")]
    EmptyBall(f64, f64, f64),
    #[error("node {0} is not a leaf")]
    NotLeaf(usize),
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ModulusError {
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Carpet(#[from] CarpetError),
    #[error("exponent p = {0} must be at least 1")]
    BadExponent(f64),
    #[error("family {0} has no positive weight")]
    EmptyFamily(usize),
    #[error("negative mass or weight at cell {0}")]
    Negative(usize),
    #[error("family {family} refers to cell {cell}, but only {cells} cells exist")]
    CellOutOfRange { family: usize, cell: usize, cells: usize },
    #[error("density has {found} values but the problem has {expected} cells")]
    MissingCell { expected: usize, found: usize },
    #[error("no convergence after {iterations} iterations (gap {gap})")]
    NoConvergence { iterations: usize, gap: f64 },
    #[error("certificate rejected: {0}")]
    CertificateRejected(&'static str),
    #[error("problems disagree on {0}")]
    Incompatible(&'static str),
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum BrownianError {
    #[error("time step {0} must be a positive power of one half")]
    BadStep(f64),
    #[error("seed {seed}: stop not reached within {steps} steps")]
    Budget { seed: u64, steps: usize },
    #[error("scale {scale} is below the path resolution {resolution}")]
    Resolution { scale: f64, resolution: f64 },
    #[error("element {element} of generation {generation} has no child in its {side} half")]
    Starvation { generation: u32, element: usize, side: &'static str },
    #[error("invalid input: {0}")]
    BadInput(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
