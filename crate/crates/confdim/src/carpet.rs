//! Bedford–McMullen carpets with uniform fibers, per-cell pattern sources,
//! self-affine graphs from labeled matrices, and approximate squares.
//!
//! Grid coordinates are 0-based with row 0 at the bottom. A generation-`n`
//! cell is addressed by its integer column `col < m^n` and row `row < ell^n`;
//! the base-`m` and base-`ell` digits of these integers are the cell's digit
//! string.

use alloc::vec;
use alloc::vec::Vec;
use num_rational::Ratio;
use num_traits::Float;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CarpetError;
use crate::geometry::PointCloud;

/// A set of kept cells in an `m` by `ell` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    m: u32,
    ell: u32,
    cells: Vec<(u32, u32)>,
}

impl Pattern {
    pub fn new(m: u32, ell: u32, mut cells: Vec<(u32, u32)>) -> Result<Self, CarpetError> {
        check_grid(m, ell)?;
        for &(col, row) in &cells {
            if col >= m || row >= ell {
                return Err(CarpetError::CellOutOfRange { col, row, m, ell });
            }
        }
        cells.sort_unstable_by_key(|&(c, r)| (r, c));
        cells.dedup();
        if cells.is_empty() {
            return Err(CarpetError::EmptyPattern);
        }
        Ok(Pattern { m, ell, cells })
    }

    pub fn full(m: u32, ell: u32) -> Result<Self, CarpetError> {
        let cells = (0..ell).flat_map(|r| (0..m).map(move |c| (c, r))).collect();
        Pattern::new(m, ell, cells)
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    /// Kept cells as `(col, row)`, sorted by row then column.
    pub fn cells(&self) -> &[(u32, u32)] {
        &self.cells
    }

    pub fn row_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.ell as usize];
        for &(_, r) in &self.cells {
            counts[r as usize] += 1;
        }
        counts
    }
}

fn check_grid(m: u32, ell: u32) -> Result<(), CarpetError> {
    if m < 2 || ell < 2 || ell >= m {
        return Err(CarpetError::BadGrid { m, ell });
    }
    Ok(())
}

/// Returns `k` when every row keeps exactly `k` cells.
pub fn validate_uniform_fibers(p: &Pattern) -> Result<u32, CarpetError> {
    let counts = p.row_counts();
    let k = counts[0];
    if k == 0 || counts.iter().any(|&c| c != k) {
        return Err(CarpetError::NonUniform(
            counts.iter().enumerate().map(|(r, &c)| (r as u32, c)).collect(),
        ));
    }
    Ok(k as u32)
}

/// Where the pattern for each subdivision comes from.
#[derive(Clone, Debug)]
pub enum PatternSource {
    /// One pattern used everywhere.
    Fixed(Pattern),
    /// `D_1, D_2, ...`: generation `i` cells are cut with `D_i`.
    Sequence(Vec<Pattern>),
    /// A pattern drawn per cell with `k` random columns in each row, seeded by
    /// the cell address.
    RandomFibers { seed: u64 },
    /// A caller-supplied pattern per parent cell.
    PerCell(fn(&CellIndex) -> Pattern),
    /// Labeled substitution matrices.
    Labeled(AffineGraphSpec),
}

#[derive(Clone, Debug)]
pub struct CarpetSpec {
    pub m: u32,
    pub ell: u32,
    pub k: u32,
    pub source: PatternSource,
    pub max_generation: u32,
}

impl CarpetSpec {
    /// Carpet cut by one fixed pattern.
    pub fn fixed(pattern: Pattern, max_generation: u32) -> Result<Self, CarpetError> {
        let k = validate_uniform_fibers(&pattern)?;
        Ok(CarpetSpec { m: pattern.m, ell: pattern.ell, k, source: PatternSource::Fixed(pattern), max_generation })
    }

    pub fn new(m: u32, ell: u32, k: u32, source: PatternSource, max_generation: u32) -> Result<Self, CarpetError> {
        check_grid(m, ell)?;
        if k == 0 || k > m {
            return Err(CarpetError::FiberMismatch { expected: k, found: k });
        }
        let spec = CarpetSpec { m, ell, k, source, max_generation };
        match &spec.source {
            PatternSource::Fixed(p) => spec.check_pattern(p)?,
            PatternSource::Sequence(ps) => {
                for p in ps {
                    spec.check_pattern(p)?;
                }
            }
            PatternSource::Labeled(g) => {
                if g.m != m || g.ell != ell {
                    return Err(CarpetError::BadGrid { m: g.m, ell: g.ell });
                }
                for j in 0..g.matrices.len() {
                    spec.check_pattern(&g.pattern(j as u32 + 1)?.0)?;
                }
            }
            PatternSource::RandomFibers { .. } | PatternSource::PerCell(_) => {}
        }
        Ok(spec)
    }

    fn check_pattern(&self, p: &Pattern) -> Result<(), CarpetError> {
        if p.m != self.m || p.ell != self.ell {
            return Err(CarpetError::BadGrid { m: p.m, ell: p.ell });
        }
        let k = validate_uniform_fibers(p)?;
        if k != self.k {
            return Err(CarpetError::FiberMismatch { expected: self.k, found: k });
        }
        Ok(())
    }

    /// Alternating columns with `m = 4`, `ell = 2`, two cells per row.
    pub fn alternating(max_generation: u32) -> Self {
        let p = Pattern::new(4, 2, vec![(0, 0), (2, 0), (1, 1), (3, 1)]).expect("valid pattern");
        CarpetSpec::fixed(p, max_generation).expect("uniform fibers")
    }

    fn check_generation(&self, n: u32) -> Result<(), CarpetError> {
        if n > self.max_generation {
            return Err(CarpetError::GenerationTooDeep { requested: n, max: self.max_generation });
        }
        if checked_pow(self.m as u64, n).is_none() {
            return Err(CarpetError::Overflow(n));
        }
        Ok(())
    }

    /// Children of a cell together with their substitution labels.
    pub(crate) fn children(&self, node: &Node) -> Result<Vec<Node>, CarpetError> {
        let cell = &node.cell;
        let fail = |reason| CarpetError::GeneratorFailure { generation: cell.generation, col: cell.col, row: cell.row, reason };
        let (pattern, labels): (Pattern, Option<Vec<u32>>) = match &self.source {
            PatternSource::Fixed(p) => (p.clone(), None),
            PatternSource::Sequence(ps) => {
                let p = ps.get(cell.generation as usize).ok_or_else(|| fail("pattern sequence too short"))?;
                (p.clone(), None)
            }
            PatternSource::RandomFibers { seed } => (random_pattern(self.m, self.ell, self.k, cell_seed(*seed, cell)), None),
            PatternSource::PerCell(f) => (f(cell), None),
            PatternSource::Labeled(g) => {
                let (p, l) = g.pattern(node.label)?;
                (p, Some(l))
            }
        };
        if pattern.m != self.m || pattern.ell != self.ell {
            return Err(fail("pattern grid differs from the carpet grid"));
        }
        match validate_uniform_fibers(&pattern) {
            Ok(k) if k == self.k => {}
            _ => return Err(fail("pattern violates uniform fibers")),
        }
        Ok(pattern
            .cells
            .iter()
            .enumerate()
            .map(|(i, &(c, r))| Node {
                cell: cell.child(c, r),
                label: labels.as_ref().map_or(0, |l| l[i]),
            })
            .collect())
    }

    pub(crate) fn root(&self) -> Node {
        let label = match &self.source {
            PatternSource::Labeled(g) => g.base,
            _ => 0,
        };
        Node { cell: CellIndex::root(self.m, self.ell), label }
    }

    /// All generations `0..=n` as node lists.
    pub(crate) fn generations(&self, n: u32) -> Result<Vec<Vec<Node>>, CarpetError> {
        self.check_generation(n)?;
        let mut gens = vec![vec![self.root()]];
        for _ in 0..n {
            let last = gens.last().expect("nonempty");
            let mut next = Vec::with_capacity(last.len() * (self.k * self.ell) as usize);
            for node in last {
                next.extend(self.children(node)?);
            }
            gens.push(next);
        }
        Ok(gens)
    }

    /// Cells of generation `n` lying in the row band that contains height `a`.
    pub fn fiber(&self, a: Ratio<u64>, n: u32) -> Result<Vec<CellIndex>, CarpetError> {
        check_non_adic(a, self.ell)?;
        self.check_generation(n)?;
        let mut level = vec![self.root()];
        for g in 1..=n {
            let target = row_at(a, self.ell, g);
            let mut next = Vec::new();
            for node in &level {
                next.extend(self.children(node)?.into_iter().filter(|c| c.cell.row == target));
            }
            level = next;
        }
        Ok(level.into_iter().map(|n| n.cell).collect())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub cell: CellIndex,
    pub label: u32,
}

/// Errors unless `0 < a < 1` and `a` has no finite base-`ell` expansion.
pub fn check_non_adic(a: Ratio<u64>, ell: u32) -> Result<(), CarpetError> {
    let (p, q) = (*a.numer(), *a.denom());
    if p == 0 || p >= q {
        return Err(CarpetError::AdicHeight(p, q));
    }
    // a = p/q in lowest terms is ell-adic iff every prime factor of q divides ell.
    let mut rest = q;
    loop {
        let g = num_integer::gcd(rest, ell as u64);
        if g == 1 {
            break;
        }
        while rest % g == 0 {
            rest /= g;
        }
    }
    if rest == 1 {
        return Err(CarpetError::AdicHeight(p, q));
    }
    Ok(())
}

/// Index of the generation-`g` row containing a non-`ell`-adic height `a`.
pub fn row_at(a: Ratio<u64>, ell: u32, g: u32) -> u64 {
    let scale = (ell as u128).pow(g);
    (*a.numer() as u128 * scale / *a.denom() as u128) as u64
}

pub(crate) fn checked_pow(b: u64, e: u32) -> Option<u64> {
    b.checked_pow(e)
}

/// Address of a generation-`n` rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub generation: u32,
    pub col: u64,
    pub row: u64,
    pub m: u32,
    pub ell: u32,
}

impl CellIndex {
    pub fn root(m: u32, ell: u32) -> Self {
        CellIndex { generation: 0, col: 0, row: 0, m, ell }
    }

    pub fn child(&self, col_digit: u32, row_digit: u32) -> Self {
        CellIndex {
            generation: self.generation + 1,
            col: self.col * self.m as u64 + col_digit as u64,
            row: self.row * self.ell as u64 + row_digit as u64,
            m: self.m,
            ell: self.ell,
        }
    }

    pub fn parent(&self) -> Option<Self> {
        (self.generation > 0).then(|| CellIndex {
            generation: self.generation - 1,
            col: self.col / self.m as u64,
            row: self.row / self.ell as u64,
            m: self.m,
            ell: self.ell,
        })
    }

    /// Ancestor at generation `g <= self.generation`.
    pub fn ancestor(&self, g: u32) -> Self {
        let up = self.generation - g;
        CellIndex {
            generation: g,
            col: self.col / (self.m as u64).pow(up),
            row: self.row / (self.ell as u64).pow(up),
            m: self.m,
            ell: self.ell,
        }
    }

    /// Digit string `(col, row)` from the first subdivision to the last.
    pub fn digits(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.generation as usize);
        let (mut c, mut r) = (self.col, self.row);
        for _ in 0..self.generation {
            out.push(((c % self.m as u64) as u32, (r % self.ell as u64) as u32));
            c /= self.m as u64;
            r /= self.ell as u64;
        }
        out.reverse();
        out
    }

    pub fn x0(&self) -> Ratio<u64> {
        Ratio::new(self.col, (self.m as u64).pow(self.generation))
    }

    pub fn y0(&self) -> Ratio<u64> {
        Ratio::new(self.row, (self.ell as u64).pow(self.generation))
    }

    pub fn width(&self) -> Ratio<u64> {
        Ratio::new(1, (self.m as u64).pow(self.generation))
    }

    pub fn height(&self) -> Ratio<u64> {
        Ratio::new(1, (self.ell as u64).pow(self.generation))
    }

    /// `[x0, x1, y0, y1]` in floating point.
    pub fn rect(&self) -> [f64; 4] {
        let w = (self.m as f64).powi(self.generation as i32);
        let h = (self.ell as f64).powi(self.generation as i32);
        [self.col as f64 / w, (self.col + 1) as f64 / w, self.row as f64 / h, (self.row + 1) as f64 / h]
    }

    pub fn center(&self) -> [f64; 2] {
        let r = self.rect();
        [(r[0] + r[1]) / 2.0, (r[2] + r[3]) / 2.0]
    }

    pub fn diameter(&self) -> f64 {
        let r = self.rect();
        Float::hypot(r[1] - r[0], r[3] - r[2])
    }
}

/// Generation-`n` cells, `(k ell)^n` of them.
pub fn build_generation(spec: &CarpetSpec, n: u32) -> Result<Vec<CellIndex>, CarpetError> {
    let gens = spec.generations(n)?;
    Ok(gens[n as usize].iter().map(|node| node.cell).collect())
}

/// Cell centers of generation `n`, faithful to one cell diameter.
pub fn generation_cloud(spec: &CarpetSpec, n: u32) -> Result<PointCloud, CarpetError> {
    let cells = build_generation(spec, n)?;
    let diam = cells[0].diameter();
    Ok(PointCloud::new(cells.iter().map(|c| c.center()).collect(), diam).expect("nonempty"))
}

/// Points of the generation-`n` fiber at height `a`, faithful to one cell width.
pub fn fiber_cloud(spec: &CarpetSpec, a: Ratio<u64>, n: u32) -> Result<PointCloud, CarpetError> {
    let cells = spec.fiber(a, n)?;
    let y = *a.numer() as f64 / *a.denom() as f64;
    let pts = cells.iter().map(|c| [c.center()[0], y]).collect();
    let w = 1.0 / (spec.m as f64).powi(n as i32);
    Ok(PointCloud::new(pts, w).expect("nonempty"))
}

/// `(1 + log k / log m, log k / log m)`.
pub fn dim_formula(m: u32, ell: u32, k: u32) -> Result<(f64, f64), CarpetError> {
    check_grid(m, ell)?;
    if k == 0 || k > m {
        return Err(CarpetError::FiberMismatch { expected: m, found: k });
    }
    let d = Float::ln(k as f64) / Float::ln(m as f64);
    Ok((1.0 + d, d))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a cell's pattern, a hash of the carpet seed and the cell address.
pub fn cell_seed(seed: u64, cell: &CellIndex) -> u64 {
    let mut h = splitmix(seed);
    for v in [cell.generation as u64, cell.col, cell.row] {
        h = splitmix(h ^ v);
    }
    h
}

/// `k` distinct random columns in each row.
pub fn random_pattern(m: u32, ell: u32, k: u32, seed: u64) -> Pattern {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = Vec::with_capacity((k * ell) as usize);
    for r in 0..ell {
        for c in sample(&mut rng, m as usize, k as usize).iter() {
            cells.push((c as u32, r));
        }
    }
    Pattern::new(m, ell, cells).expect("cells are in range")
}

/// Labeled substitution matrices. Matrix rows are listed top first, entries
/// are 0 (dropped) or a label `j` meaning "cut with matrix `j`".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AffineGraphSpec {
    pub m: u32,
    pub ell: u32,
    pub matrices: Vec<Vec<Vec<u32>>>,
    /// Label of the matrix applied to the unit square.
    pub base: u32,
}

impl AffineGraphSpec {
    pub fn new(m: u32, ell: u32, matrices: Vec<Vec<Vec<u32>>>, base: u32) -> Result<Self, CarpetError> {
        check_grid(m, ell)?;
        let spec = AffineGraphSpec { m, ell, matrices, base };
        for (index, a) in spec.matrices.iter().enumerate() {
            if a.len() != ell as usize || a.iter().any(|r| r.len() != m as usize) {
                return Err(CarpetError::MatrixShape {
                    index,
                    rows: a.len(),
                    cols: a.first().map_or(0, |r| r.len()),
                    ell,
                    m,
                });
            }
            for &v in a.iter().flatten() {
                if v as usize > spec.matrices.len() {
                    return Err(CarpetError::UnknownLabel(v));
                }
            }
        }
        spec.pattern(base)?;
        Ok(spec)
    }

    /// The tent-shaped example with `m = 4`, `ell = 2`.
    pub fn tent() -> Self {
        AffineGraphSpec::new(
            4,
            2,
            vec![
                vec![vec![0, 2, 3, 0], vec![2, 0, 0, 3]],
                vec![vec![0, 0, 1, 2], vec![1, 2, 0, 0]],
                vec![vec![3, 1, 0, 0], vec![0, 0, 3, 1]],
            ],
            1,
        )
        .expect("valid matrices")
    }

    /// Block matrices with `k` cells per row on a `k ell` by `ell` grid.
    ///
    /// `C_k = [1 .. 1 2]` runs up the diagonal blocks of `A_2`, `D_k = [3 1 .. 1]`
    /// runs down those of `A_3`, and `A_1` climbs with label 2 before
    /// descending through `D_{k-1}` blocks.
    pub fn blocks(k: u32, ell: u32) -> Result<Self, CarpetError> {
        let m = k * ell;
        let (mu, lu) = (m as usize, ell as usize);
        let top = |r: usize| lu - 1 - r;
        let mut a1 = vec![vec![0u32; mu]; lu];
        for i in 0..lu {
            a1[top(i)][i] = 2;
        }
        for j in 0..lu {
            let start = lu + j * (k as usize - 1);
            for c in 0..(k as usize - 1) {
                a1[j][start + c] = if c == 0 { 3 } else { 1 };
            }
        }
        let mut a2 = vec![vec![0u32; mu]; lu];
        for b in 0..lu {
            for c in 0..k as usize {
                a2[top(b)][b * k as usize + c] = if c + 1 == k as usize { 2 } else { 1 };
            }
        }
        let mut a3 = vec![vec![0u32; mu]; lu];
        for j in 0..lu {
            for c in 0..k as usize {
                a3[j][j * k as usize + c] = if c == 0 { 3 } else { 1 };
            }
        }
        AffineGraphSpec::new(m, ell, vec![a1, a2, a3], 1)
    }

    /// Pattern of matrix `label` and the label of each kept cell, in pattern order.
    pub fn pattern(&self, label: u32) -> Result<(Pattern, Vec<u32>), CarpetError> {
        let a = self
            .matrices
            .get((label as usize).wrapping_sub(1))
            .ok_or(CarpetError::UnknownLabel(label))?;
        let mut entries = Vec::new();
        for (i, r) in a.iter().enumerate() {
            let row = self.ell - 1 - i as u32;
            for (c, &v) in r.iter().enumerate() {
                if v != 0 {
                    entries.push((c as u32, row, v));
                }
            }
        }
        entries.sort_unstable_by_key(|&(c, r, _)| (r, c));
        let p = Pattern::new(self.m, self.ell, entries.iter().map(|&(c, r, _)| (c, r)).collect())?;
        Ok((p, entries.iter().map(|e| e.2).collect()))
    }

    /// Every matrix column holds exactly one nonzero entry.
    pub fn function_like(&self) -> bool {
        self.matrices
            .iter()
            .all(|a| (0..self.m as usize).all(|c| a.iter().filter(|r| r[c] != 0).count() == 1))
    }

    pub fn carpet(&self, max_generation: u32) -> Result<CarpetSpec, CarpetError> {
        let (p, _) = self.pattern(self.base)?;
        let k = validate_uniform_fibers(&p)?;
        CarpetSpec::new(self.m, self.ell, k, PatternSource::Labeled(self.clone()), max_generation)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ContinuityViolation {
    /// A column's cells do not form one vertical run.
    SplitColumn { generation: u32, column: u64 },
    /// A column holds no cell.
    EmptyColumn { generation: u32, column: u64 },
    /// Two adjacent columns' closed height ranges do not meet.
    Gap { generation: u32, left: u64, right: u64 },
}

/// Outcome of the column-matching check over generations `1..=checked`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContinuityCertificate {
    pub checked: u32,
    pub violation: Option<ContinuityViolation>,
}

impl ContinuityCertificate {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct AffineGraph {
    pub cells: Vec<CellIndex>,
    pub certificate: ContinuityCertificate,
    pub function_like: bool,
}

/// Generation-`n` cells of a labeled substitution, with a continuity certificate.
pub fn build_affine_graph(spec: &AffineGraphSpec, n: u32) -> Result<AffineGraph, CarpetError> {
    let carpet = spec.carpet(n)?;
    let gens = carpet.generations(n)?;
    let mut violation = None;
    for g in 1..=n {
        let cells: Vec<CellIndex> = gens[g as usize].iter().map(|x| x.cell).collect();
        if let Some(v) = column_violation(&cells, g, spec.m) {
            violation = Some(v);
            break;
        }
    }
    Ok(AffineGraph {
        cells: gens[n as usize].iter().map(|x| x.cell).collect(),
        certificate: ContinuityCertificate { checked: n, violation },
        function_like: spec.function_like(),
    })
}

fn column_violation(cells: &[CellIndex], g: u32, m: u32) -> Option<ContinuityViolation> {
    let cols = (m as u64).pow(g) as usize;
    let mut rows: Vec<Vec<u64>> = vec![Vec::new(); cols];
    for c in cells {
        rows[c.col as usize].push(c.row);
    }
    let mut ranges = Vec::with_capacity(cols);
    for (column, r) in rows.iter_mut().enumerate() {
        let column = column as u64;
        if r.is_empty() {
            return Some(ContinuityViolation::EmptyColumn { generation: g, column });
        }
        r.sort_unstable();
        r.dedup();
        let (lo, hi) = (r[0], r[r.len() - 1]);
        if hi - lo + 1 != r.len() as u64 {
            return Some(ContinuityViolation::SplitColumn { generation: g, column });
        }
        // Closed range [lo, hi + 1] in units of ell^-g.
        ranges.push((lo, hi + 1));
    }
    for (i, w) in ranges.windows(2).enumerate() {
        if w[0].0.max(w[1].0) > w[0].1.min(w[1].1) {
            return Some(ContinuityViolation::Gap { generation: g, left: i as u64, right: i as u64 + 1 });
        }
    }
    None
}

/// A rectangle of width `m^-j` and height `ell^-n`, `j = floor(alpha n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ApproxSquare {
    pub n: u32,
    pub j: u32,
    pub x_index: u64,
    pub y_index: u64,
    pub m: u32,
    pub ell: u32,
}

impl ApproxSquare {
    pub fn width(&self) -> Ratio<u64> {
        Ratio::new(1, (self.m as u64).pow(self.j))
    }

    pub fn height(&self) -> Ratio<u64> {
        Ratio::new(1, (self.ell as u64).pow(self.n))
    }

    /// `[x0, x1, y0, y1]` in floating point.
    pub fn rect(&self) -> [f64; 4] {
        let w = (self.m as f64).powi(self.j as i32);
        let h = (self.ell as f64).powi(self.n as i32);
        [self.x_index as f64 / w, (self.x_index + 1) as f64 / w, self.y_index as f64 / h, (self.y_index + 1) as f64 / h]
    }
}

/// `floor(n log ell / log m)`, computed exactly as the largest `j` with `m^j <= ell^n`.
pub fn alpha_floor(m: u32, ell: u32, n: u32) -> u32 {
    let target = (ell as u128).pow(n);
    let mut j = 0;
    let mut p: u128 = m as u128;
    while p <= target {
        j += 1;
        p *= m as u128;
    }
    j
}

/// Approximate squares of generation `n` meeting the carpet, sorted.
pub fn approximate_squares(spec: &CarpetSpec, n: u32) -> Result<Vec<ApproxSquare>, CarpetError> {
    let j = alpha_floor(spec.m, spec.ell, n);
    let shrink = (spec.m as u64).pow(n - j);
    let mut out: Vec<ApproxSquare> = build_generation(spec, n)?
        .iter()
        .map(|c| ApproxSquare { n, j, x_index: c.col / shrink, y_index: c.row, m: spec.m, ell: spec.ell })
        .collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxCountable;
    use alloc::collections::BTreeSet;

    #[test]
    fn uniform_fiber_validation() {
        let fig = CarpetSpec::alternating(3);
        assert_eq!(fig.k, 2);
        assert_eq!(validate_uniform_fibers(&Pattern::full(4, 2).unwrap()), Ok(4));
        let bad = Pattern::new(4, 2, vec![(0, 0), (1, 0), (2, 0), (3, 1)]).unwrap();
        assert_eq!(validate_uniform_fibers(&bad), Err(CarpetError::NonUniform(vec![(0, 3), (1, 1)])));
        assert!(Pattern::new(4, 2, vec![(4, 0)]).is_err());
        assert!(Pattern::new(2, 2, vec![(0, 0)]).is_err());
    }

    #[test]
    fn generation_counts() {
        let spec = CarpetSpec::alternating(5);
        let root = build_generation(&spec, 0).unwrap();
        assert_eq!(root, vec![CellIndex::root(4, 2)]);
        let g1 = build_generation(&spec, 1).unwrap();
        assert_eq!(g1.len(), 4);
        let g3 = build_generation(&spec, 3).unwrap();
        assert_eq!(g3.len(), 64);
        for row in 0..8 {
            assert_eq!(g3.iter().filter(|c| c.row == row).count(), 8);
        }
        assert!(build_generation(&spec, 6).is_err());
    }

    #[test]
    fn digits_round_trip() {
        let spec = CarpetSpec::alternating(4);
        for c in build_generation(&spec, 4).unwrap() {
            let mut d = CellIndex::root(4, 2);
            for (a, b) in c.digits() {
                d = d.child(a, b);
            }
            assert_eq!(d, c);
            assert_eq!(c.ancestor(4), c);
            assert_eq!(c.ancestor(3), c.parent().unwrap());
        }
    }

    #[test]
    fn dimension_formula() {
        assert_eq!(dim_formula(4, 2, 2).unwrap(), (1.5, 0.5));
        assert_eq!(dim_formula(7, 3, 1).unwrap(), (1.0, 0.0));
        let (h, s) = dim_formula(12, 3, 4).unwrap();
        assert!((h - 1.557_9).abs() < 1e-4 && (s - 0.557_9).abs() < 1e-4);
        assert!(dim_formula(4, 4, 2).is_err());
    }

    #[test]
    fn tent_affine_graph() {
        let spec = AffineGraphSpec::tent();
        assert!(spec.function_like());
        let g = build_affine_graph(&spec, 2).unwrap();
        // (k ell)^n cells with k = 2, ell = 2.
        assert_eq!(g.cells.len(), 16);
        assert!(g.certificate.passed());
        let deep = build_affine_graph(&spec, 6).unwrap();
        assert!(deep.certificate.passed());
        assert_eq!(deep.cells.len(), 4096);
    }

    #[test]
    fn full_grid_passes_continuity_but_is_not_a_graph() {
        let spec = AffineGraphSpec::new(4, 2, vec![vec![vec![1; 4]; 2]], 1).unwrap();
        let g = build_affine_graph(&spec, 3).unwrap();
        assert!(g.certificate.passed());
        assert!(!g.function_like);
    }

    #[test]
    fn broken_graph_is_reported() {
        let lopsided = AffineGraphSpec::new(
            4,
            2,
            vec![vec![vec![1, 1, 0, 0], vec![0, 0, 2, 2]], vec![vec![0, 0, 0, 0], vec![2, 2, 2, 2]]],
            1,
        )
        .unwrap();
        assert!(build_affine_graph(&lopsided, 2).is_err());
        let gap = AffineGraphSpec::new(4, 2, vec![vec![vec![1, 0, 1, 0], vec![0, 1, 0, 1]]], 1).unwrap();
        let g = build_affine_graph(&gap, 2).unwrap();
        assert_eq!(g.certificate.violation, Some(ContinuityViolation::Gap { generation: 2, left: 7, right: 8 }));
        let jump = AffineGraphSpec::new(4, 2, vec![vec![vec![1, 0, 0, 1], vec![0, 1, 1, 0]]], 1).unwrap();
        let g = build_affine_graph(&jump, 2).unwrap();
        assert_eq!(g.certificate.violation, Some(ContinuityViolation::Gap { generation: 2, left: 3, right: 4 }));
    }

    #[test]
    fn blocks_match_tent_matrices() {
        let small = AffineGraphSpec::blocks(2, 2).unwrap();
        assert_eq!(small, AffineGraphSpec::tent());
        let big = AffineGraphSpec::blocks(4, 3).unwrap();
        assert_eq!(big.matrices[0][0], vec![0, 0, 2, 3, 1, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(big.matrices[0][2], vec![2, 0, 0, 0, 0, 0, 0, 0, 0, 3, 1, 1]);
        assert_eq!(big.matrices[1][2], vec![1, 1, 1, 2, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(big.matrices[2][0], vec![3, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0]);
        for (k, ell) in [(2, 4), (4, 3), (3, 2)] {
            let spec = AffineGraphSpec::blocks(k, ell).unwrap();
            assert!(spec.function_like());
            assert!(build_affine_graph(&spec, 3).unwrap().certificate.passed(), "k={k} ell={ell}");
        }
        let (h, _) = dim_formula(8, 4, 2).unwrap();
        assert!((h - (1.0 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn per_cell_patterns_are_deterministic_and_uniform() {
        let spec = CarpetSpec::new(5, 3, 2, PatternSource::RandomFibers { seed: 9 }, 4).unwrap();
        let a = build_generation(&spec, 4).unwrap();
        let b = build_generation(&spec, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6usize.pow(4));
        for row in 0..81 {
            assert_eq!(a.iter().filter(|c| c.row == row).count(), 16);
        }
        let first: BTreeSet<_> = build_generation(&spec, 2).unwrap().into_iter().filter(|c| c.parent().unwrap().col == 0).collect();
        assert!(!first.is_empty());
    }

    #[test]
    fn sequence_source_uses_each_pattern_once() {
        let d1 = Pattern::new(4, 2, vec![(0, 0), (1, 0), (2, 1), (3, 1)]).unwrap();
        let d2 = Pattern::new(4, 2, vec![(0, 0), (3, 0), (1, 1), (2, 1)]).unwrap();
        let spec = CarpetSpec::new(4, 2, 2, PatternSource::Sequence(vec![d1, d2]), 3).unwrap();
        let g2 = build_generation(&spec, 2).unwrap();
        assert!(g2.iter().any(|c| c.digits() == vec![(0, 0), (3, 0)]));
        assert!(build_generation(&spec, 3).is_err());
    }

    #[test]
    fn fiber_and_heights() {
        let spec = CarpetSpec::alternating(6);
        let third = Ratio::new(1, 3);
        assert_eq!(spec.fiber(third, 2).unwrap().len(), 4);
        assert_eq!(spec.fiber(third, 0).unwrap().len(), 1);
        assert!(spec.fiber(Ratio::new(1, 4), 2).is_err());
        assert!(check_non_adic(Ratio::new(1, 6), 3).is_ok());
        assert!(check_non_adic(Ratio::new(1, 9), 3).is_err());
        assert_eq!(row_at(third, 2, 3), 2);
    }

    #[test]
    fn approximate_square_shapes() {
        let spec = CarpetSpec::alternating(6);
        let q2 = approximate_squares(&spec, 2).unwrap();
        assert!(q2.iter().all(|q| q.width() == Ratio::new(1, 4) && q.height() == Ratio::new(1, 4)));
        // Width m^-floor(alpha n) = 1 and height ell^-1 = 1/2 at n = 1.
        let q1 = approximate_squares(&spec, 1).unwrap();
        assert!(q1.iter().all(|q| q.width() == Ratio::new(1, 1) && q.height() == Ratio::new(1, 2)));
        for n in 1..=6 {
            for q in approximate_squares(&spec, n).unwrap() {
                let aspect = Ratio::new(*q.height().denom(), *q.width().denom());
                assert!(aspect >= Ratio::new(1, 4) && aspect <= Ratio::new(4, 1));
            }
        }
        let spec12 = CarpetSpec::new(12, 3, 4, PatternSource::RandomFibers { seed: 1 }, 4).unwrap();
        assert_eq!(alpha_floor(12, 3, 4), 1);
        assert_eq!(approximate_squares(&spec12, 4).unwrap()[0].j, 1);
    }

    #[test]
    fn approximate_squares_track_dyadic_boxes() {
        let spec = CarpetSpec::alternating(8);
        let cloud = generation_cloud(&spec, 8).unwrap();
        for n in 1..=6 {
            let squares = approximate_squares(&spec, n).unwrap().len() as f64;
            let boxes = cloud.occupied(n) as f64;
            assert!(squares <= 9.0 * boxes && boxes <= 9.0 * squares, "n={n} {squares} {boxes}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn counts_and_fibers(seed in any::<u64>(), m in 3u32..7, n in 0u32..4) {
                let ell = 2 + (seed % (m as u64 - 2)) as u32;
                let k = 1 + (seed / 7 % m as u64) as u32;
                let spec = CarpetSpec::new(m, ell, k, PatternSource::RandomFibers { seed }, 4).unwrap();
                let cells = build_generation(&spec, n).unwrap();
                prop_assert_eq!(cells.len() as u64, ((k * ell) as u64).pow(n));
                for row in 0..(ell as u64).pow(n) {
                    prop_assert_eq!(cells.iter().filter(|c| c.row == row).count() as u64, (k as u64).pow(n));
                }
                if n > 0 {
                    let parents: BTreeSet<_> = build_generation(&spec, n - 1).unwrap().into_iter().collect();
                    prop_assert!(cells.iter().all(|c| parents.contains(&c.parent().unwrap())));
                }
            }

            #[test]
            fn continuity_is_monotone_in_depth(seed in any::<u64>()) {
                let mats: Vec<Vec<Vec<u32>>> = (0..2)
                    .map(|j| {
                        let p = random_pattern(4, 2, 2, seed ^ j);
                        let mut a = vec![vec![0u32; 4]; 2];
                        for (i, &(c, r)) in p.cells().iter().enumerate() {
                            a[1 - r as usize][c as usize] = 1 + ((seed >> i) & 1) as u32;
                        }
                        a
                    })
                    .collect();
                let spec = AffineGraphSpec::new(4, 2, mats, 1).unwrap();
                let deep = build_affine_graph(&spec, 4).unwrap();
                if deep.certificate.passed() {
                    for n in 1..4 {
                        prop_assert!(build_affine_graph(&spec, n).unwrap().certificate.passed());
                    }
                }
            }
        }
    }
}
