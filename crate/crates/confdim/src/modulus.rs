//! Discrete Fuglede modulus of measure families.
//!
//! A problem has cells with background masses `mu` and families given as
//! sparse rows of weights. `Mod_p` is the infimum of `sum mu_c rho_c^p` over
//! densities `rho >= 0` with `sum_c lambda_{F,c} rho_c >= 1` for every family.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::ops::{Add, Div, Mul, Neg, Sub};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, One, Signed, ToPrimitive, Zero};

use crate::carpet::{build_generation, CarpetSpec, CellIndex};
use crate::error::ModulusError;
use crate::hmeasure::{ratio, VerticalCantorSelection};

/// Scalars the simplex can pivot on.
pub trait LpScalar:
    Clone
    + Debug
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn is_pos(&self) -> bool;
    fn is_neg(&self) -> bool;
    fn to_f64(&self) -> f64;
}

impl LpScalar for BigRational {
    fn is_pos(&self) -> bool {
        self.is_positive()
    }
    fn is_neg(&self) -> bool {
        self.is_negative()
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

const FLOAT_EPS: f64 = 1e-11;

impl LpScalar for f64 {
    fn is_pos(&self) -> bool {
        *self > FLOAT_EPS
    }
    fn is_neg(&self) -> bool {
        *self < -FLOAT_EPS
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModulusProblem<T = BigRational> {
    pub masses: Vec<T>,
    /// Sparse rows `(cell, weight)`.
    pub families: Vec<Vec<(usize, T)>>,
    pub p: f64,
}

impl<T: LpScalar> ModulusProblem<T> {
    pub fn new(masses: Vec<T>, families: Vec<Vec<(usize, T)>>, p: f64) -> Result<Self, ModulusError> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(ModulusError::BadExponent(p));
        }
        if let Some(c) = masses.iter().position(|m| m.is_neg()) {
            return Err(ModulusError::Negative(c));
        }
        for (f, row) in families.iter().enumerate() {
            for (c, w) in row {
                if *c >= masses.len() {
                    return Err(ModulusError::CellOutOfRange { family: f, cell: *c, cells: masses.len() });
                }
                if w.is_neg() {
                    return Err(ModulusError::Negative(*c));
                }
            }
            if !row.iter().any(|(_, w)| w.is_pos()) {
                return Err(ModulusError::EmptyFamily(f));
            }
        }
        Ok(ModulusProblem { masses, families, p })
    }

    pub fn cells(&self) -> usize {
        self.masses.len()
    }

    /// Same cells and masses, another exponent.
    pub fn with_exponent(&self, p: f64) -> Result<Self, ModulusError> {
        Self::new(self.masses.clone(), self.families.clone(), p)
    }

    pub fn to_f64(&self) -> ModulusProblem<f64> {
        ModulusProblem {
            masses: self.masses.iter().map(LpScalar::to_f64).collect(),
            families: self.families.iter().map(|r| r.iter().map(|(c, w)| (*c, w.to_f64())).collect()).collect(),
            p: self.p,
        }
    }

    fn family_integral(row: &[(usize, T)], rho: &[T]) -> T {
        row.iter().fold(T::zero(), |acc, (c, w)| acc + w.clone() * rho[*c].clone())
    }

    /// `sum mu rho^p` with `p = 1`.
    pub fn linear_cost(&self, rho: &[T]) -> T {
        self.masses.iter().zip(rho).fold(T::zero(), |acc, (m, r)| acc + m.clone() * r.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Admissibility<T> {
    pub admissible: bool,
    /// Smallest family integral, `None` for an empty family list.
    pub min_integral: Option<T>,
}

/// Checks `sum_c lambda_{F,c} rho_c >= 1` for every family; floating-point
/// inputs get a slack of `1e-12`.
pub fn is_admissible<T: LpScalar>(rho: &[T], prob: &ModulusProblem<T>) -> Result<Admissibility<T>, ModulusError> {
    if rho.len() != prob.cells() {
        return Err(ModulusError::MissingCell { expected: prob.cells(), found: rho.len() });
    }
    let mut min: Option<T> = None;
    for row in &prob.families {
        let s = ModulusProblem::family_integral(row, rho);
        if min.as_ref().is_none_or(|m| s < *m) {
            min = Some(s);
        }
    }
    let admissible = match &min {
        None => true,
        Some(m) => !(m.clone() - T::one()).is_neg() && m.to_f64() >= 1.0 - 1e-12,
    };
    Ok(Admissibility { admissible, min_integral: min })
}

/// Primal density plus dual weights for the linear case.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSolution<T> {
    pub value: T,
    pub rho: Vec<T>,
    /// One dual weight per family; families satisfied for free get zero.
    pub dual: Vec<T>,
    pub pivots: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexSolution {
    pub value: f64,
    pub rho: Vec<f64>,
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Solution<T> {
    Linear(LinearSolution<T>),
    Convex(ConvexSolution),
}

impl<T: LpScalar> Solution<T> {
    pub fn value_f64(&self) -> f64 {
        match self {
            Solution::Linear(s) => s.value.to_f64(),
            Solution::Convex(s) => s.value,
        }
    }

    pub fn rho_f64(&self) -> Vec<f64> {
        match self {
            Solution::Linear(s) => s.rho.iter().map(LpScalar::to_f64).collect(),
            Solution::Convex(s) => s.rho.clone(),
        }
    }
}

/// Step-size rule for the `p > 1` dual ascent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    /// Accelerated ascent with backtracking and restarts.
    Backtracking,
    /// `s0 / sqrt(iteration)`.
    InvSqrt(f64),
    /// Polyak steps towards a known optimal value.
    Polyak(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub step: StepRule,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-9, max_iter: 200_000, step: StepRule::Backtracking }
    }
}

/// Families touching a cell of zero mass are satisfied at no cost by a large
/// density there. Returns the remaining family indices and the density
/// needed on zero-mass cells.
fn free_families<T: LpScalar>(prob: &ModulusProblem<T>) -> (Vec<usize>, BTreeMap<usize, T>) {
    let mut kept = Vec::new();
    let mut boost: BTreeMap<usize, T> = BTreeMap::new();
    for (f, row) in prob.families.iter().enumerate() {
        let free = row.iter().find(|(c, w)| w.is_pos() && !prob.masses[*c].is_pos());
        match free {
            Some((c, w)) => {
                let need = T::one() / w.clone();
                let e = boost.entry(*c).or_insert_with(T::zero);
                if need > *e {
                    *e = need;
                }
            }
            None => kept.push(f),
        }
    }
    (kept, boost)
}

/// Solves the `p = 1` problem by the simplex method on its dual
/// `max sum y_F` subject to `sum_F y_F lambda_{F,c} <= mu_c`, `y >= 0`. The optimal density is read off the slack reduced costs.
pub fn solve_linear<T: LpScalar>(prob: &ModulusProblem<T>) -> Result<LinearSolution<T>, ModulusError> {
    let (kept, boost) = free_families(prob);
    let m = prob.cells();
    let nf = kept.len();
    let width = nf + m + 1;
    let mut tab: Vec<Vec<T>> = (0..m)
        .map(|c| {
            let mut row = vec![T::zero(); width];
            row[nf + c] = T::one();
            row[width - 1] = prob.masses[c].clone();
            row
        })
        .collect();
    for (j, &f) in kept.iter().enumerate() {
        for (c, w) in &prob.families[f] {
            tab[*c][j] = tab[*c][j].clone() + w.clone();
        }
    }
    let mut obj = vec![T::zero(); width];
    for v in obj.iter_mut().take(nf) {
        *v = -T::one();
    }
    let mut basis: Vec<usize> = (nf..nf + m).collect();
    let mut pivots = 0;
    let mut degenerate = 0;
    loop {
        // Most negative reduced cost; Bland's rule during degenerate stretches.
        let enter = if degenerate > m {
            (0..width - 1).find(|&j| obj[j].is_neg())
        } else {
            (0..width - 1).filter(|&j| obj[j].is_neg()).fold(None, |b: Option<usize>, j| match b {
                Some(k) if obj[k] <= obj[j] => Some(k),
                _ => Some(j),
            })
        };
        let Some(enter) = enter else { break };
        let mut leave: Option<(usize, T)> = None;
        for (i, row) in tab.iter().enumerate() {
            if row[enter].is_pos() {
                let r = row[width - 1].clone() / row[enter].clone();
                let better = match &leave {
                    None => true,
                    // Ties within the scalar's tolerance go to the lowest basis index.
                    Some((li, lr)) => {
                        let d = r.clone() - lr.clone();
                        d.is_neg() || (!d.is_pos() && basis[i] < basis[*li])
                    }
                };
                if better {
                    leave = Some((i, r));
                }
            }
        }
        // Bounded: every column has a positive entry since each family row is nonzero.
        let (li, step) = leave.ok_or(ModulusError::CertificateRejected("unbounded dual"))?;
        degenerate = if step.is_pos() { 0 } else { degenerate + 1 };
        let piv = tab[li][enter].clone();
        for v in tab[li].iter_mut() {
            *v = v.clone() / piv.clone();
        }
        let prow = tab[li].clone();
        for (i, row) in tab.iter_mut().enumerate() {
            if i != li && !row[enter].is_zero() {
                let f = row[enter].clone();
                for (v, pv) in row.iter_mut().zip(&prow) {
                    if !pv.is_zero() {
                        *v = v.clone() - f.clone() * pv.clone();
                    }
                }
            }
        }
        let f = obj[enter].clone();
        for (v, pv) in obj.iter_mut().zip(&prow) {
            if !pv.is_zero() {
                *v = v.clone() - f.clone() * pv.clone();
            }
        }
        basis[li] = enter;
        pivots += 1;
    }
    let mut dual = vec![T::zero(); prob.families.len()];
    for (i, &b) in basis.iter().enumerate() {
        if b < nf {
            dual[kept[b]] = tab[i][width - 1].clone();
        }
    }
    let mut rho: Vec<T> = (0..m).map(|c| obj[nf + c].clone()).collect();
    for (c, v) in boost {
        rho[c] = v;
    }
    let value = obj[width - 1].clone();
    Ok(LinearSolution { value, rho, dual, pivots })
}

/// Independent check of a linear solution: primal and dual feasibility and
/// equal objectives (within `1e-9` relative for floats, exactly otherwise).
pub fn verify_linear<T: LpScalar>(prob: &ModulusProblem<T>, sol: &LinearSolution<T>) -> Result<(), ModulusError> {
    if sol.rho.iter().any(LpScalar::is_neg) {
        return Err(ModulusError::CertificateRejected("negative density"));
    }
    if sol.dual.iter().any(LpScalar::is_neg) {
        return Err(ModulusError::CertificateRejected("negative dual weight"));
    }
    if !is_admissible(&sol.rho, prob)?.admissible {
        return Err(ModulusError::CertificateRejected("density not admissible"));
    }
    let mut load = vec![T::zero(); prob.cells()];
    for (row, y) in prob.families.iter().zip(&sol.dual) {
        for (c, w) in row {
            load[*c] = load[*c].clone() + w.clone() * y.clone();
        }
    }
    if load.iter().zip(&prob.masses).any(|(l, m)| (l.clone() - m.clone()).is_pos()) {
        return Err(ModulusError::CertificateRejected("dual weights overload a cell"));
    }
    let primal = prob.linear_cost(&sol.rho);
    let dual = sol.dual.iter().fold(T::zero(), |a, y| a + y.clone());
    let diff = (primal.clone() - dual).to_f64().abs();
    if (primal.clone() - sol.value.clone()).is_pos() || (sol.value.clone() - primal.clone()).is_pos() {
        return Err(ModulusError::CertificateRejected("reported value differs from the density cost"));
    }
    if diff > 1e-9 * primal.to_f64().abs().max(1.0) {
        return Err(ModulusError::CertificateRejected("duality gap"));
    }
    Ok(())
}

/// `Mod_p` of a problem: exact simplex for `p = 1`, dual ascent otherwise.
pub fn mod_p<T: LpScalar>(prob: &ModulusProblem<T>, opts: &SolverOptions) -> Result<Solution<T>, ModulusError> {
    if prob.p == 1.0 {
        let sol = solve_linear(prob)?;
        verify_linear(prob, &sol)?;
        Ok(Solution::Linear(sol))
    } else {
        Ok(Solution::Convex(solve_convex(&prob.to_f64(), opts)?))
    }
}

struct Dual<'a> {
    prob: &'a ModulusProblem<f64>,
    kept: Vec<usize>,
}

impl Dual<'_> {
    fn rho(&self, y: &[f64]) -> Vec<f64> {
        let p = self.prob.p;
        let mut g = vec![0.0; self.prob.cells()];
        for (&f, yf) in self.kept.iter().zip(y) {
            for (c, w) in &self.prob.families[f] {
                g[*c] += w * yf;
            }
        }
        g.iter()
            .zip(&self.prob.masses)
            .map(|(&gc, &mc)| if gc <= 0.0 || mc <= 0.0 { 0.0 } else { (gc / (p * mc)).powf(1.0 / (p - 1.0)) })
            .collect()
    }

    fn integrals(&self, rho: &[f64]) -> Vec<f64> {
        self.kept.iter().map(|&f| self.prob.families[f].iter().map(|(c, w)| w * rho[*c]).sum()).collect()
    }

    fn cost(&self, rho: &[f64]) -> f64 {
        rho.iter().zip(&self.prob.masses).map(|(r, m)| m * r.powf(self.prob.p)).sum()
    }

    /// Dual objective and the density minimizing the Lagrangian.
    fn value(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let rho = self.rho(y);
        let ys: f64 = y.iter().sum();
        (ys - (self.prob.p - 1.0) * self.cost(&rho), rho)
    }
}

/// Projected gradient ascent on the Lagrangian dual for `p > 1`. The
/// primal point is the Lagrangian minimizer rescaled to admissibility.
pub fn solve_convex(prob: &ModulusProblem<f64>, opts: &SolverOptions) -> Result<ConvexSolution, ModulusError> {
    let (kept, boost) = free_families(prob);
    let dual = Dual { prob, kept };
    let finish = |mut rho: Vec<f64>, value: f64, dual_value: f64, iterations: usize| {
        for (c, v) in &boost {
            rho[*c] = *v;
        }
        ConvexSolution { value, gap: (value - dual_value).max(0.0), rho, dual_value, iterations }
    };
    if dual.kept.is_empty() {
        return Ok(finish(vec![0.0; prob.cells()], 0.0, 0.0, 0));
    }
    let mut y = vec![1.0 / dual.kept.len() as f64; dual.kept.len()];
    let (mut d, mut rho) = dual.value(&y);
    let mut best = (f64::INFINITY, Vec::new());
    let mut step = 1.0;
    let mut gap = f64::INFINITY;
    let mut y_prev = y.clone();
    let mut momentum = 1.0;
    for it in 1..=opts.max_iter {
        let ints = dual.integrals(&rho);
        let lo = ints.iter().copied().fold(f64::INFINITY, f64::min);
        if lo > 0.0 {
            let primal = dual.cost(&rho) / lo.powf(prob.p);
            if primal < best.0 {
                best = (primal, rho.iter().map(|r| r / lo).collect());
            }
        }
        gap = best.0 - d;
        if gap <= opts.tol * best.0.abs().max(1.0) {
            return Ok(finish(best.1, best.0, d, it));
        }
        let grad: Vec<f64> = ints.iter().map(|i| 1.0 - i).collect();
        let project = |s: f64| -> Vec<f64> { y.iter().zip(&grad).map(|(a, g)| (a + s * g).max(0.0)).collect() };
        match opts.step {
            StepRule::Backtracking => {
                // Accelerated ascent. Near the optimum the dual is too flat for
                // function values to resolve progress, so both the step test
                // (local Lipschitz bound) and the restart test use gradients.
                let beta = (momentum - 1.0) / (0.5 + Float::sqrt(0.25 + momentum * momentum));
                let z: Vec<f64> = y.iter().zip(&y_prev).map(|(a, b)| (a + beta * (a - b)).max(0.0)).collect();
                let gz: Vec<f64> = dual.integrals(&dual.rho(&z)).iter().map(|i| 1.0 - i).collect();
                let (cand, rc) = loop {
                    let cand: Vec<f64> = z.iter().zip(&gz).map(|(a, g)| (a + step * g).max(0.0)).collect();
                    let rc = dual.rho(&cand);
                    let gc: Vec<f64> = dual.integrals(&rc).iter().map(|i| 1.0 - i).collect();
                    let dg: f64 = gc.iter().zip(&gz).map(|(a, b)| (a - b) * (a - b)).sum();
                    let dx: f64 = cand.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                    if step * step * dg <= dx || step < 1e-300 {
                        break (cand, rc);
                    }
                    step *= 0.5;
                };
                let progress: f64 = gz.iter().zip(cand.iter().zip(&y)).map(|(g, (c, a))| g * (c - a)).sum();
                if progress < 0.0 {
                    momentum = 1.0;
                    y_prev = y.clone();
                } else {
                    y_prev = core::mem::replace(&mut y, cand);
                    rho = rc;
                    d = dual.value(&y).0;
                    momentum = 0.5 + Float::sqrt(0.25 + momentum * momentum);
                    step *= 1.2;
                }
            }
            StepRule::InvSqrt(s0) => {
                y = project(s0 / Float::sqrt(it as f64));
                (d, rho) = dual.value(&y);
            }
            StepRule::Polyak(target) => {
                let norm: f64 = grad.iter().map(|g| g * g).sum();
                let s = if norm > 0.0 { ((target - d).max(0.0) / norm).max(1e-12) } else { 0.0 };
                y = project(s);
                (d, rho) = dual.value(&y);
            }
        }
    }
    Err(ModulusError::NoConvergence { iterations: opts.max_iter, gap })
}

/// Cells of a generation in build order, each of mass `(k l)^-n`, and an
/// index from cell to position.
fn carpet_cells(spec: &CarpetSpec, n: u32) -> Result<(Vec<CellIndex>, BTreeMap<CellIndex, usize>), ModulusError> {
    let cells = build_generation(spec, n)?;
    let index = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    Ok((cells, index))
}

/// Number of vertical selections down to generation `n`, saturating.
pub fn vertical_family_count(spec: &CarpetSpec, n: u32) -> f64 {
    let choices: f64 = (1..=n).map(|j| (spec.ell as f64).powi(j as i32)).sum();
    (spec.k as f64).powf(choices)
}

/// All vertical selections below the root, as sorted lists of finest cells.
pub fn enumerate_vertical_families(spec: &CarpetSpec, n: u32) -> Result<Vec<Vec<CellIndex>>, ModulusError> {
    fn below(spec: &CarpetSpec, node: &crate::carpet::Node, n: u32) -> Result<Vec<Vec<CellIndex>>, ModulusError> {
        if node.cell.generation == n {
            return Ok(vec![vec![node.cell]]);
        }
        let kids = spec.children(node)?;
        let mut acc: Vec<Vec<CellIndex>> = vec![Vec::new()];
        for r in 0..spec.ell as u64 {
            let row = node.cell.row * spec.ell as u64 + r;
            let mut options = Vec::new();
            for kid in kids.iter().filter(|c| c.cell.row == row) {
                options.extend(below(spec, kid, n)?);
            }
            acc = acc
                .iter()
                .flat_map(|a| options.iter().map(move |o| a.iter().chain(o).copied().collect::<Vec<_>>()))
                .collect();
        }
        Ok(acc)
    }
    let mut fams = below(spec, &spec.root(), n)?;
    for f in &mut fams {
        f.sort_unstable();
    }
    Ok(fams)
}

/// The carpet problem at generation `n` for the given families: masses
/// `(k l)^-n`, each selected finest cell weighted by its height `l^-n`.
pub fn carpet_problem(spec: &CarpetSpec, n: u32, families: &[Vec<CellIndex>], p: f64) -> Result<ModulusProblem, ModulusError> {
    let (cells, index) = carpet_cells(spec, n)?;
    let mass = ratio(1, (spec.k as u64 * spec.ell as u64).pow(n));
    let height = ratio(1, (spec.ell as u64).pow(n));
    let rows = families.iter().map(|f| f.iter().map(|c| (index[c], height.clone())).collect()).collect();
    ModulusProblem::new(vec![mass; cells.len()], rows, p)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerticalModulusConfig {
    /// Largest family count solved exactly.
    pub budget: usize,
    /// Families drawn when the budget is exceeded.
    pub samples: usize,
    pub seed: u64,
}

impl Default for VerticalModulusConfig {
    fn default() -> Self {
        VerticalModulusConfig { budget: 4096, samples: 1000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerticalModulus {
    pub generation: u32,
    pub total_families: f64,
    pub families_used: usize,
    /// Whether a random subfamily was used; its modulus can only be smaller.
    pub sampled: bool,
    pub exact: Option<BigRational>,
    pub value: f64,
    /// The constant density 1 is admissible with cost 1.
    pub unit_density_optimal: bool,
}

/// `Mod_1` of the vertical Cantor families of the carpet at generation `n`.
pub fn carpet_vertical_modulus(spec: &CarpetSpec, n: u32, cfg: &VerticalModulusConfig) -> Result<VerticalModulus, ModulusError> {
    let total = vertical_family_count(spec, n);
    if total <= cfg.budget as f64 {
        let fams = enumerate_vertical_families(spec, n)?;
        let prob = carpet_problem(spec, n, &fams, 1.0)?;
        let sol = solve_linear(&prob)?;
        verify_linear(&prob, &sol)?;
        let ones = vec![BigRational::one(); prob.cells()];
        let adm = is_admissible(&ones, &prob)?;
        let unit = adm.admissible && prob.linear_cost(&ones) == sol.value;
        return Ok(VerticalModulus {
            generation: n,
            total_families: total,
            families_used: fams.len(),
            sampled: false,
            value: LpScalar::to_f64(&sol.value),
            exact: Some(sol.value),
            unit_density_optimal: unit,
        });
    }
    let mut seen = BTreeSet::new();
    for i in 0..cfg.samples {
        let sel = VerticalCantorSelection::random(spec, n, crate::carpet::cell_seed(cfg.seed, &CellIndex::root(spec.m, spec.ell)) ^ i as u64)?;
        seen.insert(sel.cells_at(n));
    }
    let fams: Vec<_> = seen.into_iter().collect();
    let prob = carpet_problem(spec, n, &fams, 1.0)?.to_f64();
    let sol = solve_linear(&prob)?;
    verify_linear(&prob, &sol)?;
    let ones = vec![1.0; prob.cells()];
    let unit = is_admissible(&ones, &prob)?.admissible && (prob.linear_cost(&ones) - 1.0).abs() < 1e-12;
    Ok(VerticalModulus {
        generation: n,
        total_families: total,
        families_used: fams.len(),
        sampled: true,
        exact: None,
        value: sol.value,
        unit_density_optimal: unit && (sol.value - 1.0).abs() < 1e-9,
    })
}

/// Output of the symmetrization.
#[derive(Clone, Debug, PartialEq)]
pub struct RhoInfinity {
    /// Indexed like `build_generation(spec, n)`.
    pub rho: Vec<BigRational>,
    pub selection: VerticalCantorSelection,
}

/// Top-down choice, per chosen cell and row, of the child with the smallest
/// mean of `rho` over its generation-`n` descendants (ties to the lowest
/// column). The result is constant along each generation-`n` row and equals
/// `rho` at the chosen cell of that row.
pub fn rho_infinity(spec: &CarpetSpec, n: u32, rho: &[BigRational]) -> Result<RhoInfinity, ModulusError> {
    let (cells, index) = carpet_cells(spec, n)?;
    if rho.len() != cells.len() {
        return Err(ModulusError::MissingCell { expected: cells.len(), found: rho.len() });
    }
    let mut sums: BTreeMap<CellIndex, (BigRational, u64)> = BTreeMap::new();
    for (c, v) in cells.iter().zip(rho) {
        for g in 0..=n {
            let e = sums.entry(c.ancestor(g)).or_insert_with(|| (BigRational::zero(), 0));
            e.0 += v.clone();
            e.1 += 1;
        }
    }
    let mean = |c: &CellIndex| {
        let (s, k) = &sums[c];
        s.clone() / BigInt::from(*k)
    };
    let selection = VerticalCantorSelection::build(spec, n, |_, _, cands| {
        let mut best = 0;
        for i in 1..cands.len() {
            if mean(&cands[i]) < mean(&cands[best]) {
                best = i;
            }
        }
        best
    })?;
    let by_row: BTreeMap<u64, BigRational> = selection.cells_at(n).iter().map(|c| (c.row, rho[index[c]].clone())).collect();
    let out = cells.iter().map(|c| by_row[&c.row].clone()).collect();
    Ok(RhoInfinity { rho: out, selection })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubadditivityReport {
    pub union_value: f64,
    pub part_values: Vec<f64>,
    /// Exact values when `p = 1`.
    pub exact: Option<(BigRational, Vec<BigRational>)>,
    pub holds: bool,
}

/// Solves the union of the families and each part, then checks
/// `Mod(union) <= sum of Mod(part)`.
pub fn mod_subadditivity_check(probs: &[ModulusProblem], opts: &SolverOptions) -> Result<SubadditivityReport, ModulusError> {
    let first = probs.first().ok_or(ModulusError::Incompatible("empty problem list"))?;
    if probs.iter().any(|q| q.masses != first.masses) {
        return Err(ModulusError::Incompatible("cell masses"));
    }
    if probs.iter().any(|q| q.p != first.p) {
        return Err(ModulusError::Incompatible("exponent"));
    }
    let union = ModulusProblem::new(first.masses.clone(), probs.iter().flat_map(|q| q.families.clone()).collect(), first.p)?;
    let u = mod_p(&union, opts)?;
    let parts: Vec<Solution<BigRational>> = probs.iter().map(|q| mod_p(q, opts)).collect::<Result<_, _>>()?;
    let part_values: Vec<f64> = parts.iter().map(Solution::value_f64).collect();
    let exact = match (&u, first.p == 1.0) {
        (Solution::Linear(us), true) => Some((
            us.value.clone(),
            parts
                .iter()
                .map(|s| match s {
                    Solution::Linear(l) => l.value.clone(),
                    Solution::Convex(_) => unreachable!("p = 1 is solved linearly"),
                })
                .collect::<Vec<_>>(),
        )),
        _ => None,
    };
    let holds = match &exact {
        Some((uv, pv)) => *uv <= pv.iter().cloned().sum::<BigRational>(),
        None => u.value_f64() <= part_values.iter().sum::<f64>() * (1.0 + 1e-8) + 1e-12,
    };
    Ok(SubadditivityReport { union_value: u.value_f64(), part_values, exact, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(p: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(p), BigInt::from(d))
    }

    /// Columns of an `n x n` grid, masses `1/n^2`, weights `1/n`.
    fn grid(n: usize, p: f64) -> ModulusProblem {
        let fams = (0..n).map(|col| (0..n).map(|row| (row * n + col, q(1, n as i64))).collect()).collect();
        ModulusProblem::new(vec![q(1, (n * n) as i64); n * n], fams, p).unwrap()
    }

    /// Brute-force `Mod_1` oracle: the optimum sits at a vertex of the
    /// admissible polyhedron, so scan every subset of tight constraints
    /// and zero coordinates (small instances only).
    fn vertex_oracle(prob: &ModulusProblem) -> BigRational {
        let m = prob.cells();
        let fams = prob.families.len();
        let mut best: Option<BigRational> = None;
        // Each candidate picks m linearly independent equalities among
        // family rows (= 1) and coordinates (= 0).
        let total = fams + m;
        let mut choose = vec![0usize; m];
        fn next(c: &mut [usize], n: usize) -> bool {
            let k = c.len();
            let mut i = k;
            while i > 0 {
                i -= 1;
                if c[i] < n - k + i {
                    c[i] += 1;
                    for j in i + 1..k {
                        c[j] = c[j - 1] + 1;
                    }
                    return true;
                }
            }
            false
        }
        for (i, v) in choose.iter_mut().enumerate() {
            *v = i;
        }
        if total < m {
            return BigRational::zero();
        }
        loop {
            let mut a: Vec<Vec<BigRational>> = Vec::new();
            for &e in &choose {
                let mut row = vec![BigRational::zero(); m + 1];
                if e < fams {
                    for (c, w) in &prob.families[e] {
                        row[*c] += w.clone();
                    }
                    row[m] = BigRational::one();
                } else {
                    row[e - fams] = BigRational::one();
                }
                a.push(row);
            }
            if let Some(x) = gauss(a, m) {
                if x.iter().all(|v| !v.is_negative()) && is_admissible(&x, prob).unwrap().admissible {
                    let cost = prob.linear_cost(&x);
                    if best.as_ref().is_none_or(|b| cost < *b) {
                        best = Some(cost);
                    }
                }
            }
            if !next(&mut choose, total) {
                break;
            }
        }
        best.unwrap()
    }

    fn gauss(mut a: Vec<Vec<BigRational>>, m: usize) -> Option<Vec<BigRational>> {
        for col in 0..m {
            let piv = (col..m).find(|&r| !a[r][col].is_zero())?;
            a.swap(col, piv);
            let p = a[col][col].clone();
            for v in a[col].iter_mut() {
                *v = v.clone() / p.clone();
            }
            for r in 0..m {
                if r != col && !a[r][col].is_zero() {
                    let f = a[r][col].clone();
                    let prow = a[col].clone();
                    for (v, pv) in a[r].iter_mut().zip(prow) {
                        *v = v.clone() - f.clone() * pv;
                    }
                }
            }
        }
        Some(a.into_iter().map(|r| r[m].clone()).collect())
    }

    fn linear(prob: &ModulusProblem) -> LinearSolution<BigRational> {
        match mod_p(prob, &SolverOptions::default()).unwrap() {
            Solution::Linear(s) => s,
            Solution::Convex(_) => panic!("expected a linear solution"),
        }
    }

    #[test]
    fn admissibility_examples() {
        let g = grid(3, 1.0);
        let one = is_admissible(&vec![BigRational::one(); 9], &g).unwrap();
        assert!(one.admissible);
        assert_eq!(one.min_integral, Some(BigRational::one()));
        assert!(!is_admissible(&vec![BigRational::zero(); 9], &g).unwrap().admissible);
        let half = is_admissible(&vec![q(1, 2); 9], &g).unwrap();
        assert!(!half.admissible);
        assert_eq!(half.min_integral, Some(q(1, 2)));
        assert!(matches!(is_admissible(&vec![BigRational::one(); 4], &g), Err(ModulusError::MissingCell { .. })));
    }

    #[test]
    fn bad_problems_are_rejected() {
        assert!(ModulusProblem::new(vec![q(1, 1)], vec![vec![(0, q(1, 1))]], 0.5).is_err());
        assert!(ModulusProblem::new(vec![q(1, 1)], vec![vec![(0, q(0, 1))]], 1.0).is_err());
        assert!(ModulusProblem::new(vec![q(1, 1)], vec![vec![(3, q(1, 1))]], 1.0).is_err());
    }

    #[test]
    fn trivial_instances() {
        let empty = ModulusProblem::new(vec![q(1, 2), q(1, 2)], vec![], 1.0).unwrap();
        assert_eq!(linear(&empty).value, BigRational::zero());
        let single = ModulusProblem::new(vec![q(1, 1), q(3, 5)], vec![vec![(1, q(2, 7))]], 1.0).unwrap();
        let s = linear(&single);
        assert_eq!(s.value, q(3, 5) / q(2, 7));
        assert_eq!(s.rho[1], q(7, 2));
        assert_eq!(s.rho[0], BigRational::zero());
    }

    #[test]
    fn grid_columns_have_unit_modulus() {
        for n in 2..=4 {
            let g = grid(n, 1.0);
            let s = linear(&g);
            assert_eq!(s.value, BigRational::one());
            assert_eq!(s.value, vertex_oracle(&g).min(s.value.clone()));
            assert!(is_admissible(&s.rho, &g).unwrap().admissible);
        }
        assert_eq!(vertex_oracle(&grid(2, 1.0)), BigRational::one());
    }

    #[test]
    fn zero_mass_cells_make_families_free() {
        let prob = ModulusProblem::new(vec![q(0, 1), q(1, 1)], vec![vec![(0, q(1, 2)), (1, q(1, 2))]], 1.0).unwrap();
        let s = linear(&prob);
        assert_eq!(s.value, BigRational::zero());
        assert_eq!(s.rho[0], q(2, 1));
        let c = solve_convex(&prob.to_f64().with_exponent(2.0).unwrap(), &SolverOptions::default()).unwrap();
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn convex_single_family_matches_closed_form() {
        // Mod_p = (sum lambda^q mu^(1-q))^(1-p), q = p/(p-1).
        let masses = [0.2, 0.5, 0.3];
        let weights = [0.6, 0.3, 0.1];
        for p in [1.5, 2.0, 3.0] {
            let prob = ModulusProblem::new(masses.to_vec(), vec![(0..3).map(|c| (c, weights[c])).collect()], p).unwrap();
            let s = solve_convex(&prob, &SolverOptions::default()).unwrap();
            let qe = p / (p - 1.0);
            let want = masses.iter().zip(weights).map(|(m, w)| w.powf(qe) * m.powf(1.0 - qe)).sum::<f64>().powf(1.0 - p);
            assert!((s.value - want).abs() < 1e-8, "p={p} {} vs {want}", s.value);
            assert!(s.gap <= 1e-9 * s.value.max(1.0));
            assert!(is_admissible(&s.rho, &prob).unwrap().admissible);
        }
    }

    #[test]
    fn convex_grid_and_step_rules() {
        let g = grid(3, 2.0).to_f64();
        let s = solve_convex(&g, &SolverOptions::default()).unwrap();
        assert!((s.value - 1.0).abs() < 1e-8);
        for step in [StepRule::InvSqrt(1.0), StepRule::Polyak(1.0)] {
            let opts = SolverOptions { step, max_iter: 100_000, tol: 1e-6 };
            let s = solve_convex(&g, &opts).unwrap();
            assert!((s.value - 1.0).abs() < 1e-5, "{step:?}");
        }
    }

    #[test]
    fn float_simplex_agrees_with_exact() {
        let g = grid(4, 1.0);
        let f = solve_linear(&g.to_f64()).unwrap();
        verify_linear(&g.to_f64(), &f).unwrap();
        assert!((f.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn carpet_vertical_modulus_is_one() {
        let spec = CarpetSpec::alternating(3);
        assert_eq!(vertical_family_count(&spec, 1), 4.0);
        assert_eq!(vertical_family_count(&spec, 2), 64.0);
        assert_eq!(enumerate_vertical_families(&spec, 2).unwrap().len(), 64);
        for n in 1..=2 {
            let v = carpet_vertical_modulus(&spec, n, &VerticalModulusConfig::default()).unwrap();
            assert_eq!(v.exact, Some(BigRational::one()));
            assert!(!v.sampled && v.unit_density_optimal);
        }
    }

    #[test]
    fn sampled_carpet_modulus_is_at_most_one() {
        let spec = CarpetSpec::alternating(4);
        let cfg = VerticalModulusConfig { budget: 64, samples: 200, seed: 5 };
        let v = carpet_vertical_modulus(&spec, 4, &cfg).unwrap();
        assert!(v.sampled);
        assert!(v.value <= 1.0 + 1e-9 && v.value > 0.0);
    }

    #[test]
    fn rho_infinity_hand_example() {
        let spec = CarpetSpec::alternating(1);
        // Cells in build order: (0,0), (2,0), (1,1), (3,1).
        let rho = vec![q(2, 1), q(3, 1), q(5, 1), q(7, 1)];
        let out = rho_infinity(&spec, 1, &rho).unwrap();
        assert_eq!(out.rho, vec![q(2, 1), q(2, 1), q(5, 1), q(5, 1)]);
        let mu = q(1, 4);
        let integral: BigRational = out.rho.iter().map(|r| r * &mu).sum();
        assert_eq!(integral, q(7, 2));
        assert_eq!(out.selection.cells_at(1).iter().map(|c| c.col).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn rho_infinity_constant_and_idempotent() {
        let spec = CarpetSpec::alternating(2);
        let c = vec![q(3, 2); 16];
        assert_eq!(rho_infinity(&spec, 2, &c).unwrap().rho, c);
        let rho: Vec<BigRational> = (0..16).map(|i| q((i * 7 % 11) + 1, 3)).collect();
        let once = rho_infinity(&spec, 2, &rho).unwrap();
        let twice = rho_infinity(&spec, 2, &once.rho).unwrap();
        assert_eq!(once.rho, twice.rho);
    }

    #[test]
    fn rho_infinity_contract_on_random_admissible_densities() {
        let spec = CarpetSpec::alternating(2);
        let fams = enumerate_vertical_families(&spec, 2).unwrap();
        let prob = carpet_problem(&spec, 2, &fams, 1.0).unwrap();
        let mut state = 17u64;
        for _ in 0..20 {
            let raw: Vec<BigRational> = (0..16)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    q(((state >> 33) % 20) as i64 + 1, 4)
                })
                .collect();
            let scale = is_admissible(&raw, &prob).unwrap().min_integral.unwrap();
            let rho: Vec<BigRational> = raw.iter().map(|r| r / &scale).collect();
            assert!(is_admissible(&rho, &prob).unwrap().admissible);
            let out = rho_infinity(&spec, 2, &rho).unwrap();
            assert!(prob.linear_cost(&out.rho) <= prob.linear_cost(&rho));
            assert!(is_admissible(&out.rho, &prob).unwrap().admissible);
        }
    }

    #[test]
    fn subadditivity_examples() {
        let masses = vec![q(1, 2), q(1, 2)];
        let a = ModulusProblem::new(masses.clone(), vec![vec![(0, q(1, 1))]], 1.0).unwrap();
        let b = ModulusProblem::new(masses.clone(), vec![vec![(1, q(1, 1))]], 1.0).unwrap();
        let r = mod_subadditivity_check(&[a.clone(), b], &SolverOptions::default()).unwrap();
        assert!(r.holds);
        let (u, parts) = r.exact.unwrap();
        assert_eq!(u, parts.iter().cloned().sum::<BigRational>());
        let r = mod_subadditivity_check(&[a.clone(), a.clone()], &SolverOptions::default()).unwrap();
        let (u, parts) = r.exact.unwrap();
        assert_eq!(u, parts[0]);
        let c = ModulusProblem::new(vec![q(1, 2)], vec![vec![(0, q(1, 1))]], 1.0).unwrap();
        assert!(mod_subadditivity_check(&[a, c], &SolverOptions::default()).is_err());
    }

    fn small_problem() -> impl Strategy<Value = ModulusProblem> {
        (2usize..=5, 1usize..=4).prop_flat_map(|(cells, fams)| {
            (
                proptest::collection::vec(0i64..5, cells),
                proptest::collection::vec(proptest::collection::vec(0i64..4, cells), fams),
            )
                .prop_filter_map("empty family", move |(ms, rows)| {
                    let families: Vec<Vec<(usize, BigRational)>> = rows
                        .iter()
                        .map(|r| r.iter().enumerate().filter(|(_, w)| **w > 0).map(|(c, w)| (c, q(*w, 3))).collect())
                        .collect();
                    ModulusProblem::new(ms.iter().map(|m| q(*m, 4)).collect(), families, 1.0).ok()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn simplex_matches_vertex_oracle(prob in small_problem()) {
            let s = linear(&prob);
            prop_assert_eq!(s.value.clone(), vertex_oracle(&prob));
        }

        #[test]
        fn monotone_and_scaling(prob in small_problem(), extra in proptest::collection::vec(1i64..4, 5), c in 1i64..5) {
            let base = linear(&prob).value;
            let row: Vec<(usize, BigRational)> = (0..prob.cells()).map(|i| (i, q(extra[i], 2))).collect();
            let mut more = prob.clone();
            more.families.push(row);
            prop_assert!(linear(&more).value >= base);
            let scaled = ModulusProblem::new(prob.masses.iter().map(|m| m * q(c, 1)).collect(), prob.families.clone(), 1.0).unwrap();
            prop_assert_eq!(linear(&scaled).value, base * q(c, 1));
        }

        #[test]
        fn subadditive_on_random_splits(prob in small_problem()) {
            let parts: Vec<ModulusProblem> = prob.families.iter()
                .map(|f| ModulusProblem::new(prob.masses.clone(), vec![f.clone()], 1.0).unwrap())
                .collect();
            prop_assert!(mod_subadditivity_check(&parts, &SolverOptions::default()).unwrap().holds);
        }

        #[test]
        fn zero_pattern_agrees_across_exponents(prob in small_problem()) {
            let one = linear(&prob).value;
            let two = solve_convex(&prob.to_f64().with_exponent(2.0).unwrap(), &SolverOptions::default()).unwrap();
            prop_assert_eq!(one.is_zero(), two.value == 0.0);
        }
    }
}
