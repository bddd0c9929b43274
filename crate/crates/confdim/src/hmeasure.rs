//! Exact measures on cell trees: the carpet measure, slice measures,
//! vertical Cantor pullbacks of Lebesgue measure and diameter-weighted
//! measures on hierarchical spaces, with the matching checkers.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Float, One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::carpet::{approximate_squares, row_at, CarpetSpec, CellIndex};
use crate::error::MeasureError;

/// `p / q` as a big rational.
pub fn ratio(p: u64, q: u64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MassNode<K, M> {
    pub key: K,
    pub mass: M,
    pub depth: u32,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// A rooted tree with a mass on every node; node 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct MassTree<K, M = BigRational> {
    nodes: Vec<MassNode<K, M>>,
}

impl<K: Clone + Ord, M: Clone> MassTree<K, M> {
    pub fn new(root: K, mass: M) -> Self {
        MassTree { nodes: vec![MassNode { key: root, mass, depth: 0, parent: None, children: Vec::new() }] }
    }

    pub fn push(&mut self, parent: usize, key: K, mass: M) -> usize {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(MassNode { key, mass, depth, parent: Some(parent), children: Vec::new() });
        self.nodes[parent].children.push(id);
        id
    }

    pub fn nodes(&self) -> &[MassNode<K, M>] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn at_depth(&self, d: u32) -> impl Iterator<Item = &MassNode<K, M>> {
        self.nodes.iter().filter(move |n| n.depth == d)
    }

    /// Mass by key, for trees whose keys are unique.
    pub fn mass_map(&self) -> BTreeMap<K, M> {
        self.nodes.iter().map(|n| (n.key.clone(), n.mass.clone())).collect()
    }
}

impl<K: Clone + Ord> MassTree<K, BigRational> {
    /// Nodes whose children's masses do not sum to their own mass.
    pub fn conservation_failures(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.children.is_empty())
            .filter(|(_, n)| {
                let s: BigRational = n.children.iter().map(|&c| self.nodes[c].mass.clone()).sum();
                s != n.mass
            })
            .map(|(i, _)| i)
            .collect()
    }
}

impl<K: Clone + Ord> MassTree<K, f64> {
    pub fn conservation_failures(&self, tol: f64) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.children.is_empty())
            .filter(|(_, n)| {
                let s: f64 = n.children.iter().map(|&c| self.nodes[c].mass).sum();
                (s - n.mass).abs() > tol
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// The carpet measure: each cell's mass is split equally among its children.
pub fn carpet_measure(spec: &CarpetSpec, n: u32) -> Result<MassTree<CellIndex>, MeasureError> {
    let mut tree = MassTree::new(spec.root().cell, BigRational::one());
    let mut frontier = vec![(0usize, spec.root())];
    for _ in 0..n {
        let mut next = Vec::with_capacity(frontier.len() * (spec.k * spec.ell) as usize);
        for (id, node) in &frontier {
            let kids = spec.children(node)?;
            let share = tree.nodes[*id].mass.clone() / BigInt::from(kids.len());
            for kid in kids {
                let cid = tree.push(*id, kid.cell, share.clone());
                next.push((cid, kid));
            }
        }
        frontier = next;
    }
    Ok(tree)
}

/// The slice measure at height `a`: equal splitting along the fiber tree.
pub fn slice_measure(spec: &CarpetSpec, a: Ratio<u64>, n: u32) -> Result<MassTree<CellIndex>, MeasureError> {
    crate::carpet::check_non_adic(a, spec.ell)?;
    let mut tree = MassTree::new(spec.root().cell, BigRational::one());
    let mut frontier = vec![(0usize, spec.root())];
    for g in 1..=n {
        let target = row_at(a, spec.ell, g);
        let mut next = Vec::new();
        for (id, node) in &frontier {
            let kids: Vec<_> = spec.children(node)?.into_iter().filter(|c| c.cell.row == target).collect();
            let share = tree.nodes[*id].mass.clone() / BigInt::from(kids.len());
            for kid in kids {
                let cid = tree.push(*id, kid.cell, share.clone());
                next.push((cid, kid));
            }
        }
        frontier = next;
    }
    Ok(tree)
}

/// Per-cell outcome of the disintegration and pushforward identities.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DisintegrationReport {
    pub cells_checked: usize,
    /// Cells where `mu(cell)`, the band integral of the slice measures and
    /// `k^-j l^-j` do not all agree.
    pub cell_failures: Vec<CellIndex>,
    pub bands_checked: usize,
    /// `(generation, band)` pairs whose pushforward mass differs from `l^-j`.
    pub pushforward_failures: Vec<(u32, u64)>,
}

impl DisintegrationReport {
    pub fn passed(&self) -> bool {
        self.cell_failures.is_empty() && self.pushforward_failures.is_empty()
    }
}

fn first_prime_not_dividing(ell: u32) -> u64 {
    [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31].into_iter().find(|p| ell as u64 % p != 0).unwrap_or(37)
}

/// Checks `mu(cell) = sum over bands of mu_a(cell) |band| = k^-j l^-j` for every
/// cell of generation `j <= n`, with `a` one non-`l`-adic height per
/// generation-`n` band, and `pi_y* mu = Lebesgue` on every band.
pub fn check_disintegration(spec: &CarpetSpec, n: u32) -> Result<DisintegrationReport, MeasureError> {
    let mu = carpet_measure(spec, n)?;
    let ell = spec.ell as u64;
    let bands = ell.pow(n);
    let q = first_prime_not_dividing(spec.ell);
    let width = ratio(1, bands);
    let mut integral: BTreeMap<CellIndex, BigRational> = BTreeMap::new();
    for b in 0..bands {
        let a = Ratio::new(b * q + 1, q * bands);
        let slice = slice_measure(spec, a, n)?;
        for node in slice.nodes() {
            *integral.entry(node.key).or_insert_with(BigRational::zero) += node.mass.clone() * width.clone();
        }
    }
    let mut report = DisintegrationReport::default();
    let mut pushed: BTreeMap<(u32, u64), BigRational> = BTreeMap::new();
    for node in mu.nodes() {
        let j = node.depth as u64;
        let expected = ratio(1, (spec.k as u64 * ell).pow(j as u32));
        let lhs = &node.mass;
        let rhs = integral.get(&node.key).cloned().unwrap_or_else(BigRational::zero);
        report.cells_checked += 1;
        if *lhs != rhs || *lhs != expected {
            report.cell_failures.push(node.key);
        }
        *pushed.entry((node.depth, node.key.row)).or_insert_with(BigRational::zero) += lhs.clone();
    }
    for g in 0..=n {
        let len = ratio(1, ell.pow(g));
        for b in 0..ell.pow(g) {
            report.bands_checked += 1;
            if pushed.get(&(g, b)) != Some(&len) {
                report.pushforward_failures.push((g, b));
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelNode {
    pub cell: CellIndex,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// One chosen child per row under every chosen cell, down to `depth`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerticalCantorSelection {
    nodes: Vec<SelNode>,
    depth: u32,
}

impl VerticalCantorSelection {
    /// Builds a selection; `choose(parent, row_digit, candidates)` returns an
    /// index into `candidates`, which are sorted by column.
    pub fn build(
        spec: &CarpetSpec,
        depth: u32,
        mut choose: impl FnMut(&CellIndex, u32, &[CellIndex]) -> usize,
    ) -> Result<Self, MeasureError> {
        let root = spec.root();
        let mut nodes = vec![SelNode { cell: root.cell, parent: None, children: Vec::new() }];
        let mut frontier = vec![(0usize, root)];
        for _ in 0..depth {
            let mut next = Vec::new();
            for (id, node) in &frontier {
                let kids = spec.children(node)?;
                for r in 0..spec.ell {
                    let row = node.cell.row * spec.ell as u64 + r as u64;
                    let mut cands: Vec<_> = kids.iter().filter(|c| c.cell.row == row).cloned().collect();
                    cands.sort_by_key(|c| c.cell.col);
                    let cells: Vec<CellIndex> = cands.iter().map(|c| c.cell).collect();
                    let pick = choose(&node.cell, r, &cells).min(cells.len() - 1);
                    let cid = nodes.len();
                    nodes.push(SelNode { cell: cells[pick], parent: Some(*id), children: Vec::new() });
                    nodes[*id].children.push(cid);
                    next.push((cid, cands[pick].clone()));
                }
            }
            frontier = next;
        }
        Ok(VerticalCantorSelection { nodes, depth })
    }

    /// Always the lowest column.
    pub fn leftmost(spec: &CarpetSpec, depth: u32) -> Result<Self, MeasureError> {
        Self::build(spec, depth, |_, _, _| 0)
    }

    /// Uniformly random choices from a seed.
    pub fn random(spec: &CarpetSpec, depth: u32, seed: u64) -> Result<Self, MeasureError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(spec, depth, |_, _, c| rng.gen_range(0..c.len()))
    }

    /// Assembles a selection from raw nodes; checked by [`VerticalCantorSelection::validate`].
    pub fn from_nodes(nodes: Vec<SelNode>, depth: u32) -> Self {
        VerticalCantorSelection { nodes, depth }
    }

    pub fn nodes(&self) -> &[SelNode] {
        &self.nodes
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Chosen cells of generation `g`.
    pub fn cells_at(&self, g: u32) -> Vec<CellIndex> {
        self.nodes.iter().filter(|n| n.cell.generation == g).map(|n| n.cell).collect()
    }

    /// Every chosen cell above the last generation has exactly one chosen
    /// child in each of its `l` rows.
    pub fn validate(&self, spec: &CarpetSpec) -> Result<(), MeasureError> {
        for node in &self.nodes {
            if node.cell.generation >= self.depth {
                continue;
            }
            let bad = |reason| MeasureError::InvalidSelection {
                generation: node.cell.generation,
                col: node.cell.col,
                row: node.cell.row,
                reason,
            };
            let mut rows: Vec<u64> = node.children.iter().map(|&c| self.nodes[c].cell.row).collect();
            rows.sort_unstable();
            let want: Vec<u64> = (0..spec.ell as u64).map(|r| node.cell.row * spec.ell as u64 + r).collect();
            if rows != want {
                return Err(bad("a row lacks exactly one choice"));
            }
            if node.children.iter().any(|&c| self.nodes[c].cell.parent() != Some(node.cell)) {
                return Err(bad("a choice is not a child of its parent"));
            }
        }
        Ok(())
    }
}

/// Pullback of Lebesgue measure to the selected cells: each selected cell
/// of generation `j` carries its height `l^-j`.
pub fn vertical_lambda(spec: &CarpetSpec, sel: &VerticalCantorSelection) -> Result<MassTree<CellIndex>, MeasureError> {
    sel.validate(spec)?;
    let mut tree = MassTree::new(sel.nodes[0].cell, BigRational::one());
    let mut stack = vec![(0usize, 0usize)];
    while let Some((sid, tid)) = stack.pop() {
        let kids = &sel.nodes[sid].children;
        if kids.is_empty() {
            continue;
        }
        let share = tree.nodes[tid].mass.clone() / BigInt::from(kids.len());
        for &k in kids {
            let t = tree.push(tid, sel.nodes[k].cell, share.clone());
            stack.push((k, t));
        }
    }
    Ok(tree)
}

type Q = Ratio<i128>;

fn q_of(r: Ratio<u64>) -> Q {
    Q::new(*r.numer() as i128, *r.denom() as i128)
}

/// Lower bound for `lambda_E(B(x, r))`: total height of selected finest cells
/// lying inside the closed disk, decided exactly.
pub fn lambda_in_ball(sel: &VerticalCantorSelection, x: (Q, Q), r: Q) -> Q {
    let finest = sel.cells_at(sel.depth);
    let r2 = r * r;
    let mut total = Q::zero();
    for c in finest {
        let (x0, y0) = (q_of(c.x0()), q_of(c.y0()));
        let (x1, y1) = (x0 + q_of(c.width()), y0 + q_of(c.height()));
        let far_x = core::cmp::max((x0 - x.0).abs(), (x1 - x.0).abs());
        let far_y = core::cmp::max((y0 - x.1).abs(), (y1 - x.1).abs());
        if far_x * far_x + far_y * far_y <= r2 {
            total += q_of(c.height());
        }
    }
    total
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LambdaBallReport {
    pub tested: usize,
    pub failures: usize,
    /// Smallest observed `lambda / (r / l^2)`.
    pub worst_ratio: f64,
}

/// Tests `lambda_E(B(x,r) ∩ E) >= r / l^2` at every selected finest-cell
/// center `x`, for `r = l^-n` and `r = (9/8) l^-(n+1)`, `n <= depth - 2`.
pub fn check_lambda_lower_bound(spec: &CarpetSpec, sel: &VerticalCantorSelection) -> LambdaBallReport {
    let ell = spec.ell as i128;
    let mut report = LambdaBallReport { worst_ratio: f64::INFINITY, ..Default::default() };
    let centers: Vec<(Q, Q)> = sel
        .cells_at(sel.depth)
        .iter()
        .map(|c| {
            let half = Q::new(1, 2);
            (q_of(c.x0()) + q_of(c.width()) * half, q_of(c.y0()) + q_of(c.height()) * half)
        })
        .collect();
    for n in 0..sel.depth.saturating_sub(1) {
        let top = Q::new(1, ell.pow(n));
        for r in [top, top / ell * Q::new(9, 8)] {
            let bound = r / (ell * ell);
            for &x in &centers {
                let got = lambda_in_ball(sel, x, r);
                report.tested += 1;
                if got < bound {
                    report.failures += 1;
                }
                let q = got / bound;
                report.worst_ratio = report.worst_ratio.min(*q.numer() as f64 / *q.denom() as f64);
            }
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq)]
pub struct HNode {
    pub diam: f64,
    pub depth: u32,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Range into the space's sample points covered by this node.
    pub points: Range<usize>,
}

/// Recursive description used to build a [`HierarchicalSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct TreeSpec {
    pub diam: f64,
    /// Sample points of a leaf; ignored for internal nodes.
    pub points: Vec<[f64; 2]>,
    pub children: Vec<TreeSpec>,
}

impl TreeSpec {
    pub fn leaf(diam: f64, points: Vec<[f64; 2]>) -> Self {
        TreeSpec { diam, points, children: Vec::new() }
    }

    pub fn node(diam: f64, children: Vec<TreeSpec>) -> Self {
        TreeSpec { diam, points: Vec::new(), children }
    }
}

/// Nested subsets with diameters and point samples, stored in preorder so
/// that every node's samples are contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalSpace {
    nodes: Vec<HNode>,
    points: Vec<[f64; 2]>,
}

impl HierarchicalSpace {
    pub fn from_spec(root: &TreeSpec) -> Self {
        let mut space = HierarchicalSpace { nodes: Vec::new(), points: Vec::new() };
        space.add(root, None, 0);
        space
    }

    fn add(&mut self, t: &TreeSpec, parent: Option<usize>, depth: u32) -> usize {
        let id = self.nodes.len();
        let start = self.points.len();
        self.nodes.push(HNode { diam: t.diam, depth, parent, children: Vec::new(), points: start..start });
        if t.children.is_empty() {
            self.points.extend_from_slice(&t.points);
        }
        for c in &t.children {
            let cid = self.add(c, Some(id), depth + 1);
            self.nodes[id].children.push(cid);
        }
        self.nodes[id].points = start..self.points.len();
        id
    }

    /// The selected cells as a tree, sampled at finest-cell centers.
    pub fn from_selection(sel: &VerticalCantorSelection) -> Self {
        fn walk(sel: &VerticalCantorSelection, i: usize) -> TreeSpec {
            let n = &sel.nodes()[i];
            if n.children.is_empty() {
                TreeSpec::leaf(n.cell.diameter(), vec![n.cell.center()])
            } else {
                TreeSpec::node(n.cell.diameter(), n.children.iter().map(|&c| walk(sel, c)).collect())
            }
        }
        Self::from_spec(&walk(sel, 0))
    }

    pub fn nodes(&self) -> &[HNode] {
        &self.nodes
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn siblings(&self, i: usize) -> Vec<usize> {
        match self.nodes[i].parent {
            Some(p) => self.nodes[p].children.iter().copied().filter(|&c| c != i).collect(),
            None => Vec::new(),
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].children.is_empty()).collect()
    }
}

/// Mass split among children in proportion to `diam^alpha`; all-zero
/// sibling diameters split equally.
pub fn alpha_measure(space: &HierarchicalSpace, alpha: f64) -> MassTree<usize, f64> {
    let mut tree = MassTree::new(0usize, 1.0);
    let mut stack = vec![(0usize, 0usize)];
    while let Some((sid, tid)) = stack.pop() {
        let kids = &space.nodes[sid].children;
        if kids.is_empty() {
            continue;
        }
        let weights: Vec<f64> = kids.iter().map(|&c| weight(space.nodes[c].diam, alpha)).collect();
        let total: f64 = weights.iter().sum();
        let parent = tree.nodes[tid].mass;
        for (&c, w) in kids.iter().zip(weights) {
            let mass = if total > 0.0 { parent * w / total } else { parent / kids.len() as f64 };
            let t = tree.push(tid, c, mass);
            stack.push((c, t));
        }
    }
    tree
}

fn weight(diam: f64, alpha: f64) -> f64 {
    if diam <= 0.0 {
        0.0
    } else {
        diam.powf(alpha)
    }
}

/// Largest `mass / diam^alpha` over nodes of positive diameter.
pub fn max_mass_ratio(space: &HierarchicalSpace, tree: &MassTree<usize, f64>, alpha: f64) -> f64 {
    tree.nodes()
        .iter()
        .filter(|n| space.nodes[n.key].diam > 0.0)
        .map(|n| n.mass / space.nodes[n.key].diam.powf(alpha))
        .fold(0.0, f64::max)
}

/// Largest `eps` with `(1/3)^alpha + (2/3)^alpha (1 - eps)^alpha >= 1`.
pub fn gdc_epsilon(alpha: f64) -> f64 {
    let third = 1.0 / 3.0;
    1.0 - ((1.0 - third.powf(alpha)) / (2.0 * third).powf(alpha)).powf(1.0 / alpha)
}

/// Random binary tree of the given depth with root diameter 1 in which every
/// child has diameter at least a third of its parent's, and the smaller
/// sibling exceeds `(1 - p)(1 - eps)` of the parent, `p` being the larger
/// sibling's ratio.
pub fn random_gdc_tree(eps: f64, depth: u32, seed: u64) -> TreeSpec {
    fn grow(rng: &mut ChaCha8Rng, eps: f64, diam: f64, depth: u32) -> TreeSpec {
        if depth == 0 {
            return TreeSpec::leaf(diam, Vec::new());
        }
        let third = 1.0 / 3.0;
        let (p, lo) = loop {
            let p = rng.gen_range(third..=1.0);
            let lo = ((1.0 - p) * (1.0 - eps)).max(third);
            if lo < p {
                break (p, lo);
            }
        };
        let q = rng.gen_range(lo..=p);
        let (a, b) = if rng.gen_bool(0.5) { (p, q) } else { (q, p) };
        let left = grow(rng, eps, diam * a, depth - 1);
        let right = grow(rng, eps, diam * b, depth - 1);
        TreeSpec::node(diam, vec![left, right])
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grow(&mut rng, eps, 1.0, depth)
}

/// Number of nodes inside `B(x, r)` whose parent is not, with `x` the first
/// sample of `leaf`; the root counts when it is inside.
pub fn flatness_constant(space: &HierarchicalSpace, leaf: usize, r: f64) -> Result<usize, MeasureError> {
    if !space.nodes[leaf].children.is_empty() {
        return Err(MeasureError::NotLeaf(leaf));
    }
    let x = space.points[space.nodes[leaf].points.start];
    let inside = |i: usize| {
        space.points[space.nodes[i].points.clone()]
            .iter()
            .all(|p| Float::hypot(p[0] - x[0], p[1] - x[1]) < r)
    };
    let mut count = 0;
    for i in 0..space.nodes.len() {
        if inside(i) && space.nodes[i].parent.is_none_or(|p| !inside(p)) {
            count += 1;
        }
    }
    Ok(count)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoublingReport {
    /// Largest `mu(B(x,r)) / mu(B(x,r/2))` over the sampled balls.
    pub max_ratio: f64,
    /// Generations whose occupied approximate squares all carry equal mass.
    pub constant_mass: bool,
    /// Largest `mu(Q~) / mu(Q)` over occupied approximate squares.
    pub worst_neighbor_ratio: f64,
}

impl DoublingReport {
    pub fn neighbor_bound_holds(&self) -> bool {
        self.constant_mass && self.worst_neighbor_ratio <= 9.0
    }
}

/// Seeded balls centered at generation-`n` cell centers, radii `2^-j` for
/// `j` uniform in `j_range`.
pub fn sample_balls(spec: &CarpetSpec, n: u32, count: usize, j_range: Range<u32>, seed: u64) -> Result<Vec<([f64; 2], f64)>, MeasureError> {
    let cells = crate::carpet::build_generation(spec, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let c = cells[rng.gen_range(0..cells.len())];
            let j = rng.gen_range(j_range.clone());
            (c.center(), 1.0 / crate::geometry::pow2(j))
        })
        .collect())
}

/// Doubling ratios from generation-`n` cells (a cell counts toward a ball
/// when its center does) and the neighbor bound on approximate squares of
/// generations `1..=n`.
pub fn check_doubling(spec: &CarpetSpec, n: u32, balls: &[([f64; 2], f64)]) -> Result<DoublingReport, MeasureError> {
    let cells = crate::carpet::build_generation(spec, n)?;
    let centers: Vec<[f64; 2]> = cells.iter().map(|c| c.center()).collect();
    let count_in = |x: [f64; 2], r: f64| centers.iter().filter(|p| Float::hypot(p[0] - x[0], p[1] - x[1]) <= r).count();
    let mut max_ratio = 0.0f64;
    for &(x, r) in balls {
        let half = count_in(x, r / 2.0);
        if half == 0 {
            return Err(MeasureError::EmptyBall(x[0], x[1], r));
        }
        max_ratio = max_ratio.max(count_in(x, r) as f64 / half as f64);
    }
    let mut constant_mass = true;
    let mut worst = 0.0f64;
    for g in 1..=n {
        let fine = crate::carpet::build_generation(spec, g)?;
        let shrink = (spec.m as u64).pow(g - crate::carpet::alpha_floor(spec.m, spec.ell, g));
        let mut mass: BTreeMap<(i64, i64), u64> = BTreeMap::new();
        for c in &fine {
            *mass.entry(((c.col / shrink) as i64, c.row as i64)).or_default() += 1;
        }
        let squares = approximate_squares(spec, g)?;
        debug_assert_eq!(squares.len(), mass.len());
        let c_n = *mass.values().next().unwrap_or(&0);
        for (&(x, y), &mq) in &mass {
            if mq != c_n {
                constant_mass = false;
            }
            let mut around = 0u64;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    around += mass.get(&(x + dx, y + dy)).copied().unwrap_or(0);
                }
            }
            worst = worst.max(around as f64 / mq as f64);
        }
    }
    Ok(DoublingReport { max_ratio, constant_mass, worst_neighbor_ratio: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carpet::{build_generation, AffineGraphSpec, PatternSource};

    #[test]
    fn carpet_measure_masses() {
        let spec = CarpetSpec::alternating(4);
        let mu = carpet_measure(&spec, 1).unwrap();
        assert_eq!(mu.nodes()[0].mass, BigRational::one());
        assert!(mu.at_depth(1).all(|n| n.mass == ratio(1, 4)));
        assert_eq!(mu.at_depth(1).count(), 4);
        let mu4 = carpet_measure(&spec, 4).unwrap();
        assert!(mu4.at_depth(4).all(|n| n.mass == ratio(1, 256)));
        assert!(mu4.conservation_failures().is_empty());
        let mu2 = carpet_measure(&spec, 2).unwrap();
        for row in 0..4 {
            let s: BigRational = mu2.at_depth(2).filter(|n| n.key.row == row).map(|n| n.mass.clone()).sum();
            assert_eq!(s, ratio(1, 4));
        }
    }

    #[test]
    fn slice_measure_masses() {
        let spec = CarpetSpec::alternating(4);
        let third = Ratio::new(1, 3);
        let s2 = slice_measure(&spec, third, 2).unwrap();
        assert_eq!(s2.at_depth(2).count(), 4);
        assert!(s2.at_depth(2).all(|n| n.mass == ratio(1, 4)));
        assert_eq!(slice_measure(&spec, third, 0).unwrap().nodes()[0].mass, BigRational::one());
        assert!(slice_measure(&spec, Ratio::new(3, 4), 2).is_err());
    }

    #[test]
    fn slice_growth_bound() {
        // Any fiber interval I with diam in (4^-n-1, 4^-n] has mu_a(I) < 2 4^d diam^d, d = 1/2.
        let spec = CarpetSpec::alternating(7);
        let s = slice_measure(&spec, Ratio::new(1, 3), 7).unwrap();
        let mut leaves: Vec<f64> = s.at_depth(7).map(|n| n.key.rect()[0]).collect();
        leaves.sort_by(f64::total_cmp);
        let w = 1.0 / 4f64.powi(7);
        let mass = 1.0 / 2f64.powi(7);
        for n in 0..6 {
            let diam = 1.0 / 4f64.powi(n);
            for start in leaves.iter() {
                let inside = leaves.iter().filter(|&&x| x >= *start && x + w <= start + diam + 1e-15).count();
                let m = inside as f64 * mass;
                assert!(m < 2.0 * 2.0 * diam.sqrt(), "n={n} m={m}");
            }
        }
    }

    #[test]
    fn disintegration_on_three_carpets() {
        let fig = CarpetSpec::alternating(5);
        let rep = check_disintegration(&fig, 2).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.cells_checked, 1 + 4 + 16);
        let graph = AffineGraphSpec::tent().carpet(4).unwrap();
        assert!(check_disintegration(&graph, 4).unwrap().passed());
        let random = CarpetSpec::new(6, 3, 2, PatternSource::RandomFibers { seed: 3 }, 3).unwrap();
        assert!(check_disintegration(&random, 3).unwrap().passed());
    }

    #[test]
    fn disintegration_detects_a_corrupted_integrand() {
        // Oracle: sibling additivity of the exact identity.
        let spec = CarpetSpec::alternating(2);
        let mu = carpet_measure(&spec, 2).unwrap();
        let kids: Vec<_> = mu.at_depth(2).take(2).map(|n| n.mass.clone()).collect();
        assert_eq!(kids[0].clone() + kids[1].clone(), ratio(1, 16) + ratio(1, 16));
    }

    #[test]
    fn vertical_lambda_masses() {
        let spec = CarpetSpec::alternating(5);
        let sel = VerticalCantorSelection::random(&spec, 5, 4).unwrap();
        let lam = vertical_lambda(&spec, &sel).unwrap();
        assert_eq!(lam.at_depth(1).count(), 2);
        assert!(lam.at_depth(1).all(|n| n.mass == ratio(1, 2)));
        assert!(lam.at_depth(5).all(|n| n.mass == ratio(1, 32)));
        assert!(lam.conservation_failures().is_empty());
        let total: BigRational = lam.at_depth(5).map(|n| n.mass.clone()).sum();
        assert_eq!(total, BigRational::one());
    }

    #[test]
    fn invalid_selection_is_rejected() {
        let spec = CarpetSpec::alternating(2);
        let sel = VerticalCantorSelection::leftmost(&spec, 2).unwrap();
        let mut nodes = sel.nodes().to_vec();
        nodes[0].children.pop();
        let broken = VerticalCantorSelection::from_nodes(nodes, 2);
        assert!(matches!(vertical_lambda(&spec, &broken), Err(MeasureError::InvalidSelection { .. })));
    }

    #[test]
    fn lambda_ball_bound_holds_exactly() {
        for seed in 0..3 {
            let spec = CarpetSpec::alternating(6);
            let sel = VerticalCantorSelection::random(&spec, 6, seed).unwrap();
            let rep = check_lambda_lower_bound(&spec, &sel);
            assert!(rep.tested > 0);
            assert_eq!(rep.failures, 0);
            assert!(rep.worst_ratio >= 1.0);
        }
    }

    fn binary_tree(depth: u32, diam: f64, shrink: f64) -> TreeSpec {
        if depth == 0 {
            TreeSpec::leaf(diam, vec![[0.0, 0.0]])
        } else {
            let c = binary_tree(depth - 1, diam * shrink, shrink);
            TreeSpec::node(diam, vec![c.clone(), c])
        }
    }

    #[test]
    fn alpha_measure_examples() {
        let equal = HierarchicalSpace::from_spec(&TreeSpec::node(1.0, vec![TreeSpec::leaf(0.5, vec![]), TreeSpec::leaf(0.5, vec![])]));
        let m = alpha_measure(&equal, 0.7);
        assert_eq!(m.at_depth(1).map(|n| n.mass).collect::<Vec<_>>(), vec![0.5, 0.5]);
        let lopsided = HierarchicalSpace::from_spec(&TreeSpec::node(1.0, vec![TreeSpec::leaf(1.0, vec![]), TreeSpec::leaf(0.0, vec![])]));
        let m = alpha_measure(&lopsided, 0.7);
        assert_eq!(m.at_depth(1).map(|n| n.mass).collect::<Vec<_>>(), vec![1.0, 0.0]);
        let zeros = HierarchicalSpace::from_spec(&TreeSpec::node(1.0, vec![TreeSpec::leaf(0.0, vec![]); 3]));
        assert!(alpha_measure(&zeros, 0.5).at_depth(1).all(|n| (n.mass - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn alpha_measure_matches_product_formula() {
        // Diameters 1, (0.5, 0.25), ... ; product of diam^a / (diam^a + sibling^a).
        let alpha = 0.9;
        let l = |d: f64, kids: Vec<TreeSpec>| if kids.is_empty() { TreeSpec::leaf(d, vec![]) } else { TreeSpec::node(d, kids) };
        let t = l(1.0, vec![
            l(0.5, vec![l(0.25, vec![]), l(0.125, vec![])]),
            l(0.25, vec![l(0.125, vec![]), l(0.0625, vec![])]),
        ]);
        let space = HierarchicalSpace::from_spec(&t);
        let m = alpha_measure(&space, alpha);
        let w = |a: f64, b: f64| a.powf(alpha) / (a.powf(alpha) + b.powf(alpha));
        let expect = [
            (2usize, w(0.5, 0.25) * w(0.25, 0.125)),
            (3, w(0.5, 0.25) * w(0.125, 0.25)),
            (5, w(0.25, 0.5) * w(0.125, 0.0625)),
            (6, w(0.25, 0.5) * w(0.0625, 0.125)),
        ];
        let by_key = m.mass_map();
        for (node, e) in expect {
            assert!((by_key[&node] - e).abs() < 1e-15, "{node}");
        }
        assert!(m.conservation_failures(1e-15).is_empty());
    }

    #[test]
    fn uniform_diameters_give_uniform_masses() {
        let space = HierarchicalSpace::from_spec(&binary_tree(5, 1.0, 0.5));
        let m = alpha_measure(&space, 0.6);
        for d in 0..=5 {
            assert!(m.at_depth(d).all(|n| (n.mass - 0.5f64.powi(d as i32)).abs() < 1e-15));
        }
    }

    #[test]
    fn flatness_conventions() {
        let spec = CarpetSpec::alternating(6);
        let sel = VerticalCantorSelection::leftmost(&spec, 6).unwrap();
        let space = HierarchicalSpace::from_selection(&sel);
        let leaf = space.leaves()[0];
        assert_eq!(flatness_constant(&space, leaf, 10.0).unwrap(), 1);
        assert_eq!(flatness_constant(&space, leaf, 1e-9).unwrap(), 1);
        assert!(flatness_constant(&space, 0, 1.0).is_err());
    }

    #[test]
    fn gdc_epsilon_is_sharp() {
        for alpha in [0.3, 0.5, 0.9] {
            let eps = gdc_epsilon(alpha);
            let third: f64 = 1.0 / 3.0;
            let lhs = third.powf(alpha) + (2.0 * third).powf(alpha) * (1.0 - eps).powf(alpha);
            assert!(eps > 0.0 && (lhs - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gdc_trees_have_bounded_ratio() {
        for seed in 0..50 {
            let alpha = 0.1 + 0.85 * (seed as f64 / 50.0);
            let t = random_gdc_tree(0.9 * gdc_epsilon(alpha), 8, seed);
            let space = HierarchicalSpace::from_spec(&t);
            let m = alpha_measure(&space, alpha);
            assert!(max_mass_ratio(&space, &m, alpha) <= 1.0);
        }
    }

    fn worst_flatness(depth: u32) -> usize {
        let spec = CarpetSpec::alternating(depth);
        let mut worst = 0;
        for seed in 0..4 {
            let sel = VerticalCantorSelection::random(&spec, depth, seed).unwrap();
            let space = HierarchicalSpace::from_selection(&sel);
            for &leaf in space.leaves().iter().step_by(3) {
                for j in 1..depth as i32 {
                    for r in [0.5f64.powi(j), 0.75 * 0.5f64.powi(j)] {
                        worst = worst.max(flatness_constant(&space, leaf, r).unwrap());
                    }
                }
            }
        }
        worst
    }

    #[test]
    fn carpet_vertical_cantor_flatness_grows_slowly() {
        // Maximal pieces inside a ball accumulate about two per level near
        // the ball's edge, so the count grows with depth rather than staying
        // below a fixed constant.
        let counts: Vec<usize> = [4, 6, 8].into_iter().map(worst_flatness).collect();
        std::println!("worst flatness by depth 4, 6, 8: {counts:?}");
        assert!(counts.windows(2).all(|w| w[0] <= w[1]));
        assert!(counts.iter().zip([4, 6, 8]).all(|(&c, d)| c <= 2 * d));
    }

    #[test]
    fn comb_tree_is_not_flat() {
        // Every spine node has a leaf inside the ball and a leaf far outside it.
        fn comb(depth: u32) -> TreeSpec {
            if depth == 0 {
                return TreeSpec::leaf(0.0, vec![[0.0, 0.0]]);
            }
            let near = TreeSpec::leaf(0.0, vec![[0.5, depth as f64 * 1e-3]]);
            let far = TreeSpec::leaf(0.0, vec![[10.0 + depth as f64, 0.0]]);
            TreeSpec::node(10.0 + depth as f64, vec![comb(depth - 1), near, far])
        }
        let space = HierarchicalSpace::from_spec(&comb(12));
        let origin = space.leaves().into_iter().find(|&l| space.points()[space.nodes()[l].points.start] == [0.0, 0.0]).unwrap();
        let c = flatness_constant(&space, origin, 0.6).unwrap();
        assert_eq!(c, 13);
    }

    #[test]
    fn doubling_and_neighbor_bound() {
        let spec = CarpetSpec::alternating(7);
        let balls = sample_balls(&spec, 7, 100, 1..5, 11).unwrap();
        let rep = check_doubling(&spec, 7, &balls).unwrap();
        assert!(rep.max_ratio <= 81.0, "{}", rep.max_ratio);
        assert!(rep.neighbor_bound_holds(), "{rep:?}");
        let whole = check_doubling(&spec, 7, &[([0.5, 0.5], 4.0)]).unwrap();
        assert_eq!(whole.max_ratio, 1.0);
    }

    #[test]
    fn tree_property_of_generations() {
        let spec = CarpetSpec::alternating(3);
        let mu = carpet_measure(&spec, 3).unwrap();
        let g3 = build_generation(&spec, 3).unwrap();
        assert_eq!(mu.at_depth(3).map(|n| n.key).collect::<Vec<_>>(), g3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn measures_conserve_mass(seed in any::<u64>(), n in 0u32..4) {
                let spec = CarpetSpec::new(5, 2, 2, PatternSource::RandomFibers { seed }, 4).unwrap();
                prop_assert!(carpet_measure(&spec, n).unwrap().conservation_failures().is_empty());
                let sel = VerticalCantorSelection::random(&spec, n, seed).unwrap();
                prop_assert!(vertical_lambda(&spec, &sel).unwrap().conservation_failures().is_empty());
            }

            #[test]
            fn alpha_measure_conserves(alpha in 0.05..0.95f64, diams in proptest::collection::vec(0.0..1.0f64, 6)) {
                let l = |d: f64| TreeSpec::leaf(d, vec![]);
                let t = TreeSpec::node(1.0, vec![
                    TreeSpec::node(diams[0], vec![l(diams[1]), l(diams[2])]),
                    TreeSpec::node(diams[3], vec![l(diams[4]), l(diams[5])]),
                ]);
                let m = alpha_measure(&HierarchicalSpace::from_spec(&t), alpha);
                prop_assert!(m.conservation_failures(1e-12).is_empty());
                prop_assert!(m.nodes().iter().all(|n| n.mass >= 0.0));
            }
        }
    }
}
