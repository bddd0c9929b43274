//! Seeded Brownian paths and the objects built on their graphs: hitting
//! times, downcrossings and local time, the graph measure, the generation
//! decomposition into band elements, vertical Cantor selections and slow
//! points.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, One};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::BrownianError;
use crate::geometry::{fit_line, pow2, DyadicInterval};
use crate::hmeasure::MassTree;

/// A sampled path. Sample times are multiples of `dt`; away from the focus
/// window consecutive samples may be several grid steps apart.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    pub seed: u64,
    pub dt: f64,
    t: Vec<f64>,
    w: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stop {
    /// Simulate on `[0, t_end]`.
    Time(f64),
    /// Stop at the first sample at or above `b > 0`.
    Level(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub dt: f64,
    pub stop: Stop,
    pub max_steps: usize,
    /// Heights kept at full resolution; outside, steps grow with the
    /// distance to the window.
    pub focus: Option<(f64, f64)>,
}

impl SimConfig {
    /// `dt = 2^-2g`, so that `sqrt(dt) = 2^-g`.
    pub fn new(seed: u64, g: u32, stop: Stop) -> Self {
        SimConfig { seed, dt: 1.0 / pow2(2 * g), stop, max_steps: 200_000_000, focus: None }
    }

    pub fn focus(mut self, lo: f64, hi: f64) -> Self {
        self.focus = Some((lo, hi));
        self
    }
}

fn check_dt(dt: f64) -> Result<(), BrownianError> {
    if dt > 0.0 && dt <= 1.0 && Float::log2(dt).fract() == 0.0 {
        Ok(())
    } else {
        Err(BrownianError::BadStep(dt))
    }
}

/// Largest `k` (a power of two, at most `cap`) with `k dt <= (dist / 8)^2`.
fn coarse_steps(dist: f64, dt: f64, cap: u64) -> u64 {
    let allowed = (dist / 8.0) * (dist / 8.0) / dt;
    let mut k = 1u64;
    while (2 * k) as f64 <= allowed && 2 * k <= cap {
        k *= 2;
    }
    k.min(cap.max(1))
}

/// Simulates a path with `W(0) = 0` and independent `N(0, k dt)` increments.
pub fn simulate(cfg: &SimConfig) -> Result<BrownianPath, BrownianError> {
    check_dt(cfg.dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = vec![0.0];
    let mut w = vec![0.0];
    let mut grid = 0u64;
    let end_grid = match cfg.stop {
        Stop::Time(te) => (te / cfg.dt).round() as u64,
        Stop::Level(b) if b > 0.0 => u64::MAX,
        Stop::Level(_) => return Err(BrownianError::BadInput("stopping level must be positive")),
    };
    let mut x = 0.0;
    while grid < end_grid {
        if t.len() > cfg.max_steps {
            return Err(BrownianError::Budget { seed: cfg.seed, steps: cfg.max_steps });
        }
        let dist = match cfg.focus {
            Some((lo, _)) if x < lo => lo - x,
            Some((_, hi)) if x > hi => x - hi,
            _ => 0.0,
        };
        let k = if dist > 0.0 { coarse_steps(dist, cfg.dt, end_grid - grid) } else { 1 };
        let z: f64 = rng.sample(StandardNormal);
        x += z * Float::sqrt(k as f64 * cfg.dt);
        grid += k;
        t.push(grid as f64 * cfg.dt);
        w.push(x);
        if let Stop::Level(b) = cfg.stop {
            if x >= b {
                break;
            }
        }
    }
    Ok(BrownianPath { seed: cfg.seed, dt: cfg.dt, t, w })
}

impl BrownianPath {
    /// A synthetic path through the given values at spacing `dt`.
    pub fn from_values(dt: f64, values: Vec<f64>) -> Result<Self, BrownianError> {
        check_dt(dt)?;
        if values.len() < 2 {
            return Err(BrownianError::BadInput("a path needs two samples"));
        }
        let t = (0..values.len()).map(|i| i as f64 * dt).collect();
        Ok(BrownianPath { seed: 0, dt, t, w: values })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().expect("nonempty")
    }

    /// `sqrt(dt)`, the typical one-step displacement.
    pub fn spatial_resolution(&self) -> f64 {
        Float::sqrt(self.dt)
    }

    /// `g` with `dt = 2^-2g`, rounded down.
    pub fn generation(&self) -> u32 {
        (-Float::log2(self.dt) / 2.0).floor() as u32
    }

    /// Linear interpolation at time `s`, clamped to the path.
    pub fn value_at(&self, s: f64) -> f64 {
        let i = self.t.partition_point(|&x| x <= s);
        if i == 0 {
            return self.w[0];
        }
        if i >= self.t.len() {
            return self.w[self.w.len() - 1];
        }
        let (t0, t1, w0, w1) = (self.t[i - 1], self.t[i], self.w[i - 1], self.w[i]);
        w0 + (w1 - w0) * (s - t0) / (t1 - t0)
    }

    /// Index of the first sample with time above `s`.
    pub fn index_after(&self, s: f64) -> usize {
        self.t.partition_point(|&x| x <= s)
    }

    /// The path up to and including sample `end - 1`.
    pub fn truncated(&self, end: usize) -> Self {
        BrownianPath { seed: self.seed, dt: self.dt, t: self.t[..end].to_vec(), w: self.w[..end].to_vec() }
    }

    /// Whether every consecutive pair of samples is one grid step apart.
    pub fn is_uniform(&self) -> bool {
        self.t.windows(2).all(|p| ((p[1] - p[0]) / self.dt - 1.0).abs() < 1e-9)
    }
}

/// Crossings of the levels `k / scale` by the segment from `w0` to `w1`:
/// upward when `w0 < v <= w1`, downward when `w1 <= v < w0`.
fn crossings(w0: f64, w1: f64, scale: f64) -> (Range<i64>, bool) {
    if w1 > w0 {
        ((w0 * scale).floor() as i64 + 1..(w1 * scale).floor() as i64 + 1, true)
    } else {
        ((w1 * scale).ceil() as i64..(w0 * scale).ceil() as i64, false)
    }
}

fn crossing_time(t0: f64, t1: f64, w0: f64, w1: f64, v: f64) -> f64 {
    if w1 == v {
        t1
    } else {
        t0 + (v - w0) / (w1 - w0) * (t1 - t0)
    }
}

/// `2 Phi(b / sqrt(t)) - 1`, the probability that the first hitting time of
/// `b > 0` exceeds `t`.
pub fn hitting_survival(b: f64, t: f64) -> f64 {
    erf(b / Float::sqrt(2.0 * t))
}

/// Error function from its Maclaurin series, with the continued fraction
/// for the complement beyond `|x| > 3`.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x > 3.0 {
        // erfc(x) = exp(-x^2) / sqrt(pi) * 1 / (x + 1/2 / (x + 1 / (x + 3/2 / (x + ...))))
        let mut f = x;
        for k in (1..60).rev() {
            f = x + (k as f64 / 2.0) / f;
        }
        return 1.0 - Float::exp(-x * x) / (Float::sqrt(core::f64::consts::PI) * f);
    }
    let mut term = x;
    let mut sum = x;
    let x2 = x * x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= -x2 / n;
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    2.0 / Float::sqrt(core::f64::consts::PI) * sum
}

/// Whether the path reaches `b` before `t_end`, simulated on a grid of step
/// `dt` with a Brownian-bridge crossing test between grid points.
pub fn hits_before(seed: u64, b: f64, t_end: f64, dt: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = (t_end / dt).round() as u64;
    let sd = Float::sqrt(dt);
    let mut x = 0.0f64;
    for _ in 0..steps {
        let z: f64 = rng.sample(StandardNormal);
        let y = x + sd * z;
        if y >= b {
            return true;
        }
        let p = Float::exp(-2.0 * (b - x) * (b - y) / dt);
        if rng.gen::<f64>() < p {
            return true;
        }
        x = y;
    }
    false
}

/// Completion times of downcrossings of every generation-`n` interval
/// `(k 2^-n, (k+1) 2^-n]` met by the path.
#[derive(Clone, Debug, PartialEq)]
pub struct DowncrossingIndex {
    pub n: u32,
    base: i64,
    completions: Vec<Vec<f64>>,
}

impl DowncrossingIndex {
    pub fn build(path: &BrownianPath, n: u32) -> Self {
        let scale = pow2(n);
        let lo = path.w.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = path.w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let base = (lo * scale).floor() as i64 - 1;
        let count = ((hi * scale).ceil() as i64 - base + 2) as usize;
        let mut armed = vec![false; count];
        let mut completions = vec![Vec::new(); count];
        for (k, a) in armed.iter_mut().enumerate() {
            *a = ((base + k as i64 + 1) as f64) / scale <= path.w[0];
        }
        for i in 0..path.len() - 1 {
            let (w0, w1) = (path.w[i], path.w[i + 1]);
            if w0 == w1 {
                continue;
            }
            let (levels, up) = crossings(w0, w1, scale);
            for level in levels {
                if up {
                    // Reaching level k arms the interval whose top it is.
                    armed[(level - 1 - base) as usize] = true;
                } else {
                    let slot = (level - base) as usize;
                    if armed[slot] {
                        armed[slot] = false;
                        completions[slot].push(crossing_time(path.t[i], path.t[i + 1], w0, w1, level as f64 / scale));
                    }
                }
            }
        }
        DowncrossingIndex { n, base, completions }
    }

    /// `D_n(a, t)`: completed downcrossings by time `t` of the interval containing `a`.
    pub fn count(&self, a: f64, t: f64) -> u64 {
        let k = DyadicInterval::band_containing(self.n, a).index;
        self.count_interval(k, t)
    }

    pub fn count_interval(&self, k: i64, t: f64) -> u64 {
        let slot = k - self.base;
        if slot < 0 || slot as usize >= self.completions.len() {
            return 0;
        }
        self.completions[slot as usize].partition_point(|&s| s <= t) as u64
    }

    /// `2^(-n+1) D_n(a, t)`.
    pub fn local_time(&self, a: f64, t: f64) -> f64 {
        2.0 / pow2(self.n) * self.count(a, t) as f64
    }

    /// Interval indices with at least one completion.
    pub fn intervals(&self) -> impl Iterator<Item = i64> + '_ {
        self.completions.iter().enumerate().filter(|(_, c)| !c.is_empty()).map(move |(k, _)| k as i64 + self.base)
    }
}

/// `D_n(a, t)` for a single query.
pub fn downcrossings(path: &BrownianPath, a: f64, n: u32, t: f64) -> u64 {
    DowncrossingIndex::build(path, n).count(a, t)
}

fn check_resolution(path: &BrownianPath, n: u32) -> Result<(), BrownianError> {
    let scale = 1.0 / pow2(n);
    if scale < path.spatial_resolution() {
        Err(BrownianError::Resolution { scale, resolution: path.spatial_resolution() })
    } else {
        Ok(())
    }
}

/// Local time estimates on a grid of levels, generations and times.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTimeField {
    pub levels: Vec<f64>,
    pub generations: Vec<u32>,
    pub times: Vec<f64>,
    /// `counts[g][level][time]` is `D_n` for `n = generations[g]`.
    pub counts: Vec<Vec<Vec<u64>>>,
}

impl LocalTimeField {
    pub fn estimate(&self, g: usize, level: usize, time: usize) -> f64 {
        2.0 / pow2(self.generations[g]) * self.counts[g][level][time] as f64
    }
}

pub fn local_time_field(path: &BrownianPath, levels: &[f64], ns: Range<u32>, times: &[f64]) -> Result<LocalTimeField, BrownianError> {
    for n in ns.clone() {
        check_resolution(path, n)?;
    }
    let counts = ns
        .clone()
        .map(|n| {
            let idx = DowncrossingIndex::build(path, n);
            levels.iter().map(|&a| times.iter().map(|&t| idx.count(a, t)).collect()).collect()
        })
        .collect();
    Ok(LocalTimeField { levels: levels.to_vec(), generations: ns.collect(), times: times.to_vec(), counts })
}

/// Empirical Hölder exponent of `a -> L^a(t)`: slope of the log RMS
/// increment against the log lag, for lags `2^-m`, `m` in `lags`, on a
/// level grid of spacing `2^-grid` over `[0, 1)`.
pub fn holder_exponent(path: &BrownianPath, n: u32, t: f64, grid: u32, lags: Range<u32>) -> Result<f64, BrownianError> {
    check_resolution(path, n)?;
    let idx = DowncrossingIndex::build(path, n);
    let step = 1.0 / pow2(grid);
    let levels: Vec<f64> = (0..1u64 << grid).map(|j| (j as f64 + 0.5) * step).collect();
    let l: Vec<f64> = levels.iter().map(|&a| idx.local_time(a, t)).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for m in lags {
        let shift = 1usize << (grid - m);
        let diffs: Vec<f64> = (0..l.len().saturating_sub(shift)).map(|j| l[j + shift] - l[j]).collect();
        if diffs.is_empty() {
            continue;
        }
        let rms = Float::sqrt(diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64);
        if rms > 0.0 {
            xs.push(-(m as f64));
            ys.push(Float::log2(rms));
        }
    }
    if xs.len() < 2 {
        return Err(BrownianError::BadInput("local time vanishes on the level grid"));
    }
    Ok(fit_line(&xs, &ys).0)
}

/// The graph measure discretized at level generation `n`: each interval
/// `(k h, (k+1) h]` contributes `h` times its local time increment over the
/// time set in question.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphMeasure {
    index: DowncrossingIndex,
}

impl GraphMeasure {
    pub fn new(path: &BrownianPath, n: u32) -> Result<Self, BrownianError> {
        check_resolution(path, n)?;
        Ok(GraphMeasure { index: DowncrossingIndex::build(path, n) })
    }

    fn h(&self) -> f64 {
        1.0 / pow2(self.index.n)
    }

    fn band_mass(&self, k: i64, t0: f64, t1: f64) -> f64 {
        let d = self.index.count_interval(k, t1) - self.index.count_interval(k, t0);
        2.0 * self.h() * self.h() * d as f64
    }

    /// `mu([t0, t1] x [y0, y1])`, bands counted by their centers.
    pub fn rect(&self, t0: f64, t1: f64, y0: f64, y1: f64) -> f64 {
        if t1 <= t0 || y1 < y0 {
            return 0.0;
        }
        let h = self.h();
        let k0 = ((y0 / h) - 0.5).ceil() as i64;
        let k1 = ((y1 / h) - 0.5).floor() as i64;
        (k0..=k1).map(|k| self.band_mass(k, t0, t1)).sum()
    }

    /// `mu(B((t, y), r))`, each band using the chord of the disk at its center.
    pub fn ball(&self, t: f64, y: f64, r: f64) -> f64 {
        let h = self.h();
        let k0 = (((y - r) / h) - 0.5).ceil() as i64;
        let k1 = (((y + r) / h) - 0.5).floor() as i64;
        (k0..=k1)
            .map(|k| {
                let c = (k as f64 + 0.5) * h;
                let half = Float::sqrt((r * r - (c - y) * (c - y)).max(0.0));
                self.band_mass(k, t - half, t + half)
            })
            .sum()
    }

    /// `sum_k h L_k(t)` over all intervals.
    pub fn total(&self, t: f64) -> f64 {
        self.index.intervals().map(|k| self.band_mass(k, f64::NEG_INFINITY, t)).sum()
    }
}

/// Slope of `log mu(B(x, r))` against `log r` over `r = 2^-j`, `j` in `js`.
pub fn mass_exponent(m: &GraphMeasure, t: f64, y: f64, js: Range<u32>) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = js
        .filter_map(|j| {
            let r = 1.0 / pow2(j);
            let mass = m.ball(t, y, r);
            (mass > 0.0).then(|| (Float::log2(r), Float::log2(mass)))
        })
        .unzip();
    (xs.len() >= 2).then(|| fit_line(&xs, &ys).0)
}

/// Box counts of the graph over `[t0, t1]`: per time column of width `2^-n`,
/// the number of `2^-n` boxes met by the interpolated path.
pub fn graph_box_counts(path: &BrownianPath, t0: f64, t1: f64, ns: Range<u32>) -> Vec<(u32, usize)> {
    ns.map(|n| {
        let s = pow2(n);
        let mut cols: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
        let mut add = |col: i64, v: f64| {
            let e = cols.entry(col).or_insert((v, v));
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        };
        for i in 0..path.len() {
            let t = path.t[i];
            if t < t0 || t > t1 {
                continue;
            }
            let col = ((t - t0) * s).floor() as i64;
            add(col, path.w[i]);
            // A sample on a column boundary also closes the previous column.
            if col > 0 && ((t - t0) * s).fract() == 0.0 {
                add(col - 1, path.w[i]);
            }
        }
        let last = ((t1 - t0) * s).ceil() as i64;
        let count = cols
            .iter()
            .filter(|(c, _)| **c < last)
            .map(|(_, (lo, hi))| ((hi * s).floor() - (lo * s).floor()) as usize + 1)
            .sum();
        (n, count)
    })
    .collect()
}

/// Box counts of the level set `{t : W(t) = a}`: distinct time boxes of
/// width `2^-n` holding a crossing of `a`.
pub fn slice_box_counts(path: &BrownianPath, a: f64, ns: Range<u32>) -> Vec<(u32, usize)> {
    let mut times = Vec::new();
    for i in 0..path.len() - 1 {
        let (w0, w1) = (path.w[i], path.w[i + 1]);
        if (w0 < a && a <= w1) || (w1 <= a && a < w0) {
            times.push(crossing_time(path.t[i], path.t[i + 1], w0, w1, a));
        }
    }
    ns.map(|n| {
        let s = pow2(n);
        let boxes: BTreeSet<i64> = times.iter().map(|t| (t * s).floor() as i64).collect();
        (n, boxes.len())
    })
    .collect()
}

/// Slope of `log2 N` against `n`.
pub fn count_slope(counts: &[(u32, usize)]) -> f64 {
    let (xs, ys): (Vec<f64>, Vec<f64>) = counts
        .iter()
        .filter(|(_, c)| *c > 0)
        .map(|(n, c)| (*n as f64, Float::log2(*c as f64)))
        .unzip();
    fit_line(&xs, &ys).0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    /// A traversal from the lower to the upper edge of the band.
    Up,
    /// A traversal from the upper to the lower edge.
    Down,
    /// The last, possibly partial, piece of a cascade joined to its predecessor.
    Merged,
    /// The whole window.
    Root,
}

/// One element: the samples of a time window lying in a left-open band.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphElement {
    pub generation: u32,
    pub band: DyadicInterval,
    /// Sample indices of the time window.
    pub window: Range<usize>,
    /// Times of the stopping events bounding the window.
    pub t_start: f64,
    pub t_end: f64,
    /// First and last in-band sample times and the in-band sample count.
    pub first: f64,
    pub last: f64,
    pub samples: usize,
    pub kind: ElementKind,
    pub entered_from_top: bool,
    pub flat: bool,
    pub parent: Option<usize>,
    /// Children in the lower and the upper half band.
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
}

impl GraphElement {
    pub fn x_diameter(&self) -> f64 {
        self.last - self.first
    }
}

/// Elements per generation; generation 0 holds the root.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub generations: Vec<Vec<GraphElement>>,
    /// Cascade pieces with no sample in their band, dropped.
    pub empty_pieces: usize,
}

/// `2^-n / (n ln 2)`.
pub fn flat_threshold(n: u32) -> f64 {
    1.0 / pow2(n) / (n as f64 * core::f64::consts::LN_2)
}

/// Flat iff the time extent reaches [`flat_threshold`].
pub fn is_flat(x_diameter: f64, n: u32) -> bool {
    n >= 1 && x_diameter >= flat_threshold(n)
}

/// Splits elements into flat and steep.
pub fn classify_flat(elements: &[GraphElement]) -> (Vec<usize>, Vec<usize>) {
    (0..elements.len()).partition(|&i| elements[i].flat)
}

#[derive(Clone, Copy, Debug)]
struct Event {
    t: f64,
    split: usize,
}

/// Crossing events of the generation-`g` levels in `[0, 1]`, per level.
fn level_events(path: &BrownianPath, g: u32, window: Range<usize>) -> Vec<Vec<Event>> {
    let scale = pow2(g);
    let top = 1i64 << g;
    let mut ev = vec![Vec::new(); top as usize + 1];
    for i in window.start..window.end.saturating_sub(1) {
        let (w0, w1) = (path.w[i], path.w[i + 1]);
        if w0 == w1 {
            continue;
        }
        let (levels, _) = crossings(w0, w1, scale);
        let levels = levels.start.max(0)..levels.end.min(top + 1);
        let mut add = |k: i64| {
            let v = k as f64 / scale;
            let split = if w1 == v { i + 2 } else { i + 1 };
            ev[k as usize].push(Event { t: crossing_time(path.t[i], path.t[i + 1], w0, w1, v), split });
        };
        if w1 > w0 {
            levels.for_each(&mut add);
        } else {
            levels.rev().for_each(&mut add);
        }
    }
    ev
}

/// Band index at generation `n` of each sample, `-1` outside `(0, 1]`.
fn fine_bands(path: &BrownianPath, n: u32) -> Vec<i32> {
    let scale = pow2(n);
    let bands = 1i64 << n;
    path.w
        .iter()
        .map(|&w| {
            let k = (w * scale).ceil() as i64 - 1;
            if (0..bands).contains(&k) {
                k as i32
            } else {
                -1
            }
        })
        .collect()
}

/// Sample indices grouped by band, for the generation `shift` levels above
/// `fine`, in one flat array.
struct BandMembers {
    offsets: Vec<usize>,
    samples: Vec<u32>,
}

impl BandMembers {
    fn new(fine: &[i32], shift: u32, bands: usize) -> Self {
        let mut offsets = vec![0usize; bands + 1];
        for &k in fine.iter().filter(|k| **k >= 0) {
            offsets[(k >> shift) as usize + 1] += 1;
        }
        for b in 0..bands {
            offsets[b + 1] += offsets[b];
        }
        let mut cursor = offsets.clone();
        let mut samples = vec![0u32; offsets[bands]];
        for (i, &k) in fine.iter().enumerate() {
            if k >= 0 {
                let c = &mut cursor[(k >> shift) as usize];
                samples[*c] = i as u32;
                *c += 1;
            }
        }
        BandMembers { offsets, samples }
    }

    fn band(&self, b: usize) -> &[u32] {
        &self.samples[self.offsets[b]..self.offsets[b + 1]]
    }

    fn bands(&self) -> impl Iterator<Item = &[u32]> {
        (0..self.offsets.len() - 1).map(|b| self.band(b))
    }
}

fn first_after(events: &[Event], t: f64, before: f64) -> Option<Event> {
    let i = events.partition_point(|e| e.t <= t);
    events.get(i).copied().filter(|e| e.t < before)
}

struct Piece {
    window: Range<usize>,
    t_start: f64,
    t_end: f64,
    from_top: bool,
    kind: ElementKind,
}

/// Decomposes the graph over the whole path (stopped where the caller
/// wants) and heights `(0, 1]` into elements of generations `1..=n_max`.
pub fn decompose(path: &BrownianPath, n_max: u32) -> Result<Decomposition, BrownianError> {
    if n_max == 0 {
        return Err(BrownianError::BadInput("n_max must be positive"));
    }
    check_resolution(path, n_max)?;
    if path.w[0] != 0.0 {
        return Err(BrownianError::BadInput("the path must start at 0"));
    }
    if path.len() > u32::MAX as usize {
        return Err(BrownianError::BadInput("path too long to index with 32 bits"));
    }
    let all = 0..path.len();
    let fine = fine_bands(path, n_max);
    // Levels of coarser generations are a subset of the finest ones.
    let events = level_events(path, n_max, all.clone());
    let root_members = BandMembers::new(&fine, n_max, 1);
    let (first, last, samples) = stats(path, root_members.band(0), &all);
    let root = GraphElement {
        generation: 0,
        band: DyadicInterval::band(0, 0),
        window: all.clone(),
        t_start: 0.0,
        t_end: f64::INFINITY,
        first,
        last,
        samples,
        kind: ElementKind::Root,
        entered_from_top: false,
        flat: false,
        parent: None,
        lower: Vec::new(),
        upper: Vec::new(),
    };
    let mut gens = vec![vec![root]];
    let mut empty_pieces = 0;
    let mut bps: Vec<(Event, bool)> = Vec::new();
    let mut pieces: Vec<Piece> = Vec::new();
    let mut kept: Vec<Piece> = Vec::new();
    for n in 0..n_max {
        let g = n + 1;
        let shift = n_max - g;
        let members = BandMembers::new(&fine, shift, 1 << g);
        let mut next = Vec::new();
        for pi in 0..gens[n as usize].len() {
            let parent = gens[n as usize][pi].clone();
            let lo = 2 * parent.band.index;
            let (k_lo, k_mid, k_hi) = (lo as usize, lo as usize + 1, lo as usize + 2);
            let start = Event { t: parent.t_start, split: parent.window.start };
            let mid_hit = first_after(&events[k_mid << shift], parent.t_start, parent.t_end);
            // Lower half (k_lo, k_mid], upper half (k_mid, k_hi].
            for (upper, a, b) in [(false, k_lo, k_mid), (true, k_mid, k_hi)] {
                let entry_here = parent.entered_from_top == upper;
                let (first_ev, from_top) = if entry_here {
                    (Some(start), upper)
                } else {
                    (mid_hit, !upper)
                };
                let Some(first_ev) = first_ev else { continue };
                bps.clear();
                bps.push((first_ev, from_top));
                loop {
                    let (ev, top) = *bps.last().expect("nonempty");
                    let target = if top { a } else { b };
                    match first_after(&events[target << shift], ev.t, parent.t_end) {
                        Some(e) if e.split <= parent.window.end => bps.push((e, !top)),
                        _ => break,
                    }
                }
                pieces.clear();
                for j in 0..bps.len() {
                    let (e, top) = bps[j];
                    let (end_split, t_end, complete) = match bps.get(j + 1) {
                        Some((f, _)) => (f.split, f.t, true),
                        None => (parent.window.end, parent.t_end, false),
                    };
                    let kind = if !complete {
                        ElementKind::Merged
                    } else if top {
                        ElementKind::Down
                    } else {
                        ElementKind::Up
                    };
                    let window = e.split.max(parent.window.start)..end_split.min(parent.window.end);
                    pieces.push(Piece { window, t_start: e.t, t_end, from_top: top, kind });
                }
                let band_idx = if upper { lo + 1 } else { lo };
                let list = members.band(band_idx as usize);
                kept.clear();
                for p in pieces.drain(..) {
                    if count_in(list, &p.window) == 0 {
                        empty_pieces += 1;
                    } else {
                        kept.push(p);
                    }
                }
                if kept.len() >= 2 {
                    let tail = kept.pop().expect("two pieces");
                    let prev = kept.last_mut().expect("one piece");
                    prev.window.end = tail.window.end;
                    prev.t_end = tail.t_end;
                    prev.kind = ElementKind::Merged;
                } else if let Some(only) = kept.first_mut() {
                    if only.kind == ElementKind::Merged {
                        // A lone partial traversal keeps its direction label.
                        only.kind = if only.from_top { ElementKind::Down } else { ElementKind::Up };
                    }
                }
                for p in kept.drain(..) {
                    let (first, last, samples) = stats(path, list, &p.window);
                    let id = next.len();
                    next.push(GraphElement {
                        generation: g,
                        band: DyadicInterval::band(g, band_idx),
                        flat: is_flat(last - first, g),
                        window: p.window,
                        t_start: p.t_start,
                        t_end: p.t_end,
                        first,
                        last,
                        samples,
                        kind: p.kind,
                        entered_from_top: p.from_top,
                        parent: Some(pi),
                        lower: Vec::new(),
                        upper: Vec::new(),
                    });
                    let par = &mut gens[n as usize][pi];
                    if upper {
                        par.upper.push(id);
                    } else {
                        par.lower.push(id);
                    }
                }
            }
        }
        gens.push(next);
    }
    Ok(Decomposition { generations: gens, empty_pieces })
}

fn count_in(list: &[u32], window: &Range<usize>) -> usize {
    list.partition_point(|&i| (i as usize) < window.end) - list.partition_point(|&i| (i as usize) < window.start)
}

fn stats(path: &BrownianPath, list: &[u32], window: &Range<usize>) -> (f64, f64, usize) {
    let a = list.partition_point(|&i| (i as usize) < window.start);
    let b = list.partition_point(|&i| (i as usize) < window.end);
    if a == b {
        return (f64::NAN, f64::NAN, 0);
    }
    (path.t[list[a] as usize], path.t[list[b - 1] as usize], b - a)
}

/// Structural checks of a decomposition.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartitionReport {
    /// Generations where in-band samples are not covered exactly once.
    pub coverage_failures: Vec<u32>,
    /// Elements whose window or band is not inside the parent's.
    pub nesting_failures: Vec<(u32, usize)>,
    /// Same-band pairs of one generation with overlapping window interiors.
    pub overlap_failures: Vec<(u32, usize, usize)>,
    /// Elements with a sample outside their band.
    pub band_failures: Vec<(u32, usize)>,
}

impl PartitionReport {
    pub fn passed(&self) -> bool {
        self.coverage_failures.is_empty()
            && self.nesting_failures.is_empty()
            && self.overlap_failures.is_empty()
            && self.band_failures.is_empty()
    }
}

pub fn check_partition(path: &BrownianPath, dec: &Decomposition) -> PartitionReport {
    let mut rep = PartitionReport::default();
    let n_max = dec.generations.len() as u32 - 1;
    let fine = fine_bands(path, n_max);
    let in_band = |s: usize, band: &DyadicInterval| band.lo_f64() < path.w[s] && path.w[s] <= band.hi_f64();
    for (gi, gen) in dec.generations.iter().enumerate().skip(1) {
        let g = gi as u32;
        let mut by_band: Vec<Vec<usize>> = vec![Vec::new(); 1 << g];
        for (i, e) in gen.iter().enumerate() {
            let parent = &dec.generations[gi - 1][e.parent.expect("non-root")];
            let inside = parent.window.start <= e.window.start
                && e.window.end <= parent.window.end
                && e.band.index >> 1 == parent.band.index;
            if !inside {
                rep.nesting_failures.push((g, i));
            }
            let ends = [path.index_after(e.first), path.index_after(e.last)];
            if e.samples == 0 || ends.iter().any(|&j| j == 0 || !in_band(j - 1, &e.band)) {
                rep.band_failures.push((g, i));
            }
            by_band[e.band.index as usize].push(i);
        }
        for ids in by_band.iter_mut() {
            ids.sort_by_key(|&i| gen[i].window.start);
            for w in ids.windows(2) {
                if gen[w[0]].window.end > gen[w[1]].window.start {
                    rep.overlap_failures.push((g, w[0], w[1]));
                }
            }
        }
        // With disjoint sorted windows, a merge sweep finds for each in-band
        // sample the one window of its band that must contain it.
        let members = BandMembers::new(&fine, n_max - g, 1 << g);
        let covered = members.bands().zip(&by_band).all(|(list, ids)| {
            let mut j = 0;
            list.iter().all(|&s| {
                let s = s as usize;
                while j < ids.len() && gen[ids[j]].window.end <= s {
                    j += 1;
                }
                j < ids.len() && gen[ids[j]].window.contains(&s)
            })
        });
        if !covered {
            rep.coverage_failures.push(g);
        }
    }
    rep
}

/// Fraction of the band covered by the interpolated path over the element's
/// window, clipped to the band.
pub fn band_coverage(path: &BrownianPath, e: &GraphElement) -> f64 {
    let (lo, hi) = (e.band.lo_f64(), e.band.hi_f64());
    let mut spans: Vec<(f64, f64)> = Vec::new();
    let start = e.window.start.saturating_sub(1);
    let end = (e.window.end + 1).min(path.len());
    for i in start..end.saturating_sub(1) {
        let (a, b) = (path.w[i].min(path.w[i + 1]), path.w[i].max(path.w[i + 1]));
        let (a, b) = (a.max(lo), b.min(hi));
        if a < b {
            spans.push((a, b));
        }
    }
    spans.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut covered = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (a, b) in spans {
        match cur {
            Some((c0, c1)) if a <= c1 => cur = Some((c0, c1.max(b))),
            Some((c0, c1)) => {
                covered += c1 - c0;
                cur = Some((a, b));
            }
            None => cur = Some((a, b)),
        }
    }
    if let Some((c0, c1)) = cur {
        covered += c1 - c0;
    }
    covered / (hi - lo)
}

/// Fraction of finest elements whose ancestors from generation `n0` on are
/// all steep.
pub fn steep_from(dec: &Decomposition, n0: u32) -> f64 {
    let finest = dec.generations.len() - 1;
    let gen = &dec.generations[finest];
    if gen.is_empty() {
        return 0.0;
    }
    let good = (0..gen.len())
        .filter(|&i| {
            let mut g = finest;
            let mut id = i;
            loop {
                let e = &dec.generations[g][id];
                if e.generation < n0.max(1) {
                    return true;
                }
                if e.flat {
                    return false;
                }
                id = e.parent.expect("non-root");
                g -= 1;
            }
        })
        .count();
    good as f64 / gen.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Chooser {
    FirstInTime,
    /// Smallest time extent.
    Steepest,
    Random(u64),
}

/// Selected elements: `nodes[g]` lists `(element index, parent node)` at
/// generation `g`, with generation 0 the root.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianSelection {
    pub nodes: Vec<Vec<(usize, Option<usize>)>>,
}

impl BrownianSelection {
    pub fn depth(&self) -> u32 {
        self.nodes.len() as u32 - 1
    }

    /// Distinct selected bands at the finest generation.
    pub fn injective(&self, dec: &Decomposition) -> bool {
        let g = self.nodes.len() - 1;
        let bands: BTreeSet<i64> = self.nodes[g].iter().map(|(e, _)| dec.generations[g][*e].band.index).collect();
        bands.len() == self.nodes[g].len()
    }

    /// `lambda_E`: each node of depth `n` carries `2^-n`.
    pub fn lambda(&self) -> MassTree<(u32, usize)> {
        let mut tree = MassTree::new((0, self.nodes[0][0].0), BigRational::one());
        let mut ids = vec![0usize];
        for g in 1..self.nodes.len() {
            let mass = BigRational::new(BigInt::from(1), BigInt::from(1u64) << g);
            let mut next = Vec::new();
            for (e, parent) in &self.nodes[g] {
                next.push(tree.push(ids[parent.expect("non-root")], (g as u32, *e), mass.clone()));
            }
            ids = next;
        }
        tree
    }
}

/// `viable[g][i]`: element `i` of generation `g` has a selectable subtree
/// reaching the finest generation.
fn viability(dec: &Decomposition) -> Vec<Vec<bool>> {
    let top = dec.generations.len() - 1;
    let mut v: Vec<Vec<bool>> = dec.generations.iter().map(|g| vec![false; g.len()]).collect();
    v[top].iter_mut().for_each(|x| *x = true);
    for g in (0..top).rev() {
        for (i, e) in dec.generations[g].iter().enumerate() {
            let ok = |kids: &Vec<usize>| kids.iter().any(|&k| v[g + 1][k]);
            v[g][i] = ok(&e.lower) && ok(&e.upper);
        }
    }
    v
}

/// Picks one child per half band under every selected element, down to
/// the finest generation. Only children whose own subtrees can be completed
/// are eligible; partial pieces that never reach their midline are skipped.
pub fn extract_vertical_cantor(dec: &Decomposition, chooser: Chooser) -> Result<BrownianSelection, BrownianError> {
    let mut rng = ChaCha8Rng::seed_from_u64(match chooser {
        Chooser::Random(s) => s,
        _ => 0,
    });
    let viable = viability(dec);
    let mut nodes = vec![vec![(0usize, None)]];
    for g in 1..dec.generations.len() {
        let mut next = Vec::new();
        for (ni, &(e, _)) in nodes[g - 1].iter().enumerate() {
            let el = &dec.generations[g - 1][e];
            for (side, kids) in [("lower", &el.lower), ("upper", &el.upper)] {
                let kids: Vec<usize> = kids.iter().copied().filter(|&k| viable[g][k]).collect();
                if kids.is_empty() {
                    return Err(BrownianError::Starvation { generation: g as u32 - 1, element: e, side });
                }
                let gen = &dec.generations[g];
                let pick = match chooser {
                    Chooser::FirstInTime => *kids.iter().min_by(|a, b| gen[**a].t_start.total_cmp(&gen[**b].t_start)).expect("nonempty"),
                    Chooser::Steepest => *kids.iter().min_by(|a, b| gen[**a].x_diameter().total_cmp(&gen[**b].x_diameter())).expect("nonempty"),
                    Chooser::Random(_) => kids[rng.gen_range(0..kids.len())],
                };
                next.push((pick, Some(ni)));
            }
        }
        nodes.push(next);
    }
    Ok(BrownianSelection { nodes })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BrownianLambdaReport {
    pub tested: usize,
    pub passed: usize,
}

impl BrownianLambdaReport {
    pub fn fraction(&self) -> f64 {
        if self.tested == 0 {
            0.0
        } else {
            self.passed as f64 / self.tested as f64
        }
    }
}

/// Tests `lambda_E(B(x, r)) >= r / 3` with `x` the first in-band sample of
/// each finest selected element and `r = 2^-j` for `j` in `js`, keeping only
/// radii below the diameter of the generation-`scale_gen` element holding
/// `x`. The left side is bounded below by the finest selected elements whose
/// bounding boxes lie in the closed ball.
pub fn check_brownian_lambda(path: &BrownianPath, dec: &Decomposition, sel: &BrownianSelection, js: Range<u32>, scale_gen: u32) -> BrownianLambdaReport {
    let g = sel.nodes.len() - 1;
    let gen = &dec.generations[g];
    let h = 1.0 / pow2(g as u32);
    let boxes: Vec<[f64; 4]> = sel.nodes[g]
        .iter()
        .map(|(e, _)| {
            let el = &gen[*e];
            [el.first, el.last, el.band.lo_f64(), el.band.hi_f64()]
        })
        .collect();
    let mut rep = BrownianLambdaReport::default();
    for (ni, (e, _)) in sel.nodes[g].iter().enumerate() {
        let el = &gen[*e];
        let x = (el.first, path.value_at(el.first));
        // Ancestor at the scale generation.
        let mut node = ni;
        let mut anc = g;
        while anc > scale_gen as usize {
            node = sel.nodes[anc][node].1.expect("non-root");
            anc -= 1;
        }
        let a = &dec.generations[anc][sel.nodes[anc][node].0];
        let a_diam = Float::hypot(a.x_diameter(), a.band.hi_f64() - a.band.lo_f64());
        for j in js.clone() {
            let r = 1.0 / pow2(j);
            if r >= a_diam {
                continue;
            }
            let inside = boxes
                .iter()
                .filter(|b| {
                    let dx = (b[0] - x.0).abs().max((b[1] - x.0).abs());
                    let dy = (b[2] - x.1).abs().max((b[3] - x.1).abs());
                    dx * dx + dy * dy <= r * r
                })
                .count();
            rep.tested += 1;
            if inside as f64 * h >= r / 3.0 {
                rep.passed += 1;
            }
        }
    }
    rep
}

/// For each `n`, the number of generation-`ceil(alpha (n+1))` dyadic
/// subintervals of `[0, 1]` holding a grid time `t` from which the path
/// stays within `2^-n` of `W(t)` for time `2^(-alpha (n+1))`.
pub fn slow_point_counts(path: &BrownianPath, alpha: f64, ns: Range<u32>) -> Result<Vec<(u32, usize)>, BrownianError> {
    if !(alpha > 0.0) {
        return Err(BrownianError::BadInput("alpha must be positive"));
    }
    let mut out = Vec::new();
    for n in ns {
        let a = 1.0 / pow2(n);
        let window = Float::powf(2.0, -alpha * (n as f64 + 1.0));
        let k = (window / path.dt).floor() as usize;
        if k == 0 {
            return Err(BrownianError::Resolution { scale: window, resolution: path.dt });
        }
        let last = path.index_after(1.0);
        if last + k > path.len() || !path.truncated(last + k).is_uniform() {
            return Err(BrownianError::BadInput("path must be uniformly sampled past 1 + window"));
        }
        let j = Float::ceil(alpha * (n as f64 + 1.0)) as i32;
        let boxes = Float::powi(2.0, j);
        let mut hit = BTreeSet::new();
        // Monotone deques over w[i+1 ..= i+k].
        let mut maxq: VecDeque<usize> = VecDeque::new();
        let mut minq: VecDeque<usize> = VecDeque::new();
        let mut next = 1;
        for i in 0..last {
            while next <= i + k {
                while maxq.back().is_some_and(|&b| path.w[b] <= path.w[next]) {
                    maxq.pop_back();
                }
                maxq.push_back(next);
                while minq.back().is_some_and(|&b| path.w[b] >= path.w[next]) {
                    minq.pop_back();
                }
                minq.push_back(next);
                next += 1;
            }
            while maxq.front().is_some_and(|&f| f <= i) {
                maxq.pop_front();
            }
            while minq.front().is_some_and(|&f| f <= i) {
                minq.pop_front();
            }
            let hi = path.w[*maxq.front().expect("window nonempty")];
            let lo = path.w[*minq.front().expect("window nonempty")];
            if hi - path.w[i] < a && path.w[i] - lo < a {
                let b = ((path.t[i] * boxes).floor() as i64).min(boxes as i64 - 1);
                hit.insert(b);
            }
        }
        out.push((n, hit.len()));
    }
    Ok(out)
}
