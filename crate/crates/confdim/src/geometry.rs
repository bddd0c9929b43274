//! Metric primitives: dyadic intervals, point clouds, relative distance,
//! snowflaked metrics, box counting and quasisymmetric distortion.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use num_rational::Ratio;
use num_traits::Float;

use crate::error::GeometryError;

/// The interval `[i 2^-n, (i+1) 2^-n]`, optionally open on the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicInterval {
    pub generation: u32,
    pub index: i64,
    pub left_open: bool,
}

impl DyadicInterval {
    pub fn new(generation: u32, index: i64) -> Self {
        DyadicInterval { generation, index, left_open: false }
    }

    /// Left-open interval `((m-1) 2^-n, m 2^-n]` in band numbering, `m = index + 1`.
    pub fn band(generation: u32, index: i64) -> Self {
        DyadicInterval { generation, index, left_open: true }
    }

    /// The left-open interval of generation `n` that contains `y`.
    pub fn band_containing(generation: u32, y: f64) -> Self {
        let scaled = y * pow2(generation);
        let index = scaled.ceil() as i64 - 1;
        Self::band(generation, index)
    }

    pub fn lo(&self) -> Ratio<i128> {
        Ratio::new(self.index as i128, 1i128 << self.generation)
    }

    pub fn hi(&self) -> Ratio<i128> {
        Ratio::new(self.index as i128 + 1, 1i128 << self.generation)
    }

    pub fn lo_f64(&self) -> f64 {
        self.index as f64 / pow2(self.generation)
    }

    pub fn hi_f64(&self) -> f64 {
        (self.index + 1) as f64 / pow2(self.generation)
    }

    pub fn mid_f64(&self) -> f64 {
        (2 * self.index + 1) as f64 / pow2(self.generation + 1)
    }

    pub fn length(&self) -> f64 {
        1.0 / pow2(self.generation)
    }

    pub fn contains(&self, y: f64) -> bool {
        let (lo, hi) = (self.lo_f64(), self.hi_f64());
        let above = if self.left_open { y > lo } else { y >= lo };
        above && y <= hi
    }

    /// The two halves at the next generation, lower first.
    pub fn children(&self) -> [DyadicInterval; 2] {
        let g = self.generation + 1;
        [
            DyadicInterval { generation: g, index: 2 * self.index, left_open: self.left_open },
            DyadicInterval { generation: g, index: 2 * self.index + 1, left_open: self.left_open },
        ]
    }
}

pub(crate) fn pow2(n: u32) -> f64 {
    Float::powi(2.0f64, n as i32)
}

/// A finite planar sample of a set, faithful down to `resolution`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 2]>,
    resolution: f64,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 2]>, resolution: f64) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        if !(resolution > 0.0) {
            return Err(GeometryError::NonPositiveResolution(resolution));
        }
        Ok(PointCloud { points, resolution })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, p) in self.points.iter().enumerate() {
            for q in &self.points[i + 1..] {
                best = best.max(euclid(p, q));
            }
        }
        best
    }

    /// Image of the cloud under `f`, keeping the resolution scaled by `lipschitz`.
    pub fn map(&self, lipschitz: f64, f: impl Fn([f64; 2]) -> [f64; 2]) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
            resolution: self.resolution * lipschitz,
        }
    }

    /// Disjoint union; the coarser resolution wins.
    pub fn union(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        PointCloud { points, resolution: self.resolution.max(other.resolution) }
    }
}

pub(crate) fn euclid(p: &[f64; 2], q: &[f64; 2]) -> f64 {
    Float::hypot(p[0] - q[0], p[1] - q[1])
}

/// `dist(E, F) / min(diam E, diam F)` over all point pairs.
pub fn relative_distance(e: &PointCloud, f: &PointCloud) -> Result<f64, GeometryError> {
    let de = e.diameter();
    let df = f.diameter();
    if de <= 0.0 || df <= 0.0 {
        return Err(GeometryError::DegenerateDiameter);
    }
    let mut dist = f64::INFINITY;
    for p in e.points() {
        for q in f.points() {
            dist = dist.min(euclid(p, q));
        }
    }
    Ok(dist / de.min(df))
}

/// A finite metric space given by a distance oracle on indices.
pub trait Metric {
    fn len(&self) -> usize;

    fn dist(&self, i: usize, j: usize) -> f64;

    /// Sampling scale measured in this metric.
    fn resolution(&self) -> f64;

    /// Planar position of a point, if the metric is a monotone function of
    /// Euclidean distance between these positions.
    fn position(&self, _i: usize) -> Option<[f64; 2]> {
        None
    }

    /// Euclidean radius of a metric ball of radius `r`, under the same
    /// monotonicity assumption as [`Metric::position`].
    fn euclidean_radius(&self, _r: f64) -> Option<f64> {
        None
    }
}

impl Metric for PointCloud {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        euclid(&self.points[i], &self.points[j])
    }

    fn resolution(&self) -> f64 {
        self.resolution
    }

    fn position(&self, i: usize) -> Option<[f64; 2]> {
        Some(self.points[i])
    }

    fn euclidean_radius(&self, r: f64) -> Option<f64> {
        Some(r)
    }
}

/// The metric `d^p` on a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Snowflake<'a> {
    base: &'a PointCloud,
    p: f64,
}

/// Snowflake transform `d -> d^p`, `0 < p <= 1`.
pub fn snowflake(x: &PointCloud, p: f64) -> Result<Snowflake<'_>, GeometryError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(GeometryError::BadExponent(p));
    }
    Ok(Snowflake { base: x, p })
}

impl<'a> Snowflake<'a> {
    /// Snowflakes again; exponents multiply, so the result is the same
    /// oracle as a single transform with exponent `p q`.
    pub fn snowflake(&self, q: f64) -> Result<Snowflake<'a>, GeometryError> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(GeometryError::BadExponent(q));
        }
        Ok(Snowflake { base: self.base, p: self.p * q })
    }

    pub fn exponent(&self) -> f64 {
        self.p
    }

    pub fn base(&self) -> &'a PointCloud {
        self.base
    }
}

impl Metric for Snowflake<'_> {
    fn len(&self) -> usize {
        self.base.len()
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        let d = self.base.dist(i, j);
        if self.p == 1.0 {
            d
        } else {
            d.powf(self.p)
        }
    }

    fn resolution(&self) -> f64 {
        self.base.resolution().powf(self.p)
    }

    fn position(&self, i: usize) -> Option<[f64; 2]> {
        Some(self.base.points()[i])
    }

    fn euclidean_radius(&self, r: f64) -> Option<f64> {
        Some(r.powf(1.0 / self.p))
    }
}

/// Anything whose occupied boxes (or packed balls) at scale `2^-n` can be counted.
pub trait BoxCountable {
    fn resolution(&self) -> f64;

    fn occupied(&self, n: u32) -> usize;
}

impl BoxCountable for PointCloud {
    fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Occupied closed-open dyadic squares of side `2^-n`.
    fn occupied(&self, n: u32) -> usize {
        let s = pow2(n);
        let mut keys: Vec<(i64, i64)> = self
            .points
            .iter()
            .map(|p| ((p[0] * s).floor() as i64, (p[1] * s).floor() as i64))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    }
}

/// Box counting for an abstract metric by greedy packing of `2^-n` balls.
pub struct Packing<M>(pub M);

impl<M: Metric> BoxCountable for Packing<M> {
    fn resolution(&self) -> f64 {
        self.0.resolution()
    }

    fn occupied(&self, n: u32) -> usize {
        greedy_centers(&self.0, 1.0 / pow2(n)).len()
    }
}

impl BoxCountable for Snowflake<'_> {
    fn resolution(&self) -> f64 {
        Metric::resolution(self)
    }

    fn occupied(&self, n: u32) -> usize {
        greedy_centers(self, 1.0 / pow2(n)).len()
    }
}

/// A maximal `r`-separated subset chosen greedily in index order.
pub fn greedy_centers<M: Metric + ?Sized>(x: &M, r: f64) -> Vec<usize> {
    let mut centers = Vec::new();
    match (x.position(0), x.euclidean_radius(r)) {
        (Some(_), Some(er)) if er > 0.0 && er.is_finite() => {
            let mut grid: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
            for i in 0..x.len() {
                let p = x.position(i).unwrap_or([0.0, 0.0]);
                let key = ((p[0] / er).floor() as i64, (p[1] / er).floor() as i64);
                let mut free = true;
                'scan: for dx in -1..=1 {
                    for dy in -1..=1 {
                        if let Some(list) = grid.get(&(key.0 + dx, key.1 + dy)) {
                            if list.iter().any(|&c| x.dist(i, c) < r) {
                                free = false;
                                break 'scan;
                            }
                        }
                    }
                }
                if free {
                    grid.entry(key).or_default().push(i);
                    centers.push(i);
                }
            }
        }
        _ => {
            for i in 0..x.len() {
                if centers.iter().all(|&c| x.dist(i, c) >= r) {
                    centers.push(i);
                }
            }
        }
    }
    centers
}

/// Least-squares line through `(xs, ys)`: returns `(slope, intercept)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len().min(ys.len()) as f64;
    if n < 2.0 {
        return (f64::NAN, f64::NAN);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Which generations of a count series enter the regression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegressionWindow {
    pub trim_coarse: usize,
    pub trim_fine: usize,
}

impl RegressionWindow {
    pub const FULL: RegressionWindow = RegressionWindow { trim_coarse: 0, trim_fine: 0 };
    /// Drops the two coarsest and the finest generation.
    pub const TRIMMED: RegressionWindow = RegressionWindow { trim_coarse: 2, trim_fine: 1 };
}

impl Default for RegressionWindow {
    fn default() -> Self {
        RegressionWindow::FULL
    }
}

/// Box counts per generation and the fitted slope of `log2 N` against `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxCount {
    pub slope: f64,
    pub intercept: f64,
    pub counts: Vec<(u32, usize)>,
    /// Generations used by the fit.
    pub fitted: (u32, u32),
}

/// Box-counting dimension over generations `lo..=hi`, fitted on all of them.
pub fn box_count_dim<X: BoxCountable + ?Sized>(x: &X, lo: u32, hi: u32) -> Result<BoxCount, GeometryError> {
    box_count_dim_windowed(x, lo, hi, RegressionWindow::FULL)
}

/// Box counting over `lo..=hi`, fitted on the generations left after `window`.
pub fn box_count_dim_windowed<X: BoxCountable + ?Sized>(
    x: &X,
    lo: u32,
    hi: u32,
    window: RegressionWindow,
) -> Result<BoxCount, GeometryError> {
    if hi < lo {
        return Err(GeometryError::EmptyGenerations);
    }
    let finest = 1.0 / pow2(hi);
    if x.resolution() > finest {
        return Err(GeometryError::InsufficientResolution { resolution: x.resolution(), required: finest });
    }
    let counts: Vec<(u32, usize)> = (lo..=hi).map(|n| (n, x.occupied(n))).collect();
    let (a, b) = (window.trim_coarse, counts.len().saturating_sub(window.trim_fine));
    if b < a + 2 {
        return Err(GeometryError::EmptyGenerations);
    }
    let used = &counts[a..b];
    let xs: Vec<f64> = used.iter().map(|c| c.0 as f64).collect();
    let ys: Vec<f64> = used.iter().map(|c| Float::log2(c.1 as f64)).collect();
    let (slope, intercept) = fit_line(&xs, &ys);
    Ok(BoxCount { slope, intercept, fitted: (used[0].0, used[used.len() - 1].0), counts })
}

/// Sampled distortion function: breakpoints of the monotone envelope.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistortionProfile {
    samples: Vec<(f64, f64)>,
}

impl DistortionProfile {
    /// Builds the monotone upper envelope of raw `(t, ratio)` records.
    pub fn from_records(mut records: Vec<(f64, f64)>) -> Self {
        records.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
        let mut samples: Vec<(f64, f64)> = Vec::new();
        for (t, r) in records {
            match samples.last() {
                Some(&(_, best)) if r <= best => {}
                _ => samples.push((t, r)),
            }
        }
        DistortionProfile { samples }
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Envelope value: largest recorded ratio with `t' <= t` (0 below the first record).
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.samples.partition_point(|s| s.0 <= t);
        if k == 0 {
            0.0
        } else {
            self.samples[k - 1].1
        }
    }

    /// Whether every record obeys `ratio <= eta(t) (1 + rel_tol)` for increasing `eta`.
    pub fn dominated_by(&self, eta: impl Fn(f64) -> f64, rel_tol: f64) -> bool {
        self.samples.iter().all(|&(t, r)| r <= eta(t) * (1.0 + rel_tol))
    }
}

/// Distortion of the pairing `i -> i` between two metrics on the same index set.
pub fn qs_distortion<X: Metric + ?Sized, Y: Metric + ?Sized>(
    x: &X,
    y: &Y,
) -> Result<DistortionProfile, GeometryError> {
    let n = x.len();
    if n != y.len() {
        return Err(GeometryError::SizeMismatch(n, y.len()));
    }
    if n < 3 {
        return Err(GeometryError::TooFewPoints(n));
    }
    let mut records = Vec::new();
    for a in 0..n {
        for c in 0..n {
            if c == a {
                continue;
            }
            let dxz = x.dist(a, c);
            let dyz = y.dist(a, c);
            if dxz <= 0.0 || dyz <= 0.0 {
                return Err(GeometryError::CoincidentPoints(a, c));
            }
            for b in 0..n {
                if b == a {
                    continue;
                }
                let t = x.dist(a, b) / dxz;
                if t > 0.0 {
                    records.push((t, y.dist(a, b) / dyz));
                }
            }
        }
    }
    Ok(DistortionProfile::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn segment(n: usize) -> PointCloud {
        let pts = (0..=n).map(|i| [i as f64 / n as f64, 0.0]).collect();
        PointCloud::new(pts, 1.0 / n as f64).unwrap()
    }

    fn cantor(depth: u32) -> PointCloud {
        let mut lefts = vec![0.0f64];
        let mut w = 1.0;
        for _ in 0..depth {
            w /= 3.0;
            lefts = lefts.iter().flat_map(|&l| [l, l + 2.0 * w]).collect();
        }
        // Interval endpoints belong to the Cantor set.
        let pts = lefts.iter().flat_map(|&l| [[l, 0.0], [l + w, 0.0]]).collect();
        PointCloud::new(pts, w).unwrap()
    }

    #[test]
    fn relative_distance_examples() {
        let e = PointCloud::new(vec![[0.0, 0.0], [1.0, 0.0]], 1.0).unwrap();
        let f = PointCloud::new(vec![[3.0, 0.0], [3.0, 4.0]], 1.0).unwrap();
        assert_eq!(relative_distance(&e, &f).unwrap(), 2.0);
        assert_eq!(relative_distance(&e, &e).unwrap(), 0.0);
        let g = PointCloud::new(vec![[0.0, 1.0], [1.0, 1.0]], 1.0).unwrap();
        assert_eq!(relative_distance(&e, &g).unwrap(), 1.0);
        let dot = PointCloud::new(vec![[0.0, 0.0]], 1.0).unwrap();
        assert_eq!(relative_distance(&e, &dot), Err(GeometryError::DegenerateDiameter));
    }

    #[test]
    fn snowflake_distances() {
        let x = PointCloud::new(vec![[0.0, 0.0], [4.0, 0.0]], 1.0).unwrap();
        assert_eq!(snowflake(&x, 1.0).unwrap().dist(0, 1), 4.0);
        assert_eq!(snowflake(&x, 0.5).unwrap().dist(0, 1), 2.0);
        assert!(snowflake(&x, 0.0).is_err());
        assert!(snowflake(&x, 1.5).is_err());
    }

    #[test]
    fn snowflake_composition_is_exact() {
        let x = PointCloud::new(vec![[0.0, 0.0], [0.3, 0.7], [2.0, -1.0], [5.0, 5.0]], 0.1).unwrap();
        let twice = snowflake(&x, 0.6).unwrap().snowflake(0.7).unwrap();
        let once = snowflake(&x, 0.6 * 0.7).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(twice.dist(i, j), once.dist(i, j));
            }
        }
    }

    #[test]
    fn segment_has_dimension_one() {
        let seg = segment(1024);
        let bc = box_count_dim(&seg, 2, 8).unwrap();
        assert!((0.95..=1.05).contains(&bc.slope), "{}", bc.slope);
    }

    #[test]
    fn cantor_dimension() {
        // Exact counts 2^k at scale 3^-k give slope log 2 / log 3 = 0.6309.
        let bc = box_count_dim(&cantor(8), 2, 7).unwrap();
        let oracle = 2f64.ln() / 3f64.ln();
        assert!((bc.slope - oracle).abs() < 0.05, "{}", bc.slope);
    }

    #[test]
    fn resolution_guard() {
        let seg = segment(16);
        assert!(matches!(box_count_dim(&seg, 2, 8), Err(GeometryError::InsufficientResolution { .. })));
        assert!(matches!(box_count_dim(&seg, 5, 3), Err(GeometryError::EmptyGenerations)));
    }

    #[test]
    fn snowflaked_segment_has_dimension_two() {
        let seg = segment(1 << 16);
        let s = snowflake(&seg, 0.5).unwrap();
        let bc = box_count_dim(&s, 3, 8).unwrap();
        assert!((bc.slope - 2.0).abs() < 0.1, "{:?}", bc);
    }

    #[test]
    fn greedy_packing_matches_brute_force() {
        let seg = segment(300);
        let s = snowflake(&seg, 0.5).unwrap();
        struct Plain<'a>(&'a Snowflake<'a>);
        impl Metric for Plain<'_> {
            fn len(&self) -> usize {
                self.0.len()
            }
            fn dist(&self, i: usize, j: usize) -> f64 {
                self.0.dist(i, j)
            }
            fn resolution(&self) -> f64 {
                Metric::resolution(self.0)
            }
        }
        for r in [0.5, 0.2, 0.1, 0.07] {
            assert_eq!(greedy_centers(&s, r), greedy_centers(&Plain(&s), r));
        }
    }

    #[test]
    fn disjoint_union_takes_max_slope() {
        let seg = segment(1 << 15);
        let cant = cantor(12).map(1.0 / 64.0, |p| [p[0] / 64.0 + 3.0, 3.0]);
        let u = seg.union(&cant);
        let a = box_count_dim(&seg, 6, 14).unwrap().slope;
        let b = box_count_dim(&cant, 6, 14).unwrap().slope;
        let c = box_count_dim(&u, 6, 14).unwrap().slope;
        assert!((c - a.max(b)).abs() < 0.05, "{a} {b} {c}");
    }

    fn sample_cloud() -> PointCloud {
        let pts = (0..25)
            .map(|i| {
                let t = i as f64;
                [Float::sin(t * 1.7) * 3.0 + t * 0.1, Float::cos(t * 0.9) * 2.0]
            })
            .collect();
        PointCloud::new(pts, 0.01).unwrap()
    }

    #[test]
    fn identity_and_similarity_envelopes() {
        let x = sample_cloud();
        let id = qs_distortion(&x, &x).unwrap();
        assert!(id.samples().iter().all(|&(t, r)| t == r));
        let y = x.map(2.0, |p| [2.0 * p[0], 2.0 * p[1]]);
        let sim = qs_distortion(&x, &y).unwrap();
        assert!(sim.samples().iter().all(|&(t, r)| (t - r).abs() <= 1e-12 * t));
    }

    #[test]
    fn snowflake_envelope_is_square_root() {
        let x = sample_cloud();
        let s = snowflake(&x, 0.5).unwrap();
        let prof = qs_distortion(&x, &s).unwrap();
        assert!(prof.dominated_by(Float::sqrt, 1e-12));
    }

    #[test]
    fn composed_pairing_is_dominated_by_composed_envelopes() {
        let x = sample_cloud();
        let y = snowflake(&x, 0.8).unwrap();
        let z = y.snowflake(0.5).unwrap();
        let f = qs_distortion(&x, &y).unwrap();
        let g = qs_distortion(&y, &z).unwrap();
        let gf = qs_distortion(&x, &z).unwrap();
        assert!(gf.samples().iter().all(|&(t, r)| r <= g.eval(f.eval(t))));
    }

    #[test]
    fn coincident_points_rejected() {
        let x = PointCloud::new(vec![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]], 0.1).unwrap();
        assert!(matches!(qs_distortion(&x, &x), Err(GeometryError::CoincidentPoints(..))));
    }

    #[test]
    fn dyadic_bands() {
        let b = DyadicInterval::band_containing(2, 0.5);
        assert_eq!((b.index, b.lo_f64(), b.hi_f64()), (1, 0.25, 0.5));
        assert!(b.contains(0.5) && !b.contains(0.25));
        assert_eq!(b.hi(), Ratio::new(1, 2));
        let [lo, hi] = b.children();
        assert_eq!((lo.index, hi.index), (2, 3));
        assert_eq!(b.mid_f64(), 0.375);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cloud() -> impl Strategy<Value = PointCloud> {
            proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..12)
                .prop_map(|v| PointCloud::new(v.into_iter().map(|(a, b)| [a, b]).collect(), 0.01).unwrap())
        }

        proptest! {
            #[test]
            fn relative_distance_is_symmetric(e in cloud(), f in cloud()) {
                let a = relative_distance(&e, &f);
                let b = relative_distance(&f, &e);
                prop_assert_eq!(a, b);
            }

            #[test]
            fn snowflake_composes(e in cloud(), p in 0.05..1.0f64, q in 0.05..1.0f64) {
                let twice = snowflake(&e, p).unwrap().snowflake(q).unwrap();
                let once = snowflake(&e, p * q).unwrap();
                for i in 0..e.len() {
                    for j in 0..e.len() {
                        prop_assert_eq!(twice.dist(i, j), once.dist(i, j));
                    }
                }
            }

            #[test]
            fn envelope_is_monotone(e in cloud(), p in 0.1..1.0f64) {
                prop_assume!(e.points().iter().enumerate().all(|(i, a)| e.points()[i + 1..].iter().all(|b| a != b)));
                prop_assume!(e.len() >= 3);
                let s = snowflake(&e, p).unwrap();
                let prof = qs_distortion(&e, &s).unwrap();
                prop_assert!(prof.samples().windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
            }
        }
    }
}
