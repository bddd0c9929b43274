//! Brownian experiments over a seed list: hitting law, local time, graph and
//! slice dimensions, the generation decomposition, flat elements, slow
//! points and lambda lower bounds.

use confdim::brownian::{
    check_brownian_lambda, check_partition, count_slope, decompose, extract_vertical_cantor, graph_box_counts, hits_before,
    hitting_survival, holder_exponent, mass_exponent, simulate, slice_box_counts, slow_point_counts, steep_from, BrownianPath,
    Chooser, DowncrossingIndex, GraphMeasure, SimConfig, Stop,
};
use confdim::error::BrownianError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carpet_suite::carpet_lambda;
use crate::config::{ExperimentConfig, SpecFile};
use crate::pool::{map_seeds, pool};
use crate::report::{timed, CriterionResult, Report};
use crate::{Context, LabError};

/// Levels sampled for local-time positivity.
pub const POSITIVITY_LEVELS: usize = 50;
/// Level at which downcrossing estimates of consecutive generations are compared.
pub const CONVERGENCE_LEVEL: f64 = 0.37;
pub const SLICE_HEIGHT: f64 = 1.0 / 3.0;
/// Exponent of the reported mass bound `mu(B(x, r)) <= C r^s`.
pub const MASS_EXPONENT: f64 = 1.25;
/// Simulated heights kept at full resolution around `[0, 1]`.
const FOCUS: (f64, f64) = (-0.05, 1.05);
/// Retries with a shifted seed when the step budget runs out.
const MAX_ATTEMPTS: u64 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrownianData {
    pub generation: u32,
    pub hitting: HittingRow,
    pub seeds: Vec<SeedStats>,
    /// `(requested, used)` for paths simulated with a shifted seed.
    pub substitutions: Vec<(u64, u64)>,
    pub positivity_fraction: f64,
    pub median_holder: f64,
    pub converged_seeds: usize,
    pub median_graph_slope: f64,
    pub median_slice_slope: f64,
    pub monotone_counts: Vec<(u32, usize)>,
    pub flat_ok_seeds: usize,
    pub slow_ok_seeds: usize,
    pub lambda_tested: usize,
    pub lambda_passed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingRow {
    pub seeds: u64,
    pub grid: u32,
    pub survival: f64,
    pub target: f64,
}

/// Everything measured on one seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub seed: u64,
    pub positive_levels: usize,
    pub holder: f64,
    /// Local time at the convergence level from generations `g - 3` and `g - 2`.
    pub local_time: [f64; 2],
    pub converged: bool,
    pub slice_counts: Vec<(u32, usize)>,
    pub slice_slope: f64,
    pub mass_constant: f64,
    pub median_mass_exponent: f64,
    pub graph_counts: Vec<(u32, usize)>,
    pub graph_slope: f64,
    pub slow_counts: Vec<(u32, usize)>,
    pub partition_passed: bool,
    pub partition_elements: usize,
    pub flat_counts: Vec<(u32, usize)>,
    pub steep_fraction: f64,
    pub selection_injective: bool,
    pub lambda_tested: usize,
    pub lambda_passed: usize,
}

/// `2^((1/2 + eps)(n + 1))`.
pub fn envelope(n: u32, eps: f64) -> f64 {
    ((0.5 + eps) * (n as f64 + 1.0)).exp2()
}

pub fn within_envelope(counts: &[(u32, usize)], eps: f64) -> bool {
    counts.iter().all(|&(n, c)| c as f64 <= envelope(n, eps))
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Simulates, shifting the seed by multiples of `2^32` when the step budget runs out.
pub fn simulate_seed(cfg: SimConfig) -> Result<(BrownianPath, Option<u64>), LabError> {
    for attempt in 0..MAX_ATTEMPTS {
        let seed = cfg.seed.wrapping_add(attempt << 32);
        match simulate(&SimConfig { seed, ..cfg }) {
            Ok(p) => return Ok((p, (attempt > 0).then_some(seed))),
            Err(BrownianError::Budget { .. }) => continue,
            Err(e) => return Err(e).context(format!("simulating seed {}", cfg.seed)),
        }
    }
    Err(LabError::Config(format!("seed {}: step budget {} exhausted after {MAX_ATTEMPTS} attempts", cfg.seed, cfg.max_steps)))
}

fn sim(cfg: &ExperimentConfig, seed: u64, g: u32, stop: Stop, focus: bool) -> SimConfig {
    let mut c = SimConfig::new(seed, g, stop);
    c.max_steps = cfg.brownian.max_steps;
    if focus {
        c = c.focus(FOCUS.0, FOCUS.1);
    }
    c
}

struct Stage<T> {
    stats: T,
    substituted: Option<u64>,
}

/// Path to `T_1`: local time, Hölder exponent, slice counts and mass bound.
fn local_time_stage(cfg: &ExperimentConfig, seed: u64) -> Result<Stage<SeedStats>, LabError> {
    let g = cfg.generation;
    let (p, substituted) = simulate_seed(sim(cfg, seed, g, Stop::Level(1.0), true))?;
    let t = p.t_end();
    let n = g - 2;
    let idx = DowncrossingIndex::build(&p, n);
    let positive_levels = (0..POSITIVITY_LEVELS).filter(|&i| idx.local_time((i as f64 + 0.5) / POSITIVITY_LEVELS as f64, t) > 0.0).count();
    let holder = holder_exponent(&p, n, t, g, 2..g - 3).unwrap_or(f64::NAN);
    let coarse = DowncrossingIndex::build(&p, n - 1).local_time(CONVERGENCE_LEVEL, t);
    let fine = idx.local_time(CONVERGENCE_LEVEL, t);
    let converged = (fine - coarse).abs() <= cfg.tolerances.get("convergence") * fine.max(coarse);
    let slice_counts = slice_box_counts(&p, SLICE_HEIGHT, 4..g + 3);
    let slice_slope = count_slope(&slice_counts);

    let m = GraphMeasure::new(&p, n).context("graph measure")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut constant: f64 = 0.0;
    let mut exps = Vec::new();
    for _ in 0..20 {
        let s = rng.gen::<f64>() * t;
        let y = p.value_at(s);
        for j in 2..7 {
            let r = (-(j as f64)).exp2();
            constant = constant.max(m.ball(s, y, r) / r.powf(MASS_EXPONENT));
        }
        exps.extend(mass_exponent(&m, s, y, 2..7));
    }
    Ok(Stage {
        stats: SeedStats {
            seed,
            positive_levels,
            holder,
            local_time: [coarse, fine],
            converged,
            slice_counts,
            slice_slope,
            mass_constant: constant,
            median_mass_exponent: median(exps),
            ..Default::default()
        },
        substituted,
    })
}

type Counts = Vec<(u32, usize)>;

/// Path on `[0, 1 + 2^-6]`: graph box counts and slow points.
fn graph_stage(cfg: &ExperimentConfig, seed: u64) -> Result<Stage<(Counts, Counts)>, LabError> {
    let g = cfg.generation;
    let (p, substituted) = simulate_seed(sim(cfg, seed, g, Stop::Time(1.0 + 1.0 / 64.0), false))?;
    let counts = graph_box_counts(&p, 0.0, 1.0, 2..g);
    let slow = slow_point_counts(&p, 1.0, 6..g + 1).context("slow points")?;
    Ok(Stage { stats: (counts, slow), substituted })
}

/// Path to `T_6`: partition check on a coarse decomposition.
fn partition_stage(cfg: &ExperimentConfig, seed: u64) -> Result<Stage<(bool, usize)>, LabError> {
    let b = &cfg.brownian;
    let (p, substituted) = simulate_seed(sim(cfg, seed, b.partition_generation, Stop::Level(6.0), true))?;
    let dec = decompose(&p, b.partition_depth).context("decomposition")?;
    let elements = dec.generations.iter().map(Vec::len).sum();
    Ok(Stage { stats: (check_partition(&p, &dec).passed(), elements), substituted })
}

struct DecStats {
    flat_counts: Vec<(u32, usize)>,
    steep_fraction: f64,
    injective: bool,
    tested: usize,
    passed: usize,
}

/// Path to `T_6`: flat elements and the lambda bound on a vertical Cantor set.
fn decomposition_stage(cfg: &ExperimentConfig, seed: u64) -> Result<Stage<DecStats>, LabError> {
    let b = &cfg.brownian;
    let g = b.decomposition_generation;
    let (p, substituted) = simulate_seed(sim(cfg, seed, g, Stop::Level(6.0), true))?;
    let mut dec = decompose(&p, g).context("decomposition")?;
    let flat_counts = (b.a_like_from..=g).map(|n| (n, dec.generations[n as usize].iter().filter(|e| e.flat).count())).collect();
    let steep_fraction = steep_from(&dec, b.a_like_from);
    // Generation g bands are one grid step high and often skipped by a
    // single increment, so the selection stops one generation earlier.
    dec.generations.truncate(g as usize);
    let sel = extract_vertical_cantor(&dec, Chooser::FirstInTime).context("vertical Cantor selection")?;
    let lam = check_brownian_lambda(&p, &dec, &sel, 2..g - 2, 2);
    Ok(Stage {
        stats: DecStats { flat_counts, steep_fraction, injective: sel.injective(&dec), tested: lam.tested, passed: lam.passed },
        substituted,
    })
}

/// Linear path from 0 to 1; every generation has exactly `2^n` elements.
pub fn monotone_counts(depth: u32) -> Result<Vec<(u32, usize)>, LabError> {
    let steps = 1usize << (depth + 6);
    let dt = (-(2.0 * (depth + 6) as f64)).exp2();
    let p = BrownianPath::from_values(dt, (0..=steps).map(|i| i as f64 / steps as f64).collect()).context("monotone path")?;
    let dec = decompose(&p, depth).context("monotone decomposition")?;
    Ok((1..=depth).map(|n| (n, dec.generations[n as usize].len())).collect())
}

fn split<T>(stages: Vec<Stage<T>>, seeds: &[u64], subs: &mut Vec<(u64, u64)>) -> Vec<T> {
    stages
        .into_iter()
        .zip(seeds)
        .map(|(s, &seed)| {
            if let Some(used) = s.substituted {
                subs.push((seed, used));
            }
            s.stats
        })
        .collect()
}

pub fn run_brownian_suite(cfg: &ExperimentConfig) -> Result<Report, LabError> {
    cfg.validate()?;
    let tol = &cfg.tolerances;
    let b = &cfg.brownian;
    let g = cfg.generation;
    let pool = pool()?;
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    let mut report = Report::new(&cfg.command, Some(cfg.clone()));
    let mut subs = Vec::new();

    let dt = (-(b.hitting_grid as f64)).exp2();
    let (hits, secs) = timed(|| pool.install(|| (0..b.hitting_seeds).into_par_iter().filter(|&s| hits_before(s, 1.0, 1.0, dt)).count()));
    let hitting = HittingRow {
        seeds: b.hitting_seeds,
        grid: b.hitting_grid,
        survival: 1.0 - hits as f64 / b.hitting_seeds as f64,
        target: hitting_survival(1.0, 1.0),
    };
    report.record(
        CriterionResult {
            id: 7,
            name: format!("P(T_1 > 1) over {} seeds", b.hitting_seeds),
            passed: (hitting.survival - hitting.target).abs() <= tol.get("hitting"),
            measured: format!("{:.4}", hitting.survival),
            target: format!("{:.4} ± {}", hitting.target, tol.get("hitting")),
        },
        secs,
    );

    let (r, lt_secs) = timed(|| map_seeds(&pool, &seeds, |s| local_time_stage(cfg, s)));
    let mut stats = split(r?, &seeds, &mut subs);
    let positive: usize = stats.iter().map(|s| s.positive_levels).sum();
    let positivity_fraction = positive as f64 / (POSITIVITY_LEVELS * stats.len()) as f64;
    let median_holder = median(stats.iter().map(|s| s.holder).collect());
    report.record(
        CriterionResult {
            id: 8,
            name: format!("local time positivity and Hölder exponent, {} seeds at g = {g}", seeds.len()),
            passed: positivity_fraction >= tol.get("positivity") && median_holder >= tol.get("holder_min"),
            measured: format!("{:.4} of (seed, level) pairs positive, median exponent {median_holder:.3}", positivity_fraction),
            target: format!(">= {} positive, median >= {}", tol.get("positivity"), tol.get("holder_min")),
        },
        lt_secs,
    );

    let (r, graph_secs) = timed(|| map_seeds(&pool, &seeds, |s| graph_stage(cfg, s)));
    for (st, (counts, slow)) in stats.iter_mut().zip(split(r?, &seeds, &mut subs)) {
        st.graph_slope = count_slope(&counts);
        st.graph_counts = counts;
        st.slow_counts = slow;
    }
    let median_graph_slope = median(stats.iter().map(|s| s.graph_slope).collect());
    let median_slice_slope = median(stats.iter().map(|s| s.slice_slope).collect());
    report.record(
        CriterionResult {
            id: 9,
            name: format!("graph and level-set box dimensions, {} seeds at g = {g}", seeds.len()),
            passed: (median_graph_slope - 1.5).abs() <= tol.get("graph_dim") && (median_slice_slope - 0.5).abs() <= tol.get("brownian_slice_dim"),
            measured: format!("median graph slope {median_graph_slope:.4}, median slice slope {median_slice_slope:.4}"),
            target: format!("1.5 ± {}, 0.5 ± {}", tol.get("graph_dim"), tol.get("brownian_slice_dim")),
        },
        // The slice counts come from the local-time paths.
        graph_secs + lt_secs,
    );

    let (r, secs) = timed(|| -> Result<_, LabError> {
        let parts = map_seeds(&pool, &seeds, |s| partition_stage(cfg, s))?;
        Ok((parts, monotone_counts(b.partition_depth)?))
    });
    let (parts, monotone) = r?;
    for (st, (ok, elements)) in stats.iter_mut().zip(split(parts, &seeds, &mut subs)) {
        st.partition_passed = ok;
        st.partition_elements = elements;
    }
    let partition_ok = stats.iter().filter(|s| s.partition_passed).count();
    let monotone_ok = monotone.iter().all(|&(n, c)| c == 1 << n);
    report.record(
        CriterionResult {
            id: 10,
            name: format!("decomposition nesting and disjointness to generation {} (g = {})", b.partition_depth, b.partition_generation),
            passed: partition_ok == stats.len() && monotone_ok,
            measured: format!(
                "{partition_ok} of {} seeds partition; monotone counts {}",
                stats.len(),
                monotone.iter().map(|(_, c)| c.to_string()).collect::<Vec<_>>().join(",")
            ),
            target: "every seed; 2^n per generation".into(),
        },
        secs,
    );

    let (r, dec_secs) = timed(|| map_seeds(&pool, &seeds, |s| decomposition_stage(cfg, s)));
    for (st, d) in stats.iter_mut().zip(split(r?, &seeds, &mut subs)) {
        st.flat_counts = d.flat_counts;
        st.steep_fraction = d.steep_fraction;
        st.selection_injective = d.injective;
        st.lambda_tested = d.tested;
        st.lambda_passed = d.passed;
    }
    let eps = tol.get("envelope_eps");
    let majority = (tol.get("majority") * stats.len() as f64).ceil() as usize;
    let flat_ok_seeds = stats.iter().filter(|s| within_envelope(&s.flat_counts, eps)).count();
    let worst_median = (b.a_like_from..=b.decomposition_generation)
        .map(|n| {
            let m = median(stats.iter().filter_map(|s| s.flat_counts.iter().find(|c| c.0 == n)).map(|c| c.1 as f64).collect());
            (n, m)
        })
        .collect::<Vec<_>>();
    report.record(
        CriterionResult {
            id: 11,
            name: format!("flat elements per generation, n = {}..{} at g = {}", b.a_like_from, b.decomposition_generation, b.decomposition_generation),
            passed: flat_ok_seeds >= majority,
            measured: format!(
                "{flat_ok_seeds} of {} seeds within the envelope; median counts {}",
                stats.len(),
                worst_median.iter().map(|(n, m)| format!("n{n}:{m}")).collect::<Vec<_>>().join(" ")
            ),
            target: format!("count <= 2^({}(n+1)) on >= {majority} seeds", 0.5 + eps),
        },
        dec_secs,
    );

    let slow_ok_seeds = stats.iter().filter(|s| within_envelope(&s.slow_counts, eps)).count();
    report.record(
        CriterionResult {
            id: 12,
            name: format!("slow-point interval counts, alpha = 1, n = 6..{g}"),
            passed: slow_ok_seeds >= majority,
            measured: format!(
                "{slow_ok_seeds} of {} seeds within the envelope; largest count {}",
                stats.len(),
                stats.iter().flat_map(|s| s.slow_counts.iter().map(|c| c.1)).max().unwrap_or(0)
            ),
            target: format!("count <= 2^({}(n+1)) on >= {majority} seeds", 0.5 + eps),
        },
        graph_secs,
    );

    let (r, carpet_secs) = timed(|| -> Result<_, LabError> {
        let file = SpecFile::alternating();
        carpet_lambda(&file.label(), &file.to_spec()?, 6, 10)
    });
    let carpet = r?;
    let lambda_tested: usize = stats.iter().map(|s| s.lambda_tested).sum();
    let lambda_passed: usize = stats.iter().map(|s| s.lambda_passed).sum();
    let fraction = lambda_passed as f64 / lambda_tested.max(1) as f64;
    report.record(
        CriterionResult {
            id: 13,
            name: "lambda lower bounds on vertical Cantor sets".into(),
            passed: carpet.failures == 0 && carpet.tested > 0 && lambda_tested > 0 && fraction >= tol.get("lambda_fraction"),
            measured: format!(
                "carpet {} failures in {} balls (worst ratio {:.4}); Brownian {lambda_passed} of {lambda_tested} = {fraction:.4}",
                carpet.failures, carpet.tested, carpet.worst_ratio
            ),
            target: format!("carpet exact; Brownian >= {}", tol.get("lambda_fraction")),
        },
        dec_secs + carpet_secs,
    );

    subs.sort_unstable();
    let converged_seeds = stats.iter().filter(|s| s.converged).count();
    report.brownian = Some(BrownianData {
        generation: g,
        hitting,
        seeds: stats,
        substitutions: subs,
        positivity_fraction,
        median_holder,
        converged_seeds,
        median_graph_slope,
        median_slice_slope,
        monotone_counts: monotone,
        flat_ok_seeds,
        slow_ok_seeds,
        lambda_tested,
        lambda_passed,
    });
    Ok(report)
}
