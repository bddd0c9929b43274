//! Carpet experiments: box and slice dimensions, exact measure identities,
//! vertical modulus, the rho-infinity contract, alpha-measure trees,
//! lambda ball bounds and the snowflake sanity check.

use confdim::carpet::{dim_formula, fiber_cloud, generation_cloud, check_non_adic, AffineGraphSpec, CarpetSpec, PatternSource};
use confdim::geometry::{box_count_dim, qs_distortion, snowflake, PointCloud};
use confdim::hmeasure::{
    alpha_measure, check_disintegration, check_doubling, check_lambda_lower_bound, gdc_epsilon, max_mass_ratio, random_gdc_tree,
    sample_balls, HierarchicalSpace, VerticalCantorSelection,
};
use confdim::modulus::{
    carpet_problem, carpet_vertical_modulus, enumerate_vertical_families, is_admissible, rho_infinity, vertical_family_count,
    VerticalModulusConfig,
};
use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::One;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SpecFile};
use crate::io::format_fraction;
use crate::report::{timed, CriterionResult, Report};
use crate::{Context, LabError};

/// Largest generation cell count for the reported modulus values beyond generation 2.
pub const MODULUS_CELL_CAP: u64 = 1024;
/// Largest cell count of the generation used for the exact measure identities.
pub const DISINTEGRATION_CELL_CAP: u64 = 50_000;
/// Largest vertical family count enumerated for the rho-infinity contract.
pub const FAMILY_CAP: f64 = 4096.0;

/// Deepest generation up to `n` whose cell count stays within `cap`.
pub fn capped_generation(spec: &CarpetSpec, n: u32, cap: u64) -> u32 {
    let cells = (spec.k * spec.ell) as u64;
    (1..=n).rev().find(|&g| cells.checked_pow(g).is_some_and(|c| c <= cap)).unwrap_or(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarpetData {
    pub spec: String,
    pub m: u32,
    pub ell: u32,
    pub k: u32,
    pub dimension_formula: f64,
    pub slice_formula: f64,
    pub box_counts: Vec<(u32, usize)>,
    pub box_slope: f64,
    pub slice_height: String,
    pub slice_counts: Vec<(u32, usize)>,
    pub slice_slope: f64,
    pub disintegration: Vec<DisintegrationRow>,
    pub doubling: Option<DoublingRow>,
    pub modulus: Vec<ModulusRow>,
    pub rho_infinity: RhoRow,
    pub alpha_trees: AlphaRow,
    pub lambda: LambdaRow,
    pub snowflake: SnowflakeRow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisintegrationRow {
    pub spec: String,
    pub generation: u32,
    pub cells_checked: usize,
    pub bands_checked: usize,
    pub cell_failures: usize,
    pub pushforward_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingRow {
    pub generation: u32,
    pub balls: usize,
    pub max_ratio: f64,
    pub constant_mass: bool,
    pub worst_neighbor_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusRow {
    pub generation: u32,
    pub value: f64,
    pub exact: Option<String>,
    pub sampled: bool,
    pub families_used: usize,
    pub total_families: f64,
    pub unit_density_optimal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoRow {
    pub generation: u32,
    pub densities: usize,
    /// Densities whose output has no larger integral.
    pub cost_not_increased: usize,
    /// Densities whose output stays admissible.
    pub admissible: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub trees: usize,
    pub depth: u32,
    pub worst_ratio: f64,
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub spec: String,
    pub depth: u32,
    pub selections: usize,
    pub tested: usize,
    pub failures: usize,
    pub worst_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnowflakeRow {
    pub segment_points: usize,
    pub box_counts: Vec<(u32, usize)>,
    pub slope: f64,
    pub sample_points: usize,
    pub dominated: bool,
    /// Largest `ratio / sqrt(t)` over the distortion records.
    pub worst_excess: f64,
}

/// Loads the suite's carpet, defaulting to the (4,2,2) example.
pub fn load_spec(cfg: &ExperimentConfig) -> Result<(SpecFile, CarpetSpec), LabError> {
    let file = match &cfg.spec {
        Some(p) => SpecFile::load(p)?,
        None => SpecFile::alternating(),
    };
    let mut spec = file.to_spec()?;
    if spec.max_generation < cfg.generation {
        spec.max_generation = cfg.generation;
    }
    Ok((file, spec))
}

/// First of `1/3, 1/5, 1/7, ...` with no finite base-`ell` expansion.
pub fn slice_height(ell: u32) -> Ratio<u64> {
    (3u64..)
        .step_by(2)
        .map(|q| Ratio::new(1, q))
        .find(|a| check_non_adic(*a, ell).is_ok())
        .expect("some odd denominator is coprime to ell")
}

fn fmt_interval(target: f64, tol: f64) -> String {
    format!("{target:.4} ± {tol}")
}

pub fn box_dimension(spec: &CarpetSpec, generation: u32) -> Result<(Vec<(u32, usize)>, f64), LabError> {
    let cloud = generation_cloud(spec, generation).context("building the carpet")?;
    let bc = box_count_dim(&cloud, 2, generation - 1).context("box counting the carpet")?;
    Ok((bc.counts, bc.slope))
}

/// Box counts of the fiber at height `a` down to about four cell widths.
pub fn slice_dimension(spec: &CarpetSpec, a: Ratio<u64>, generation: u32) -> Result<(Vec<(u32, usize)>, f64), LabError> {
    let cloud = fiber_cloud(spec, a, generation).context("building the fiber")?;
    let finest = (generation as f64 * (spec.m as f64).log2()).floor() as u32;
    let bc = box_count_dim(&cloud, 2, finest.saturating_sub(2).max(4)).context("box counting the fiber")?;
    Ok((bc.counts, bc.slope))
}

/// The two extra carpets of the exact measure check: random per-cell
/// patterns and the labeled affine example.
pub fn reference_specs() -> Vec<(String, CarpetSpec)> {
    vec![
        (
            "random (6,3,2) seed 7".into(),
            CarpetSpec::new(6, 3, 2, PatternSource::RandomFibers { seed: 7 }, 5).expect("valid random carpet"),
        ),
        ("affine (4,2)".into(), AffineGraphSpec::tent().carpet(5).expect("valid affine carpet")),
    ]
}

pub fn disintegration_rows(specs: &[(String, CarpetSpec)], generation: u32) -> Result<Vec<DisintegrationRow>, LabError> {
    specs
        .iter()
        .map(|(name, spec)| {
            let mut spec = spec.clone();
            let n = capped_generation(&spec, generation, DISINTEGRATION_CELL_CAP);
            spec.max_generation = spec.max_generation.max(n);
            let r = check_disintegration(&spec, n).context(format!("disintegration of {name}"))?;
            Ok(DisintegrationRow {
                spec: name.clone(),
                generation: n,
                cells_checked: r.cells_checked,
                bands_checked: r.bands_checked,
                cell_failures: r.cell_failures.len(),
                pushforward_failures: r.pushforward_failures.len(),
            })
        })
        .collect()
}

pub fn modulus_rows(spec: &CarpetSpec, generations: impl Iterator<Item = u32>) -> Result<Vec<ModulusRow>, LabError> {
    generations
        .map(|n| {
            let v = carpet_vertical_modulus(spec, n, &VerticalModulusConfig::default()).context(format!("vertical modulus at generation {n}"))?;
            Ok(ModulusRow {
                generation: n,
                value: v.value,
                exact: v.exact.as_ref().map(format_fraction),
                sampled: v.sampled,
                families_used: v.families_used,
                total_families: v.total_families,
                unit_density_optimal: v.unit_density_optimal,
            })
        })
        .collect()
}

/// Random admissible densities: integer multiples of `1/4` rescaled so the
/// cheapest family integral is exactly 1.
pub fn rho_contract(spec: &CarpetSpec, generation: u32, count: usize, seed: u64) -> Result<RhoRow, LabError> {
    let fams = enumerate_vertical_families(spec, generation).context("enumerating vertical families")?;
    let prob = carpet_problem(spec, generation, &fams, 1.0).context("building the modulus problem")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row = RhoRow { generation, densities: count, cost_not_increased: 0, admissible: 0 };
    for _ in 0..count {
        let raw: Vec<BigRational> = (0..prob.cells()).map(|_| BigRational::new(BigInt::from(rng.gen_range(1..=20)), BigInt::from(4))).collect();
        let scale = is_admissible(&raw, &prob).context("admissibility")?.min_integral.unwrap_or_else(BigRational::one);
        let rho: Vec<BigRational> = raw.iter().map(|r| r / &scale).collect();
        let out = rho_infinity(spec, generation, &rho).context("rho infinity")?;
        if prob.linear_cost(&out.rho) <= prob.linear_cost(&rho) {
            row.cost_not_increased += 1;
        }
        if is_admissible(&out.rho, &prob).context("admissibility")?.admissible {
            row.admissible += 1;
        }
    }
    Ok(row)
}

/// Trees for `alpha` spread over `(0.1, 0.95)`, each with `eps` at 0.9 of its bound.
pub fn alpha_trees(count: usize, depth: u32, tol: f64) -> AlphaRow {
    let mut row = AlphaRow { trees: count, depth, worst_ratio: 0.0, violations: 0 };
    for i in 0..count {
        let alpha = 0.1 + 0.85 * (i as f64 / count as f64);
        let t = random_gdc_tree(0.9 * gdc_epsilon(alpha), depth, i as u64);
        let space = HierarchicalSpace::from_spec(&t);
        let r = max_mass_ratio(&space, &alpha_measure(&space, alpha), alpha);
        row.worst_ratio = row.worst_ratio.max(r);
        if r > 1.0 + tol {
            row.violations += 1;
        }
    }
    row
}

/// `lambda_E(B(x,r) ∩ E) >= r / l^2` over the leftmost and `random` seeded selections.
pub fn carpet_lambda(name: &str, spec: &CarpetSpec, depth: u32, random: u64) -> Result<LambdaRow, LabError> {
    let mut spec = spec.clone();
    spec.max_generation = spec.max_generation.max(depth);
    let mut sels = vec![VerticalCantorSelection::leftmost(&spec, depth).context("leftmost selection")?];
    for s in 0..random {
        sels.push(VerticalCantorSelection::random(&spec, depth, s).context("random selection")?);
    }
    let mut row = LambdaRow { spec: name.into(), depth, selections: sels.len(), tested: 0, failures: 0, worst_ratio: f64::INFINITY };
    for sel in &sels {
        let r = check_lambda_lower_bound(&spec, sel);
        row.tested += r.tested;
        row.failures += r.failures;
        row.worst_ratio = row.worst_ratio.min(r.worst_ratio);
    }
    Ok(row)
}

/// Snowflaked unit segment: box dimension, and the square-root envelope of
/// the identity pairing on a seeded sample.
pub fn snowflake_check(points: usize, sample: usize, seed: u64, tol: f64) -> Result<SnowflakeRow, LabError> {
    let seg = PointCloud::new((0..=points).map(|i| [i as f64 / points as f64, 0.0]).collect(), 1.0 / points as f64)
        .context("segment")?;
    let s = snowflake(&seg, 0.5).context("snowflake")?;
    let bc = box_count_dim(&s, 3, 8).context("box counting the snowflake")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 2]> = (0..sample).map(|_| [rng.gen::<f64>(), 0.0]).collect();
    let x = PointCloud::new(pts, 1e-12).context("sample")?;
    let y = snowflake(&x, 0.5).context("snowflake sample")?;
    let prof = qs_distortion(&x, &y).context("distortion")?;
    let worst = prof.samples().iter().map(|&(t, r)| r / t.sqrt()).fold(0.0, f64::max);
    Ok(SnowflakeRow {
        segment_points: points + 1,
        box_counts: bc.counts,
        slope: bc.slope,
        sample_points: sample,
        dominated: prof.dominated_by(f64::sqrt, tol),
        worst_excess: worst,
    })
}

pub fn run_carpet_suite(cfg: &ExperimentConfig) -> Result<Report, LabError> {
    cfg.validate()?;
    let tol = &cfg.tolerances;
    let (file, spec) = load_spec(cfg)?;
    let label = file.label();
    let (dim, slice_dim) = dim_formula(spec.m, spec.ell, spec.k).context("dimension formula")?;
    let mut report = Report::new(&cfg.command, Some(cfg.clone()));

    let ((box_counts, box_slope), secs) = {
        let (r, s) = timed(|| box_dimension(&spec, cfg.generation));
        (r?, s)
    };
    report.record(
        CriterionResult {
            id: 1,
            name: format!("carpet box dimension, {label}, generation {}", cfg.generation),
            passed: (box_slope - dim).abs() <= tol.get("carpet_dim"),
            measured: format!("{box_slope:.4}"),
            target: fmt_interval(dim, tol.get("carpet_dim")),
        },
        secs,
    );

    let a = slice_height(spec.ell);
    let (r, secs) = timed(|| slice_dimension(&spec, a, cfg.generation));
    let (slice_counts, slice_slope) = r?;
    report.record(
        CriterionResult {
            id: 2,
            name: format!("fiber box dimension at a = {}/{}", a.numer(), a.denom()),
            passed: (slice_slope - slice_dim).abs() <= tol.get("carpet_slice_dim"),
            measured: format!("{slice_slope:.4}"),
            target: fmt_interval(slice_dim, tol.get("carpet_slice_dim")),
        },
        secs,
    );

    let mut specs = vec![(label.clone(), spec.clone())];
    specs.extend(reference_specs());
    let (r, secs) = timed(|| disintegration_rows(&specs, 5));
    let disintegration = r?;
    let bad: usize = disintegration.iter().map(|d| d.cell_failures + d.pushforward_failures).sum();
    let cells: usize = disintegration.iter().map(|d| d.cells_checked).sum();
    let gens: Vec<String> = disintegration.iter().map(|d| d.generation.to_string()).collect();
    report.record(
        CriterionResult {
            id: 3,
            name: format!("exact disintegration and pushforward, {} carpets to generations {}", specs.len(), gens.join("/")),
            passed: bad == 0,
            measured: format!("{bad} failures over {cells} cells"),
            target: "0 failures".into(),
        },
        secs,
    );

    let (r, secs) = timed(|| modulus_rows(&spec, 1..=2));
    let exact_rows = r?;
    let all_one = exact_rows.iter().all(|r| r.exact.as_deref() == Some("1") && r.unit_density_optimal);
    report.record(
        CriterionResult {
            id: 4,
            name: "vertical 1-modulus at generations 1 and 2".into(),
            passed: all_one,
            measured: exact_rows.iter().map(|r| r.exact.clone().unwrap_or_else(|| format!("~{}", r.value))).collect::<Vec<_>>().join(", "),
            target: "exactly 1, attained by the unit density".into(),
        },
        secs,
    );
    let mut modulus = exact_rows;
    let cells = (spec.k * spec.ell) as u64;
    modulus.extend(modulus_rows(&spec, (3..=4).filter(|&n| cells.pow(n) <= MODULUS_CELL_CAP))?);

    let rho_gen = if vertical_family_count(&spec, 2) <= FAMILY_CAP { 2 } else { 1 };
    let (r, secs) = timed(|| rho_contract(&spec, rho_gen, 100, 0));
    let rho = r?;
    report.record(
        CriterionResult {
            id: 5,
            name: format!("rho-infinity contract on random admissible densities at generation {rho_gen}"),
            passed: rho.cost_not_increased == rho.densities && rho.admissible == rho.densities,
            measured: format!("{} of {} cheaper or equal, {} admissible", rho.cost_not_increased, rho.densities, rho.admissible),
            target: "all".into(),
        },
        secs,
    );

    let (alpha, secs) = timed(|| alpha_trees(1000, 8, tol.get("float")));
    report.record(
        CriterionResult {
            id: 6,
            name: "alpha-measure bound on random trees".into(),
            passed: alpha.violations == 0,
            measured: format!("worst mass/diam^alpha {:.6} over {} trees", alpha.worst_ratio, alpha.trees),
            target: "<= 1 at every node".into(),
        },
        secs,
    );

    let (r, secs) = timed(|| snowflake_check(1 << 16, 200, 0, tol.get("float")));
    let snow = r?;
    report.record(
        CriterionResult {
            id: 14,
            name: "snowflaked segment".into(),
            passed: (snow.slope - 2.0).abs() <= tol.get("snowflake_dim") && snow.dominated,
            measured: format!("box slope {:.4}, worst ratio/sqrt(t) {:.6}", snow.slope, snow.worst_excess),
            target: format!("{} and dominated by t^(1/2)", fmt_interval(2.0, tol.get("snowflake_dim"))),
        },
        secs,
    );

    let doubling = {
        let n = capped_generation(&spec, 6, DISINTEGRATION_CELL_CAP);
        sample_balls(&spec, n, 200, 2..5, 0)
            .and_then(|balls| check_doubling(&spec, n, &balls).map(|r| (balls.len(), r)))
            .ok()
            .map(|(balls, r)| DoublingRow {
                generation: n,
                balls,
                max_ratio: r.max_ratio,
                constant_mass: r.constant_mass,
                worst_neighbor_ratio: r.worst_neighbor_ratio,
            })
    };
    let depth = (2..=6).rev().find(|&d| (spec.ell as u64).pow(d) <= 256).unwrap_or(2);
    let lambda = carpet_lambda(&label, &spec, depth, 10)?;

    report.carpet = Some(CarpetData {
        spec: label,
        m: spec.m,
        ell: spec.ell,
        k: spec.k,
        dimension_formula: dim,
        slice_formula: slice_dim,
        box_counts,
        box_slope,
        slice_height: format!("{}/{}", a.numer(), a.denom()),
        slice_counts,
        slice_slope,
        disintegration,
        doubling,
        modulus,
        rho_infinity: rho,
        alpha_trees: alpha,
        lambda,
        snowflake: snow,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_heights_avoid_adic_values() {
        assert_eq!(slice_height(2), Ratio::new(1, 3));
        assert_eq!(slice_height(3), Ratio::new(1, 5));
        assert_eq!(slice_height(6), Ratio::new(1, 5));
    }

    #[test]
    fn full_grid_has_dimension_two_and_unit_modulus() {
        let spec = SpecFile::Full { m: 3, ell: 2, max_generation: None }.to_spec().unwrap();
        let (_, slope) = box_dimension(&spec, 7).unwrap();
        assert!((slope - 2.0).abs() < 0.1, "{slope}");
        let rows = modulus_rows(&spec, 1..=2).unwrap();
        assert!(rows.iter().all(|r| r.exact.as_deref() == Some("1")));
    }

    #[test]
    fn twelve_three_four_dimension_line() {
        let (d, s) = dim_formula(12, 3, 4).unwrap();
        assert!((d - (1.0 + 4f64.ln() / 12f64.ln())).abs() < 1e-15);
        assert!((s - 4f64.ln() / 12f64.ln()).abs() < 1e-15);
    }
}
