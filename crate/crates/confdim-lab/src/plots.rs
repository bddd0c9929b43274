//! Plot data as CSV files. Every file is always written; sections missing
//! from the report leave only the header row.

use std::path::{Path, PathBuf};

use crate::brownian_suite::{envelope, median};
use crate::io::{create_dir, write_csv};
use crate::report::Report;
use crate::LabError;

pub const FILES: &[&str] = &[
    "carpet_box_counts.csv",
    "carpet_slice_counts.csv",
    "modulus.csv",
    "flat_envelope.csv",
    "slow_envelope.csv",
    "holder.csv",
    "graph_counts.csv",
    "brownian_slice_counts.csv",
];

fn log_rows(counts: &[(u32, usize)]) -> Vec<Vec<String>> {
    counts.iter().map(|&(n, c)| vec![n.to_string(), (c.max(1) as f64).log2().to_string()]).collect()
}

/// Median count per generation across seeds next to the envelope.
fn envelope_rows(per_seed: Vec<&[(u32, usize)]>, eps: f64) -> Vec<Vec<String>> {
    let mut ns: Vec<u32> = per_seed.iter().flat_map(|c| c.iter().map(|x| x.0)).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let m = median(per_seed.iter().filter_map(|c| c.iter().find(|x| x.0 == n)).map(|x| x.1 as f64).collect());
            vec![n.to_string(), m.to_string(), envelope(n, eps).to_string()]
        })
        .collect()
}

/// Seed-wise `(seed, n, log2 N)` rows.
fn seed_count_rows<'a>(rows: impl Iterator<Item = (u64, &'a [(u32, usize)])>) -> Vec<Vec<String>> {
    rows.flat_map(|(s, c)| log_rows(c).into_iter().map(move |r| [vec![s.to_string()], r].concat())).collect()
}

/// Writes the bundle into `dir` and returns the paths written.
pub fn emit_plots(report: &Report, dir: &Path) -> Result<Vec<PathBuf>, LabError> {
    create_dir(dir)?;
    let eps = report.config.as_ref().map_or(0.25, |c| c.tolerances.get("envelope_eps"));
    let carpet = report.carpet.as_ref();
    let brownian = report.brownian.as_ref();
    let seeds = brownian.map(|b| b.seeds.as_slice()).unwrap_or_default();
    let mut out = Vec::new();
    let mut put = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<(), LabError> {
        let p = dir.join(name);
        write_csv(&p, header, rows)?;
        out.push(p);
        Ok(())
    };

    put("carpet_box_counts.csv", &["n", "log2N"], carpet.map(|c| log_rows(&c.box_counts)).unwrap_or_default())?;
    put("carpet_slice_counts.csv", &["n", "log2N"], carpet.map(|c| log_rows(&c.slice_counts)).unwrap_or_default())?;
    put(
        "modulus.csv",
        &["generation", "value", "exact", "sampled"],
        carpet
            .map(|c| {
                c.modulus
                    .iter()
                    .map(|m| vec![m.generation.to_string(), m.value.to_string(), m.exact.clone().unwrap_or_default(), m.sampled.to_string()])
                    .collect()
            })
            .unwrap_or_default(),
    )?;
    put("flat_envelope.csv", &["n", "count", "bound"], envelope_rows(seeds.iter().map(|s| s.flat_counts.as_slice()).collect(), eps))?;
    put("slow_envelope.csv", &["n", "count", "bound"], envelope_rows(seeds.iter().map(|s| s.slow_counts.as_slice()).collect(), eps))?;
    put("holder.csv", &["seed", "exponent"], seeds.iter().map(|s| vec![s.seed.to_string(), s.holder.to_string()]).collect())?;
    put("graph_counts.csv", &["seed", "n", "log2N"], seed_count_rows(seeds.iter().map(|s| (s.seed, s.graph_counts.as_slice()))))?;
    put("brownian_slice_counts.csv", &["seed", "n", "log2N"], seed_count_rows(seeds.iter().map(|s| (s.seed, s.slice_counts.as_slice()))))?;
    Ok(out)
}
