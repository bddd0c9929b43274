use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use confdim::brownian::{decompose, simulate, SimConfig, Stop};
use confdim::modulus::{carpet_problem, enumerate_vertical_families, mod_p, SolverOptions};
use confdim_lab::brownian_suite::run_brownian_suite;
use confdim_lab::carpet_suite::run_carpet_suite;
use confdim_lab::config::{parse_seeds, ExperimentConfig, SpecFile};
use confdim_lab::io::{create_dir, read_json, write_csv, write_decomposition_json, write_json, write_path_csv, ProblemFile, SolutionRecord};
use confdim_lab::plots::emit_plots;
use confdim_lab::report::Report;

#[derive(Parser)]
#[command(name = "confdim", version, about = "Carpet and Brownian graph experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dimension, measure, modulus and snowflake checks on a carpet.
    CarpetSuite(SuiteArgs),
    /// Hitting, local time, dimension, decomposition and lambda checks over seeds.
    BrownianSuite(SuiteArgs),
    /// Solves a modulus problem from a file, or the vertical problem of a carpet.
    Modulus(ModulusArgs),
    /// Writes plot CSVs from a report.
    EmitPlots {
        report: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SuiteArgs {
    /// Carpet spec JSON. Defaults to the (4,2,2) pattern.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Seeds such as `0..100` or `1,5,9`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    gen: Option<u32>,
    /// Output directory for the report and data files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tolerance override `name=value`; repeatable.
    #[arg(long = "tol")]
    tol: Vec<String>,
    /// Also dump the first seed's path to T_6 and its decomposition on the partition grid.
    #[arg(long)]
    dump: bool,
}

#[derive(Args)]
struct ModulusArgs {
    #[arg(long, conflicts_with = "spec")]
    problem: Option<PathBuf>,
    #[arg(long, requires = "gen")]
    spec: Option<PathBuf>,
    #[arg(long)]
    gen: Option<u32>,
    /// Exponent; overrides the one in the problem file.
    #[arg(long)]
    p: Option<f64>,
    /// Write the solution here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn config(mut cfg: ExperimentConfig, a: &SuiteArgs) -> anyhow::Result<ExperimentConfig> {
    if let Some(s) = &a.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(g) = a.gen {
        cfg.generation = g;
    }
    for t in &a.tol {
        cfg.tolerances.set(t)?;
    }
    cfg.out = a.out.clone();
    cfg.validate()?;
    Ok(cfg)
}

fn seed_rows(report: &Report) -> Vec<Vec<String>> {
    let Some(b) = &report.brownian else { return Vec::new() };
    b.seeds
        .iter()
        .map(|s| {
            vec![
                s.seed.to_string(),
                s.positive_levels.to_string(),
                s.holder.to_string(),
                s.local_time[0].to_string(),
                s.local_time[1].to_string(),
                s.graph_slope.to_string(),
                s.slice_slope.to_string(),
                s.mass_constant.to_string(),
                s.partition_passed.to_string(),
                s.steep_fraction.to_string(),
                s.lambda_passed.to_string(),
                s.lambda_tested.to_string(),
            ]
        })
        .collect()
}

fn write_outputs(report: &Report, cfg: &ExperimentConfig, dump: bool, out: &Path) -> anyhow::Result<()> {
    create_dir(out)?;
    write_json(&out.join("report.json"), report)?;
    if report.brownian.is_some() {
        let header = [
            "seed", "positive_levels", "holder", "local_time_coarse", "local_time_fine", "graph_slope", "slice_slope", "mass_constant",
            "partition_passed", "steep_fraction", "lambda_passed", "lambda_tested",
        ];
        write_csv(&out.join("seed_stats.csv"), &header, seed_rows(report))?;
        if dump {
            let seed = cfg.seeds[0];
            let b = &cfg.brownian;
            let p = simulate(&SimConfig::new(seed, b.partition_generation, Stop::Level(6.0)).focus(-0.05, 1.05)).context("simulating the dump path")?;
            write_path_csv(&out.join(format!("path_{seed}.csv")), &p)?;
            let dec = decompose(&p, b.partition_depth).context("decomposing the dump path")?;
            write_decomposition_json(&out.join(format!("decomposition_{seed}.json")), &dec)?;
        }
    }
    Ok(())
}

fn suite(cfg: ExperimentConfig, a: &SuiteArgs, brownian: bool) -> anyhow::Result<bool> {
    let cfg = config(cfg, a)?;
    let report = if brownian { run_brownian_suite(&cfg)? } else { run_carpet_suite(&cfg)? };
    println!("{}", report.summary());
    if let Some(out) = &cfg.out {
        write_outputs(&report, &cfg, a.dump, out)?;
    }
    Ok(report.all_passed())
}

fn modulus(a: &ModulusArgs) -> anyhow::Result<()> {
    let mut prob = match (&a.problem, &a.spec) {
        (Some(path), _) => read_json::<ProblemFile>(path)?.to_problem()?,
        (None, Some(path)) => {
            let n = a.gen.expect("clap requires --gen");
            let mut spec = SpecFile::load(path)?.to_spec()?;
            spec.max_generation = spec.max_generation.max(n);
            let fams = enumerate_vertical_families(&spec, n)?;
            carpet_problem(&spec, n, &fams, a.p.unwrap_or(1.0))?
        }
        (None, None) => anyhow::bail!("either --problem or --spec is required"),
    };
    if let Some(p) = a.p {
        prob = prob.with_exponent(p)?;
    }
    let sol = mod_p(&prob, &SolverOptions::default())?;
    let rec = SolutionRecord::new(prob.p, &sol);
    match &a.out {
        Some(path) => write_json(path, &rec)?,
        None => println!("{}", serde_json::to_string_pretty(&rec)?),
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::CarpetSuite(a) => suite(ExperimentConfig::carpet(a.spec.clone()), &a, false),
        Command::BrownianSuite(a) => suite(ExperimentConfig::brownian((0..100).collect()), &a, true),
        Command::Modulus(a) => modulus(&a).map(|_| true),
        Command::EmitPlots { report, out } => {
            let r: Report = read_json(&report)?;
            for p in emit_plots(&r, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
