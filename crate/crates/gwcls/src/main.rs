use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gwcls::cls::estimate_all;
use gwcls::config::{experiment_config, model_choice, ConfigMap};
use gwcls::harness::{
    read_trajectories_csv, run_experiment, write_estimates_csv, write_limit_rows_csv,
    write_trajectories_csv, LimitRow,
};
use gwcls::limits::{
    joint_limit_sample, limit_ab_degenerate_sigma2, limit_rho_degenerate_sigma2, simulate_y,
    LimitSample, DEFAULT_STEPS,
};
use gwcls::model::ModelSpec;
use gwcls::moments::{moment_growth, GrowthTarget};
use gwcls::simulate::{simulate, RngStream};

#[derive(Parser)]
#[command(name = "gwcls", version, about = "Simulation and CLS inference for 2-type critical branching processes with immigration")]
struct Cli {
    /// Worker thread count (default: one per core). Results do not depend
    /// on this setting.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories; emits CSV rows replica,k,X1,X2,U,V,M1,M2
    Simulate(SimulateArgs),
    /// Estimate parameters per replica; one CSV row each
    Estimate(EstimateArgs),
    /// Sample the limit laws; emits CSV of the path functionals
    Limit(LimitArgs),
    /// Check Monte Carlo moment-growth exponents against theory
    VerifyMoments(VerifyMomentsArgs),
    /// Full finite-sample vs limit-law experiment with pass/fail checks
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Config file (flat key = value lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model: general | unit-total | equal-pair | equal-pair-null | custom
    #[arg(long)]
    model: Option<String>,
    /// Offspring-mean parameter for the general and unit-total families
    #[arg(long)]
    alpha: Option<f64>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<(ConfigMap, ModelSpec)> {
        let map = match &self.config {
            Some(path) => ConfigMap::load(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => ConfigMap::empty(),
        };
        let choice = model_choice(&map, self.model.as_deref(), self.alpha)?;
        let spec = choice.build()?;
        Ok((map, spec))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Trajectory length (number of transitions)
    #[arg(short, long)]
    n: Option<usize>,
    /// Number of independent replicas
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Trajectory CSV to estimate from (simulates inline when omitted)
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LimitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Euler grid steps on [0, 1]
    #[arg(long)]
    steps: Option<usize>,
    /// Number of independent paths
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyMomentsArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Moment sequence: u (total), v (difference), m (residual norm), x (state norm)
    #[arg(long)]
    target: Option<String>,
    /// Moment order (for v: the half-order j in V^(2j))
    #[arg(long)]
    order: Option<u32>,
    /// Comma-separated time indices
    #[arg(long)]
    ks_points: Option<String>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path prefix for the report files
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Slope acceptance band around the theoretical growth exponent.
const GROWTH_BAND: f64 = 0.2;

fn write_output(out: &Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::write(path, bytes)?;
        }
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let (map, spec) = args.model.resolve()?;
    let n = match args.n {
        Some(n) => n,
        None => map.value("n")?.unwrap_or(1000),
    };
    let replicas = match args.replicas {
        Some(r) => r,
        None => map.value("replicas")?.unwrap_or(1),
    };
    let seed = match args.seed {
        Some(s) => s,
        None => map.value("seed")?.unwrap_or(1),
    };
    let trajectories = (0..replicas as u64)
        .map(|stream| simulate(&spec, n, seed, stream))
        .collect::<Result<Vec<_>, _>>()?;
    let mut buf = Vec::new();
    write_trajectories_csv(&mut buf, &trajectories)?;
    write_output(&args.out, &buf)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_estimate(args: &EstimateArgs) -> Result<ExitCode> {
    let (map, spec) = args.model.resolve()?;
    let trajectories = match &args.input {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading trajectories {}", path.display()))?;
            read_trajectories_csv(&spec, &text)?
        }
        None => {
            let n = match args.n {
                Some(n) => n,
                None => map.value("n")?.unwrap_or(1000),
            };
            let replicas = match args.replicas {
                Some(r) => r,
                None => map.value("replicas")?.unwrap_or(1),
            };
            let seed = match args.seed {
                Some(s) => s,
                None => map.value("seed")?.unwrap_or(1),
            };
            (0..replicas as u64)
                .map(|stream| simulate(&spec, n, seed, stream))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    let results: Vec<_> = trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| (i as u64, estimate_all(t, spec.m_eps())))
        .collect();
    let mut buf = Vec::new();
    write_estimates_csv(&mut buf, &results)?;
    write_output(&args.out, &buf)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_limit(args: &LimitArgs) -> Result<ExitCode> {
    let (map, spec) = args.model.resolve()?;
    let steps = match args.steps {
        Some(s) => s,
        None => map.value("steps")?.unwrap_or(DEFAULT_STEPS),
    };
    let paths = match args.paths {
        Some(p) => p,
        None => map.value("paths")?.unwrap_or(1000),
    };
    let seed = match args.seed {
        Some(s) => s,
        None => map.value("seed")?.unwrap_or(1),
    };
    let rows: Vec<LimitRow> = (0..paths as u64)
        .map(|i| {
            let mut rng = RngStream::new(seed, i);
            let path = simulate_y(spec.drift(), spec.q_total(), steps, &mut rng);
            let sample = LimitSample::from_path(&path);
            let joint = joint_limit_sample(&spec, &path)?;
            Ok(LimitRow { path: i, sample, joint })
        })
        .collect::<Result<_>>()?;
    let mut buf = Vec::new();
    writeln!(buf, "# model = {}, regime = {}", spec.name(), spec.regime())?;
    if let Ok(s2) = limit_rho_degenerate_sigma2(&spec) {
        writeln!(buf, "# sigma2_rho_degenerate = {s2}")?;
    }
    if let Ok(s2) = limit_ab_degenerate_sigma2(&spec) {
        writeln!(buf, "# sigma2_ab_degenerate = {s2}")?;
    }
    write_limit_rows_csv(&mut buf, &rows)?;
    write_output(&args.out, &buf)?;
    Ok(ExitCode::SUCCESS)
}

fn parse_target(name: &str, order: u32) -> Result<GrowthTarget> {
    Ok(match name {
        "u" => GrowthTarget::TotalMoment { order },
        "v" => GrowthTarget::DiffEvenMoment { half_order: order },
        "m" => GrowthTarget::ResidualNormMoment { order },
        "x" => GrowthTarget::StateNormMoment { order },
        other => bail!("unknown target '{other}' (expected u, v, m, or x)"),
    })
}

fn cmd_verify_moments(args: &VerifyMomentsArgs) -> Result<ExitCode> {
    let (map, spec) = args.model.resolve()?;
    let target_name = match &args.target {
        Some(t) => t.clone(),
        None => map.get("target").unwrap_or("u").to_string(),
    };
    let order = match args.order {
        Some(o) => o,
        None => map.value("order")?.unwrap_or(2),
    };
    let target = parse_target(&target_name, order)?;
    let ks: Vec<usize> = match &args.ks_points {
        Some(text) => text
            .split(',')
            .map(|s| s.trim().parse().context("bad ks_points entry"))
            .collect::<Result<_>>()?,
        None => map
            .list("ks_points")?
            .unwrap_or_else(|| vec![64, 128, 256, 512]),
    };
    let replicas = match args.replicas {
        Some(r) => r,
        None => map.value("replicas")?.unwrap_or(10_000),
    };
    let seed = match args.seed {
        Some(s) => s,
        None => map.value("seed")?.unwrap_or(1),
    };

    let report = moment_growth(&spec, target, &ks, replicas, seed)?;
    let mut buf = Vec::new();
    writeln!(buf, "k,estimate")?;
    for (k, est) in report.ks.iter().zip(&report.estimates) {
        writeln!(buf, "{k},{est}")?;
    }
    writeln!(
        buf,
        "# target = {}, fitted_slope = {}, target_slope = {}, band = {GROWTH_BAND}",
        report.target.label(),
        report.fitted_slope,
        report.target_slope
    )?;
    let pass = report.within_band(GROWTH_BAND);
    writeln!(
        buf,
        "{}: slope {} within {GROWTH_BAND} of {}",
        if pass { "PASS" } else { "FAIL" },
        report.fitted_slope,
        report.target_slope
    )?;
    write_output(&args.out, &buf)?;
    if args.out.is_some() {
        println!(
            "{}: {} slope {} (target {})",
            if pass { "PASS" } else { "FAIL" },
            report.target.label(),
            report.fitted_slope,
            report.target_slope
        );
    }
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<ExitCode> {
    let map = match &args.model.config {
        Some(path) => ConfigMap::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ConfigMap::empty(),
    };
    let choice = model_choice(&map, args.model.model.as_deref(), args.model.alpha)?;
    let mut config = experiment_config(&map, choice)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_path = Some(out.clone());
    }

    let output = run_experiment(&config)?;
    if let Some(prefix) = &config.output_path {
        let written = output.write_files(prefix)?;
        for path in written {
            eprintln!("wrote {}", path.display());
        }
    }
    for line in output.check_lines() {
        println!("{line}");
    }
    Ok(if output.report.all_checks_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring worker pool")?;
    }
    match &cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Limit(args) => cmd_limit(args),
        Command::VerifyMoments(args) => cmd_verify_moments(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}
