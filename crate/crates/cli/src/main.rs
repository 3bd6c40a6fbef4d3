//! `acdc-se`: power flow, telemetry synthesis, injection-model training,
//! single estimates and Monte-Carlo benchmarks from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acdc_se::bench::{estimate_with, run_montecarlo, EstimateOptions, MethodSpec, Scenario};
use acdc_se::error::{Error, Result};
use acdc_se::grid::{cases, load_grid, GridModel};
use acdc_se::injection::{gen_load_profiles, train_injection_model, InjectionModel, LoadProfiles, ProfileParams, TrainConfig};
use acdc_se::powerflow::{solve_powerflow, InjectionProfile, PowerFlowOptions};
use acdc_se::seed;
use acdc_se::telemetry::{inject_bad_data, simulate_measurements, BadDataCase, MeasurementSet, Placement, ScheduleConfig, TargetSelector};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "acdc-se", version, about = "State estimation for hybrid AC/DC distribution grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the power flow and write the state.
    Pf(PfArgs),
    /// Solve the power flow and synthesize noisy telemetry.
    Simulate(SimulateArgs),
    /// Train the injection model on synthetic history.
    Train(TrainArgs),
    /// Run one estimator on a measurement file.
    Estimate(EstimateArgs),
    /// Run a Monte-Carlo scenario.
    Benchmark(BenchmarkArgs),
    /// Write synthetic hourly load and PV profiles.
    GenProfiles(GenProfilesArgs),
}

#[derive(Args)]
struct GridArg {
    /// Grid file, or the name of a bundled case (e.g. case33_hybrid).
    #[arg(long)]
    grid: String,
}

/// Operating point: an injection file, an hour of synthetic profiles, or
/// the grid's nominal injections.
#[derive(Args)]
struct OperatingPoint {
    /// Injection CSV (`node_id,P,Q`).
    #[arg(long, conflicts_with = "hour")]
    profile: Option<PathBuf>,
    /// Hour of the synthetic profiles drawn from `--seed`.
    #[arg(long)]
    hour: Option<usize>,
}

#[derive(Args)]
struct PfArgs {
    #[command(flatten)]
    grid: GridArg,
    #[command(flatten)]
    point: OperatingPoint,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// State CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlacementArg {
    Default,
    Full,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    grid: GridArg,
    #[command(flatten)]
    point: OperatingPoint,
    #[arg(long)]
    seed: u64,
    /// Measurement CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the true state here.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Snapshot time in seconds; smart meters report on the hour.
    #[arg(long, default_value_t = 900.0)]
    time: f64,
    #[arg(long, value_enum, default_value = "default")]
    placement: PlacementArg,
    /// Bad-data case (1, 2 or 3) applied to the telemetry.
    #[arg(long)]
    case: Option<u8>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    grid: GridArg,
    #[arg(long)]
    seed: u64,
    /// Model JSON.
    #[arg(long)]
    out: PathBuf,
    /// History to learn from; generated from `--seed` when absent.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, default_value_t = 365)]
    days: usize,
    /// Power-flow trials in the training set.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Args)]
struct EstimateArgs {
    /// drse, dwls or cwls, optionally with _dnn, _pseudo or _pseudoNN.
    #[arg(long, value_parser = parse_method)]
    method: MethodSpec,
    #[command(flatten)]
    grid: GridArg,
    /// Measurement CSV.
    #[arg(long)]
    meas: PathBuf,
    /// Estimated state CSV.
    #[arg(long)]
    out: PathBuf,
    /// Boundary trace CSV; defaults to `<out>` with a `_trace` suffix.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Injection model, needed by the _dnn and _pseudo methods.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Keep every row in the WLS methods.
    #[arg(long)]
    no_rejection: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Master seed; overrides the scenario's.
    #[arg(long)]
    seed: u64,
    /// Overrides the scenario's run count.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenProfilesArgs {
    #[command(flatten)]
    grid: GridArg,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 365)]
    days: usize,
    /// Profile CSV.
    #[arg(long)]
    out: PathBuf,
}

fn parse_method(s: &str) -> std::result::Result<MethodSpec, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn grid_of(arg: &GridArg) -> Result<GridModel> {
    let name = arg.grid.strip_prefix("bundled:").unwrap_or(&arg.grid);
    if !Path::new(&arg.grid).exists() {
        if let Some((_, g)) = cases::bundled().into_iter().find(|(n, _)| *n == name) {
            return Ok(g);
        }
    }
    load_grid(&arg.grid)
}

fn injections(grid: &GridModel, point: &OperatingPoint, seed: u64) -> Result<InjectionProfile> {
    match (&point.profile, point.hour) {
        (Some(p), _) => InjectionProfile::load(p),
        (None, Some(h)) => {
            let profiles = gen_load_profiles(grid, h / 24 + 1, &ProfileParams::default(), seed)?;
            Ok(profiles.at(h))
        }
        (None, None) => Ok(InjectionProfile::nominal(grid)),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn pf(a: PfArgs) -> Result<()> {
    let grid = grid_of(&a.grid)?;
    let inj = injections(&grid, &a.point, a.seed)?;
    let sol = solve_powerflow(&grid, &inj, &PowerFlowOptions::default())?;
    sol.state.write_csv(&grid, create(&a.out)?)?;
    println!("power flow solved in {} outer iterations", sol.outer_iterations);
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let grid = grid_of(&a.grid)?;
    let inj = injections(&grid, &a.point, seed::derive(a.seed, 0))?;
    let truth = solve_powerflow(&grid, &inj, &PowerFlowOptions::default())?.state;
    let placement = match a.placement {
        PlacementArg::Default => Placement::default_for(&grid),
        PlacementArg::Full => Placement::full(&grid),
    };
    let mut set = simulate_measurements(&grid, &truth, &placement, &ScheduleConfig::default(), a.time, seed::derive(a.seed, 1))?;
    if let Some(c) = a.case {
        let case = BadDataCase::from_number(c)
            .ok_or_else(|| Error::Validation(format!("bad-data case must be 1, 2 or 3, got {c}")))?;
        set = inject_bad_data(&set, &grid, case, TargetSelector::default(), seed::derive(a.seed, 2))?;
    }
    set.write_csv(create(&a.out)?)?;
    if let Some(p) = &a.truth {
        truth.write_csv(&grid, create(p)?)?;
    }
    println!("{} measurements at t = {} s", set.len(), a.time);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let grid = grid_of(&a.grid)?;
    let history = match &a.profiles {
        Some(p) => LoadProfiles::load(p)?,
        None => gen_load_profiles(&grid, a.days, &ProfileParams::default(), seed::derive(a.seed, 0))?,
    };
    let mut cfg = TrainConfig::default();
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    let (model, set, report) = train_injection_model(&grid, &history, &cfg, seed::derive(a.seed, 1))?;
    model.save(&a.out)?;
    println!(
        "trained on {} trials ({} dropped), final training loss {:.4e}",
        set.z.len(),
        set.dropped.len(),
        report.final_train_loss()
    );
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let spec = a.method;
    let grid = grid_of(&a.grid)?;
    let set = MeasurementSet::load(&a.meas)?;
    let model = a.model.as_ref().map(InjectionModel::load).transpose()?;
    let time = set.iter().map(|m| m.timestamp).fold(0.0, f64::max);
    let mut opts = EstimateOptions { time, ..Default::default() };
    if a.no_rejection {
        opts.lnr = None;
    }
    let est = estimate_with(&grid, &set, spec, model.as_ref(), &opts)?;
    est.state.write_csv(&grid, create(&a.out)?)?;
    let trace = a.trace.unwrap_or_else(|| {
        let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("estimate");
        a.out.with_file_name(format!("{stem}_trace.csv"))
    });
    est.write_trace_csv(create(&trace)?)?;
    println!(
        "{spec}: {} after {} iterations, final mismatch {:.3e}, {} rows removed, {:?}",
        if est.converged { "converged" } else { "not converged" },
        est.iterations,
        est.final_mismatch(),
        est.removed.len(),
        est.wall_time
    );
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let mut sc = Scenario::load(&a.scenario)?;
    sc.seed = a.seed;
    if let Some(r) = a.runs {
        sc.runs = r;
    }
    if a.workers.is_some() {
        sc.workers = a.workers;
    }
    sc.validate()?;
    let base = a.scenario.parent().map(Path::to_path_buf);
    let table = run_montecarlo(&sc, base.as_deref())?;
    std::fs::create_dir_all(&a.out)?;
    let grid = sc.load_grid(base.as_deref())?;
    table.write_all(&grid, &a.out)?;
    for row in &table.aggregate {
        println!(
            "{:<16} runs {:>4} failed {:>3}  V AAE {:.3e}  θ AAE {:.4}°  DC V MAE {:.3e}",
            row.method, row.runs, row.failed, row.v_ac_aae, row.theta_ac_aae_deg, row.v_dc_mae
        );
    }
    Ok(())
}

fn gen_profiles(a: GenProfilesArgs) -> Result<()> {
    let grid = grid_of(&a.grid)?;
    let profiles = gen_load_profiles(&grid, a.days, &ProfileParams::default(), a.seed)?;
    profiles.save(&a.out)?;
    println!("{} days of hourly profiles for {} nodes", profiles.days(), profiles.nodes.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Pf(a) => pf(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Estimate(a) => estimate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::GenProfiles(a) => gen_profiles(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
