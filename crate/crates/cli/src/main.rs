use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use qrelax::diagnostics::{bounding_box_series, classify_confinement, GridSpec};
use qrelax::ensemble::{
    born_ks, reference_density, run_ensemble, sample_initial, EnsembleState, InitialDistribution,
};
use qrelax::experiments::{
    checkpoints_for, find_scenario, published_phase_set, random_phase_set, run_scenario, scenario_catalog,
    scenario_dir, PhaseSet, RunConfig, Scenario,
};
use qrelax::fmt::sig;
use qrelax::integrator::{integrate_trajectory, verify_convergence, IntegratorConfig};
use qrelax::io;
use qrelax::plot::{density_svg, trajectory_svg, PlotSpec};
use qrelax::wavefunction::{Mode, WaveFunctionSpec, FOUR_MODES, PERIOD, SIX_MODES};

const USAGE: u8 = 1;
const FAILURE: u8 = 2;
const MISMATCH: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "qrelax",
    version,
    about = "Pilot-wave trajectories and quantum relaxation in a 2-D oscillator"
)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "QRELAX_OUT", default_value = "qrelax-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one trajectory and classify it.
    Trajectory(TrajectoryArgs),
    /// Run a catalog scenario or scenario file.
    Sweep(SweepArgs),
    /// Evolve a particle ensemble and record the coarse-grained H-function.
    Ensemble(EnsembleArgs),
}

#[derive(Debug, Args)]
struct SpecArgs {
    /// Catalog scenario name or scenario TOML file.
    #[arg(long, conflicts_with_all = ["spec", "epsilon"])]
    scenario: Option<String>,
    /// Wave function file (modes, epsilon, theta).
    #[arg(long, conflicts_with = "epsilon")]
    spec: Option<PathBuf>,
    /// Amplitude of every excited mode; phases from --phases or --phase-seed.
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    /// Published phase set: fn3, fn4, fn5, fn7 or fn8.
    #[arg(long, default_value = "fn3", conflicts_with = "phase_seed")]
    phases: String,
    /// Random phases from this seed instead of a published set.
    #[arg(long)]
    phase_seed: Option<u64>,
    /// Mode set for --phase-seed: 4 or 6.
    #[arg(long, default_value_t = 4)]
    modes: usize,
}

#[derive(Debug, Args)]
struct TrajectoryArgs {
    #[command(flatten)]
    source: SpecArgs,
    /// Start point as Q1,Q2.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_point)]
    start: [f64; 2],
    /// Horizon in periods (default: the scenario's).
    #[arg(long)]
    periods: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    abstol: f64,
    /// Also write an SVG plot.
    #[arg(long)]
    svg: bool,
    /// Repeat at abstol/10 and compare final positions.
    #[arg(long)]
    verify: bool,
    /// Print the width/height series at the checkpoints.
    #[arg(long)]
    checkpoints: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Catalog scenario name or scenario TOML file.
    #[arg(long, required_unless_present = "list")]
    scenario: Option<String>,
    /// Cut the scenario to this many periods.
    #[arg(long)]
    periods: Option<u32>,
    /// List catalog scenarios.
    #[arg(long)]
    list: bool,
    /// Exit with status 3 unless every expectation holds.
    #[arg(long)]
    expect: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 1e-8)]
    abstol: f64,
    #[arg(long)]
    no_svg: bool,
    /// Also write CSVs for every cohort member.
    #[arg(long)]
    cohort_csv: bool,
}

#[derive(Debug, Args)]
struct EnsembleArgs {
    #[command(flatten)]
    source: SpecArgs,
    /// ground, disk[:R[,C1,C2]], gaussian:SIGMA[,C1,C2] or born.
    #[arg(long, default_value = "disk:1")]
    kind: String,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5.0)]
    periods: f64,
    /// Snapshot interval in periods.
    #[arg(long, default_value_t = 1.0)]
    every: f64,
    /// Cells per axis of the H-function grid.
    #[arg(long, default_value_t = 30)]
    grid: usize,
    #[arg(long, default_value_t = 4.0)]
    half_width: f64,
    #[arg(long, default_value_t = 1e-8)]
    abstol: f64,
    #[arg(long)]
    workers: Option<usize>,
    /// Render density heat maps.
    #[arg(long)]
    plot: bool,
}

#[derive(Debug)]
enum Exit {
    Usage(String),
    Failure(anyhow::Error),
    Mismatch,
}

impl From<anyhow::Error> for Exit {
    fn from(e: anyhow::Error) -> Self {
        Exit::Failure(e)
    }
}

fn usage(msg: impl Into<String>) -> Exit {
    Exit::Usage(msg.into())
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts[..] {
        [a, b] => {
            let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"));
            let q = [p(a)?, p(b)?];
            if q.iter().all(|v| v.is_finite()) {
                Ok(q)
            } else {
                Err("coordinates must be finite".into())
            }
        }
        _ => Err(format!("expected Q1,Q2, got '{s}'")),
    }
}

fn load_scenario(name: &str) -> Result<Scenario, Exit> {
    let path = Path::new(name);
    if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return Scenario::from_toml(&text).map_err(|e| usage(e.to_string()));
    }
    find_scenario(name).map_err(|e| usage(format!("{e}; try `qrelax sweep --list`")))
}

fn resolve_spec(a: &SpecArgs) -> Result<(WaveFunctionSpec, Option<Scenario>), Exit> {
    if let Some(name) = &a.scenario {
        let s = load_scenario(name)?;
        return Ok((s.spec.clone(), Some(s)));
    }
    if let Some(path) = &a.spec {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return WaveFunctionSpec::from_text(&text).map(|s| (s, None)).map_err(|e| usage(e.to_string()));
    }
    let Some(eps) = a.epsilon else {
        return Err(usage("one of --scenario, --spec or --epsilon is required"));
    };
    let set = match a.phase_seed {
        Some(seed) => match a.modes {
            4 => random_phase_set(&FOUR_MODES, seed),
            6 => random_phase_set(&SIX_MODES, seed),
            m => return Err(usage(format!("--modes must be 4 or 6, got {m}"))),
        },
        None => published_phase_set(&a.phases)
            .ok_or_else(|| usage(format!("unknown phase set '{}'", a.phases)))?,
    };
    let spec = if a.phase_seed.is_some() {
        let amps: Vec<f64> = set.labels.iter().map(|m| if *m == Mode::GROUND { 1.0 } else { eps }).collect();
        WaveFunctionSpec::from_parts(&set.labels, &amps, &set.theta)
    } else {
        PhaseSet::homogeneous(&set, eps)
    };
    spec.map(|s| (s, None)).map_err(|e| usage(e.to_string()))
}

fn integrator(abstol: f64) -> Result<IntegratorConfig, Exit> {
    let cfg = IntegratorConfig::default().with_abstol(abstol);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn coord(x: f64) -> String {
    sig(x, 6)
}

fn cmd_trajectory(a: &TrajectoryArgs, out: &Path) -> Result<(), Exit> {
    let (spec, scenario) = resolve_spec(&a.source)?;
    let periods = match (a.periods, &scenario) {
        (Some(p), _) => p,
        (None, Some(s)) => s.horizon_periods as f64,
        (None, None) => return Err(usage("--periods is required without --scenario")),
    };
    if !(periods.is_finite() && periods > 0.0) {
        return Err(usage(format!("--periods must be positive, got {periods}")));
    }
    let cfg = integrator(a.abstol)?;
    let horizon = periods * PERIOD;
    cfg.sample_count(horizon).map_err(|e| usage(e.to_string()))?;

    let traj = integrate_trajectory(&spec, a.start, horizon, &cfg)
        .map_err(|e| Exit::Failure(anyhow::anyhow!("integration failed: {e}")))?;
    let stem = format!("traj_{}_{}_{}T", coord(a.start[0]), coord(a.start[1]), coord(periods));
    let csv = out.join(format!("{stem}.csv"));
    io::write_file(&csv, &io::trajectory_csv(&traj, &spec, &cfg)).context("writing trajectory")?;
    println!("wrote {}", csv.display());

    let series = bounding_box_series(&traj, &checkpoints_for(periods)).context("bounding boxes")?;
    let verdict = classify_confinement(&series).context("classification")?;
    if a.svg {
        let plot = PlotSpec {
            annotation: vec![
                format!(
                    "start ({}, {})  {}T  verdict {}",
                    a.start[0],
                    a.start[1],
                    coord(periods),
                    verdict.label
                ),
                format!("spec {}", spec.fingerprint()),
            ],
            ..PlotSpec::default()
        };
        let path = out.join(format!("{stem}.svg"));
        io::write_file(&path, &trajectory_svg(&traj, &plot)).context("writing plot")?;
        println!("wrote {}", path.display());
    }
    if a.checkpoints {
        println!("{:>10} {:>10} {:>10}", "periods", "width", "height");
        for ((c, w), h) in series.checkpoints.iter().zip(&series.widths).zip(&series.heights) {
            println!("{:>10} {:>10} {:>10}", sig(c / PERIOD, 6), sig(*w, 5), sig(*h, 5));
        }
    }
    let end = traj.final_position();
    println!(
        "verdict: {} (tail growth {}%, width {}, height {}, final ({}, {}), {} steps, {} rejected)",
        verdict.label,
        sig(100.0 * verdict.growth_tail, 3),
        sig(series.widths.last().copied().unwrap_or(0.0), 5),
        sig(series.heights.last().copied().unwrap_or(0.0), 5),
        sig(end[0], 8),
        sig(end[1], 8),
        traj.steps_taken,
        traj.steps_rejected
    );

    if a.verify {
        let report = verify_convergence(&spec, a.start, horizon, cfg.abstol, &cfg)
            .map_err(|e| Exit::Failure(anyhow::anyhow!("integration failed: {e}")))?;
        println!(
            "convergence: {} (abstol {:e} vs {:e}, final separation {})",
            if report.converged { "ok" } else { "NOT CONVERGED" },
            report.abstol_coarse,
            report.abstol_fine,
            sig(report.final_separation, 4)
        );
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, out: &Path) -> Result<(), Exit> {
    if a.list {
        for s in scenario_catalog() {
            println!("{:<26} {:>5}T  {}", s.name, s.horizon_periods, s.description);
        }
        return Ok(());
    }
    let name = a.scenario.as_deref().expect("clap requires --scenario");
    let mut scenario = load_scenario(name)?;
    if let Some(p) = a.periods {
        if p == 0 {
            return Err(usage("--periods must be positive"));
        }
        if p != scenario.horizon_periods {
            scenario = scenario.truncated(p);
        }
    }
    if a.workers == Some(0) {
        return Err(usage("--workers must be at least 1"));
    }
    let run = RunConfig {
        integrator: integrator(a.abstol)?,
        workers: a.workers,
        svg: !a.no_svg,
        cohort_csv: a.cohort_csv,
        grid: GridSpec::default(),
        ..RunConfig::default()
    };
    let dir = scenario_dir(out, &scenario);
    let summary = run_scenario(&scenario, &run, &dir).map_err(|e| Exit::Failure(e.into()))?;
    print!("{}", summary.table());
    println!("wrote {}", dir.join("summary.json").display());

    let failed = summary.starts.iter().filter(|s| s.error.is_some()).count()
        + summary.cohorts.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        return Err(Exit::Failure(anyhow::anyhow!("{failed} integration(s) failed; see summary.json")));
    }
    if a.expect && !summary.expectations_met {
        return Err(Exit::Mismatch);
    }
    Ok(())
}

fn cmd_ensemble(a: &EnsembleArgs, out: &Path) -> Result<(), Exit> {
    let (spec, _) = resolve_spec(&a.source)?;
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if a.workers == Some(0) {
        return Err(usage("--workers must be at least 1"));
    }
    if !(a.every > 0.0 && a.periods >= 0.0 && a.half_width > 0.0 && a.grid > 0) {
        return Err(usage("--every, --half-width and --grid must be positive, --periods non-negative"));
    }
    let steps = (a.periods / a.every).round();
    if (steps * a.every - a.periods).abs() > 1e-9 * a.periods.max(1.0) {
        return Err(usage("--periods must be a multiple of --every"));
    }
    let cfg = integrator(a.abstol)?;
    let kind = InitialDistribution::parse(&a.kind, &spec).map_err(|e| usage(e.to_string()))?;
    let grid = GridSpec::new(a.half_width, a.grid);

    let initial = sample_initial(&kind, a.n, a.seed, &spec, a.workers).map_err(|e| usage(e.to_string()))?;
    let run = run_ensemble(&spec, initial, a.every * PERIOD, steps as usize, grid, &cfg, a.workers)
        .map_err(|e| Exit::Failure(e.into()))?;

    let dir = out.join(format!("ensemble-{}-s{}", spec.fingerprint(), a.seed));
    let tag = run.snapshots[0].initial_density_tag.clone();
    for (k, snap) in run.snapshots.iter().enumerate() {
        io::write_file(&dir.join(format!("snap_{k:03}.csv")), &io::ensemble_csv(snap, &spec))
            .context("writing snapshot")?;
        if a.plot {
            let hist = histogram(snap, grid);
            let note = vec![
                format!("{tag}  n = {}  t = {}T", snap.len(), sig(snap.t / PERIOD, 6)),
                format!("spec {}", spec.fingerprint()),
            ];
            io::write_file(&dir.join(format!("density_{k:03}.svg")), &density_svg(&hist, grid, &note))
                .context("writing plot")?;
        }
    }
    if a.plot {
        let t = run.snapshots.last().map_or(0.0, |s| s.t);
        let note =
            vec![format!("|psi|^2 at t = {}T", sig(t / PERIOD, 6)), format!("spec {}", spec.fingerprint())];
        let reference = reference_density(&spec, grid, t, 4);
        io::write_file(&dir.join("born.svg"), &density_svg(&reference, grid, &note))
            .context("writing plot")?;
    }
    io::write_file(&dir.join("hbar.csv"), &io::h_series_csv(&run.records, &spec, a.seed, &tag))
        .context("writing H series")?;

    println!("{:>10} {:>12} {:>7}", "periods", "hbar", "cells");
    for r in &run.records {
        println!("{:>10} {:>12} {:>7}", sig(r.t / PERIOD, 6), sig(r.hbar, 6), r.cells_used);
    }
    let last = run.snapshots.last().expect("initial snapshot");
    for ks in born_ks(last, &spec, 0.01) {
        println!(
            "KS q{}: D = {} vs {} at 1%: {}",
            ks.axis + 1,
            sig(ks.statistic, 4),
            sig(ks.critical, 4),
            if ks.passes { "Born-like" } else { "not Born" }
        );
    }
    if last.failed > 0 {
        eprintln!("warning: {} particle(s) dropped after integration failures", last.failed);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn histogram(state: &EnsembleState, grid: GridSpec) -> Vec<f64> {
    let mut counts = vec![0.0; grid.cells()];
    for &p in &state.points {
        if let Some(c) = grid.cell_of(p) {
            counts[c] += 1.0;
        }
    }
    counts
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(USAGE),
            };
        }
    };
    let result = match &cli.command {
        Command::Trajectory(a) => cmd_trajectory(a, &cli.out),
        Command::Sweep(a) => cmd_sweep(a, &cli.out),
        Command::Ensemble(a) => cmd_ensemble(a, &cli.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Exit::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(USAGE)
        }
        Err(Exit::Failure(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(FAILURE)
        }
        Err(Exit::Mismatch) => {
            eprintln!("expectations not met");
            ExitCode::from(MISMATCH)
        }
    }
}
