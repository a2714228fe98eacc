use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use wsm_core::config::RunConfig;
use wsm_core::curvature;
use wsm_core::experiment;
use wsm_core::flow::{self, Termination, Trajectory};
use wsm_core::geodesic;
use wsm_core::inequalities;
use wsm_core::report::{self, PlotValue};
use wsm_core::{Distribution, Error, Graph, Result, StatisticalModel};

/// Wasserstein geometry of statistical models: curvature bounds, gradient flows, geodesics.
#[derive(Debug, Parser)]
#[command(name = "wsm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; defaults are used for every missing field.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for the sweep (overrides `workers` in the config).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Print the plan and the effective config without computing anything.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Ricci lower bound κ over the parameter grid.
    Curvature,
    /// Uniform convergence rate K of the Fokker–Planck flow.
    Rate,
    /// Families × ground metrics comparison of κ and K.
    Sweep,
    /// Constant-speed geodesic between `geodesic.theta0` and `geodesic.theta1`.
    Geodesic,
    /// Fokker–Planck trajectory from `flow.theta0`.
    Flow,
    /// Log-Sobolev, Talagrand and HWI checks over the grid.
    Inequalities,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Curvature => "curvature",
            Command::Rate => "rate",
            Command::Sweep => "sweep",
            Command::Geodesic => "geodesic",
            Command::Flow => "flow",
            Command::Inequalities => "inequalities",
        }
    }
}

/// Outcome of a command: files written, values for the manifest and the exit status.
struct Outcome {
    outputs: Vec<String>,
    results: Value,
    status: i32,
}

impl Outcome {
    fn ok(outputs: Vec<String>, results: Value) -> Self {
        Outcome { outputs, results, status: 0 }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            RunConfig::from_json(&text).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = Some(out.display().to_string());
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    if cfg.out.is_none() {
        cfg.out = Some("out".into());
    }
    if cfg.workers.is_none() {
        cfg.workers = Some(std::thread::available_parallelism().map_or(1, |n| n.get()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32> {
    let cfg = load_config(cli)?;
    let out = PathBuf::from(cfg.out.as_deref().unwrap_or("out"));
    if cli.dry_run {
        dry_run(cli.command, &cfg)?;
        return Ok(0);
    }
    fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    let outcome = match cli.command {
        Command::Curvature => cmd_curvature(&cfg, &out),
        Command::Rate => cmd_rate(&cfg, &out),
        Command::Sweep => cmd_sweep(&cfg, &out),
        Command::Geodesic => cmd_geodesic(&cfg, &out),
        Command::Flow => cmd_flow(&cfg, &out),
        Command::Inequalities => cmd_inequalities(&cfg, &out),
    };
    let (outcome, error) = match outcome {
        Ok(o) => (o, None),
        Err(e) => (
            Outcome { outputs: Vec::new(), results: json!({ "error": e.to_string() }), status: e.exit_code() },
            Some(e),
        ),
    };
    write_manifest(cli.command, &cfg, &outcome, &out)?;
    match error {
        Some(e) => Err(e),
        None => Ok(outcome.status),
    }
}

fn write_manifest(command: Command, cfg: &RunConfig, outcome: &Outcome, out: &Path) -> Result<()> {
    let manifest = json!({
        "command": command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "outputs": outcome.outputs,
        "results": outcome.results,
        "exit_status": outcome.status,
    });
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
}

fn dry_run(command: Command, cfg: &RunConfig) -> Result<()> {
    if command == Command::Sweep {
        let cells = experiment::plan(&cfg.sweep)?;
        println!("{} planned configurations", cells.len());
        for c in &cells {
            println!(
                "family {:2} phi {:.6} omega [{}, {}, {}]",
                c.family_index, c.phi, c.omega[0], c.omega[1], c.omega[2]
            );
        }
    } else {
        let model = cfg.build_model()?;
        cfg.build_graph()?;
        cfg.build_q(model.n_states())?;
        println!("{}: model with {} parameter(s) on {} states", command.name(), model.dim(), model.n_states());
    }
    println!("{}", serde_json::to_string_pretty(cfg).expect("config serializes"));
    Ok(())
}

fn setup(cfg: &RunConfig) -> Result<(StatisticalModel, Graph, Distribution)> {
    let model = cfg.build_model()?;
    let graph = cfg.build_graph()?;
    let q = cfg.build_q(model.n_states())?;
    Ok((model, graph, q))
}

fn file(out: &Path, name: &str) -> (PathBuf, String) {
    (out.join(name), name.to_string())
}

fn cmd_curvature(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (model, graph, q) = setup(cfg)?;
    let grid = model.domain().uniform_grid(cfg.grid_points);
    let report = curvature::ricci_lower_bound(&model, &graph, &q, &grid)?;
    let (path, name) = file(out, "curvature.csv");
    report.write_csv(&path)?;
    println!("kappa = {:.12e}", report.kappa);
    println!("argmin = {:?}", report.argmin);
    if report.failures() > 0 {
        eprintln!("warning: {} of {} grid points failed and were excluded", report.failures(), report.points.len());
    }
    Ok(Outcome::ok(
        vec![name],
        json!({
            "kappa": report.kappa,
            "argmin": report.argmin,
            "grid_points": report.points.len(),
            "failed_points": report.failures(),
        }),
    ))
}

fn cmd_rate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (model, graph, q) = setup(cfg)?;
    let initials = cfg.initials(&model);
    if initials.is_empty() {
        return Err(Error::Config("no initial conditions given".into()));
    }
    let params = flow::FlowParams::euler(cfg.flow.h);
    let t = cfg.flow.t;
    let mut trajectories = Vec::with_capacity(initials.len());
    let mut samples = Vec::with_capacity(initials.len());
    for theta0 in &initials {
        let traj = flow::fpe_trajectory(&model, &graph, theta0, &q, &params, 2.0 * t)?;
        match (traj.kl_at(0.0), traj.kl_at(t), traj.kl_at(2.0 * t)) {
            (Some(a), Some(b), Some(c)) => samples.push([a, b, c]),
            _ => return Err(Error::Config(format!("T = {t} is not a multiple of h = {}", cfg.flow.h))),
        }
        trajectories.push(traj);
    }
    let (path, name) = file(out, "trajectories.csv");
    flow::write_trajectories_csv(&trajectories, &path)?;
    let mut outputs = vec![name];
    let estimate = flow::rate_from_kl_samples(&samples, &initials, t, cfg.flow.estimator)?;
    println!("K = {:.12e}", estimate.k);
    println!("argmin initial = {:?}", estimate.argmin);
    if model.dim() == 1 {
        let theta: Vec<f64> = initials.iter().map(|x| x[0]).collect();
        let data = report::pointwise_data(&model, &graph, &q, &theta, cfg.flow.h, t)?;
        let (path, name) = file(out, "pointwise.svg");
        report::plot_pointwise(&data, &path)?;
        outputs.push(name);
    }
    Ok(Outcome::ok(
        outputs,
        json!({
            "K": estimate.k,
            "argmin": estimate.argmin,
            "estimator": cfg.flow.estimator,
            "skipped_initials": estimate.per_initial.iter().filter(|r| r.is_none()).count(),
        }),
    ))
}

/// Share of rows that must succeed for the sweep to exit 0.
const SWEEP_SUCCESS_SHARE: f64 = 0.95;

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let workers = cfg.workers.unwrap_or(1);
    let rows = experiment::run_sweep(&cfg.sweep, &cfg.sweep_settings(), workers)?;
    let mut outputs = Vec::new();
    let (path, name) = file(out, "sweep.csv");
    report::write_sweep_csv(&rows, &path)?;
    outputs.push(name);
    let ok: Vec<_> = rows.iter().filter(|r| r.succeeded()).cloned().collect();
    if !ok.is_empty() {
        for (value, name) in [(PlotValue::Kappa, "families_kappa.svg"), (PlotValue::K, "families_K.svg")] {
            let (path, name) = file(out, name);
            report::plot_simplex_families(&ok, value, &path)?;
            outputs.push(name);
        }
        let (path, name) = file(out, "kappa_vs_K.svg");
        report::plot_kappa_vs_k(&ok, &path)?;
        outputs.push(name);
    }
    let violations = rows.iter().filter(|r| r.bound_holds() == Some(false)).count();
    let share = ok.len() as f64 / rows.len() as f64;
    println!("{} of {} configurations succeeded", ok.len(), rows.len());
    println!("kappa <= K + {:e} violated on {violations} rows", report::BOUND_TOL);
    for r in rows.iter().filter(|r| !r.succeeded()) {
        eprintln!(
            "family {} omega {:?}: {}",
            r.family_index,
            r.omega,
            r.error.as_deref().unwrap_or("no result")
        );
    }
    let status = if share >= SWEEP_SUCCESS_SHARE { 0 } else { 4 };
    if status != 0 {
        eprintln!("error: fewer than {:.0}% of configurations succeeded", 100.0 * SWEEP_SUCCESS_SHARE);
    }
    Ok(Outcome {
        outputs,
        results: json!({
            "rows": rows.len(),
            "succeeded": ok.len(),
            "bound_violations": violations,
        }),
        status,
    })
}

fn cmd_geodesic(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (model, graph, _) = setup(cfg)?;
    let (Some(theta0), Some(theta1)) = (&cfg.geodesic.theta0, &cfg.geodesic.theta1) else {
        return Err(Error::Config("geodesic needs geodesic.theta0 and geodesic.theta1".into()));
    };
    let path = geodesic::constant_speed_geodesic(&model, &graph, theta0, theta1, &cfg.geodesic.params)?;
    let (file_path, name) = file(out, "path.csv");
    path.write_csv(&model, &graph, &file_path)?;
    println!("d_W = {:.12e}", path.distance);
    if !path.is_refined() {
        eprintln!("warning: path could not be refined by shooting; distance is the discrete estimate");
    }
    if path.multistart_disagrees() {
        eprintln!("warning: multi-start seeds disagree (relative spread {:.3e})", path.multistart_spread);
    }
    Ok(Outcome::ok(
        vec![name],
        json!({
            "distance": path.distance,
            "discrete_energy": path.discrete_energy,
            "converged": path.converged,
            "refined": path.is_refined(),
            "iterations": path.iterations,
            "multistart_spread": path.multistart_spread,
        }),
    ))
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxSteps => "max-steps",
        Termination::BoundaryHit => "boundary-hit",
    }
}

fn cmd_flow(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (model, graph, q) = setup(cfg)?;
    let theta0 = match &cfg.flow.theta0 {
        Some(t) => t.clone(),
        None => {
            let d = model.domain();
            d.theta_min.iter().zip(&d.theta_max).map(|(a, b)| 0.5 * (a + b)).collect()
        }
    };
    let (path, name) = file(out, "trajectory.csv");
    let write = |traj: &Trajectory| -> Result<()> { traj.write_csv(&path) };
    match flow::fpe_trajectory(&model, &graph, &theta0, &q, &cfg.flow_params(), cfg.flow.t_end) {
        Ok(traj) => {
            write(&traj)?;
            let last = traj.last();
            println!("KL({}) = {:.12e} ({})", last.t, last.kl, termination_name(traj.termination));
            Ok(Outcome::ok(
                vec![name],
                json!({
                    "samples": traj.samples.len(),
                    "final_t": last.t,
                    "final_theta": last.theta,
                    "final_kl": last.kl,
                    "termination": termination_name(traj.termination),
                }),
            ))
        }
        Err(Error::BoundaryStall { partial }) => {
            write(&partial)?;
            eprintln!("partial trajectory written to {}", path.display());
            Err(Error::BoundaryStall { partial })
        }
        Err(e) => Err(e),
    }
}

fn cmd_inequalities(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (model, graph, q) = setup(cfg)?;
    let grid = model.domain().uniform_grid(cfg.grid_points);
    let kinds = &cfg.inequalities.kinds;
    if kinds.is_empty() {
        return Err(Error::Config("no inequality kinds requested".into()));
    }
    let kappa = match cfg.inequalities.kappa {
        Some(k) => k,
        None => curvature::ricci_lower_bound(&model, &graph, &q, &grid)?.kappa,
    };
    println!("kappa = {kappa:.12e}");
    // fail before the minimizer search when a kind cannot apply
    for k in kinds {
        if k.needs_positive_kappa() && !(kappa > 0.0) {
            return Err(Error::Inapplicable(format!("{} inequality needs kappa > 0, got {kappa}", k.name())));
        }
    }
    let seeds = cfg.initials(&model);
    let star = inequalities::find_minimizer(&model, &graph, &q, &seeds, Some(kappa))?;
    println!("theta* = {:?}, KL* = {:.12e}", star.theta, star.kl);
    let rows = inequalities::check_grid(&model, &graph, &q, kappa, &star, &grid, kinds, &cfg.geodesic.params)?;
    let (path, name) = file(out, "inequalities.csv");
    inequalities::write_inequality_csv(&rows, &path)?;
    let mut summary = serde_json::Map::new();
    for &k in kinds {
        let of_kind: Vec<_> = rows.iter().filter(|r| r.kind == k).collect();
        let failed = of_kind.iter().filter(|r| r.is_failure()).count();
        let flagged = of_kind.iter().filter(|r| r.flagged).count();
        let min_slack = of_kind.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
        println!("{}: {failed} failed, {flagged} flagged, min slack {min_slack:.3e}", k.name());
        summary.insert(k.name().into(), json!({ "failed": failed, "flagged": flagged, "min_slack": min_slack }));
    }
    let failures = rows.iter().filter(|r| r.is_failure()).count();
    if failures > 0 {
        eprintln!("error: {failures} inequality checks failed");
    }
    Ok(Outcome {
        outputs: vec![name],
        results: json!({ "kappa": kappa, "theta_star": star.theta, "kl_star": star.kl, "checks": summary }),
        status: if failures > 0 { 4 } else { 0 },
    })
}
