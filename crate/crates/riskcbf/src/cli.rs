//! Batch front-end: subcommands `run`, `compare`, `cvar`, `plot`.
//!
//! Exit codes: 0 success, 2 config/validation error, 3 numerical or
//! infeasibility abort. Diagnostics go to standard error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

use crate::config::{
    build_cvar_inputs, build_experiment, build_safe_set, load_cvar_config, load_experiment_config,
    Experiment,
};
use crate::error::Error;
use crate::plot::{phase_portrait_svg, Trace};
use crate::sim::{monte_carlo_trajectories, safety_stats, ControllerSpec, RunSpec, SafetyStats, Trajectory};
use crate::wc_cvar::wc_cvar_quadratic;

#[derive(Debug, Parser)]
#[command(name = "riskcbf", about = "Risk-aware safety filtering experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the configured controller and write per-run CSVs plus a
    /// summary JSON.
    Run(RunArgs),
    /// Run the proposed and margin-free controllers under shared per-run
    /// seeds and write a paired summary.
    Compare(RunArgs),
    /// Compute a worst-case CVaR value and print its certificate as JSON.
    Cvar(CvarArgs),
    /// Render recorded trajectories as an SVG phase portrait.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured number of runs.
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Debug, Args)]
struct CvarArgs {
    /// Loss/moments configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Experiment configuration (JSON); only the safe set is used.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the SVG.
    #[arg(long)]
    out: PathBuf,
    /// Trajectory CSV files, one polyline each.
    #[arg(required = true)]
    trajectories: Vec<PathBuf>,
}

/// Parses arguments and dispatches; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Cvar(args) => cmd_cvar(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::SolverFailure { .. } | Error::Infeasible(_) | Error::SimulationAbort { .. } => 3,
        _ => 2,
    }
}

fn run_batch(exp: &Experiment, controller: ControllerSpec) -> Result<Vec<Trajectory>, Error> {
    let nominal = exp.nominal();
    let spec = RunSpec {
        plant: &exp.plant,
        nominal: &nominal,
        controller,
        set: &exp.set,
        cfg: &exp.cfg,
        disturbance_kind: exp.disturbance_kind,
        x0: exp.x0.clone(),
        steps: exp.steps,
        filter: exp.filter,
    };
    monte_carlo_trajectories(&spec, exp.n_runs, exp.seed)
}

fn violation_fraction(stats: &SafetyStats, steps: usize) -> f64 {
    stats.violation_steps as f64 / (steps + 1) as f64
}

fn batch_summary(stats: &[SafetyStats], steps: usize) -> serde_json::Value {
    let total: usize = stats.iter().map(|s| s.violation_steps).sum();
    let mean_fraction =
        stats.iter().map(|s| violation_fraction(s, steps)).sum::<f64>() / stats.len() as f64;
    let min_barrier = stats.iter().map(|s| s.min_barrier).fold(f64::INFINITY, f64::min);
    json!({
        "violations_per_run": stats.iter().map(|s| s.violation_steps).collect::<Vec<_>>(),
        "total_violation_steps": total,
        "mean_violation_fraction": mean_fraction,
        "min_barrier": min_barrier,
    })
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let config = load_experiment_config(&args.config)?;
    let exp = build_experiment(&config, args.seed, args.runs)?;
    std::fs::create_dir_all(&args.out)?;

    let trajectories = run_batch(&exp, exp.controller)?;
    let stats: Vec<SafetyStats> = trajectories.iter().map(|t| safety_stats(t, &exp.set)).collect();
    for (i, traj) in trajectories.iter().enumerate() {
        write_trajectory_csv(&args.out.join(format!("run_{i:03}.csv")), traj)?;
    }

    let summary = json!({
        "controller": config.filter.controller,
        "n_runs": exp.n_runs,
        "steps": exp.steps,
        "seed": exp.seed,
        "runs": stats,
        "aggregate": batch_summary(&stats, exp.steps),
    });
    std::fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

fn cmd_compare(args: &RunArgs) -> Result<(), Error> {
    let config = load_experiment_config(&args.config)?;
    let exp = build_experiment(&config, args.seed, args.runs)?;
    std::fs::create_dir_all(&args.out)?;

    // Same base seed on both sides: run i sees identical disturbances.
    let proposed: Vec<SafetyStats> = run_batch(&exp, ControllerSpec::Proposed)?
        .iter()
        .map(|t| safety_stats(t, &exp.set))
        .collect();
    let standard: Vec<SafetyStats> = run_batch(&exp, ControllerSpec::Standard)?
        .iter()
        .map(|t| safety_stats(t, &exp.set))
        .collect();

    let summary = json!({
        "n_runs": exp.n_runs,
        "steps": exp.steps,
        "seed": exp.seed,
        "proposed": batch_summary(&proposed, exp.steps),
        "standard": batch_summary(&standard, exp.steps),
    });
    std::fs::write(
        args.out.join("compare.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

fn cmd_cvar(args: &CvarArgs) -> Result<(), Error> {
    let config = load_cvar_config(&args.config)?;
    let (loss, moments, level) = build_cvar_inputs(&config)?;
    let cert = wc_cvar_quadratic(&loss, &moments, level)?;

    // Certificate residuals: feasibility of N and N − M(β), and the gap
    // between the reported value and β + Tr(ΩN)/ε.
    let d = cert.n_matrix.nrows();
    let n = d - 1;
    let half_q = loss.q() * 0.5;
    let mut m_beta = nalgebra::DMatrix::zeros(d, d);
    m_beta.view_mut((0, 0), (n, n)).copy_from(loss.p());
    m_beta.view_mut((0, n), (n, 1)).copy_from(&half_q);
    m_beta.view_mut((n, 0), (1, n)).copy_from(&half_q.transpose());
    m_beta[(n, n)] = loss.r() - cert.beta;
    let slack = &cert.n_matrix - &m_beta;
    let rebuilt = cert.beta
        + (moments.second_moment_matrix().matrix() * &cert.n_matrix).trace() / level.epsilon();

    let out = json!({
        "value": cert.value,
        "beta": cert.beta,
        "residuals": {
            "n_min_eigenvalue": crate::moments::smallest_eigenvalue(&cert.n_matrix),
            "slack_min_eigenvalue": crate::moments::smallest_eigenvalue(&slack),
            "objective_gap": (cert.value - rebuilt).abs(),
        },
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> Result<(), Error> {
    let config = load_experiment_config(&args.config)?;
    let set = build_safe_set(&config.safe_set)?;
    std::fs::create_dir_all(&args.out)?;

    let mut traces = Vec::new();
    for path in &args.trajectories {
        let record = read_trajectory_csv(path)?;
        if record.states.is_empty() || record.states[0].len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "{}: need at least two state columns",
                path.display()
            )));
        }
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        traces.push(Trace {
            label,
            points: record.states.iter().map(|x| [x[0], x[1]]).collect(),
        });
    }
    let svg = phase_portrait_svg(&set, &traces)?;
    std::fs::write(args.out.join("phase_portrait.svg"), svg)?;
    Ok(())
}

/// The CSV-serialized slice of a [`Trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub barrier_values: Vec<DVector<f64>>,
    pub slacks: Vec<f64>,
    pub filter_active: Vec<bool>,
}

/// 17-significant-digit decimal; round-trips every f64 exactly.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `t,x1..xn,u1..um,h1..hp,slack,active` rows for t = 0..steps.
/// The final row (no step was taken from it) pads input, slack, and
/// active with zeros.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), Error> {
    let n = traj.states[0].len();
    let m = traj.inputs.first().map_or(0, |u| u.len());
    let p = traj.barrier_values[0].len();

    let mut out = String::new();
    out.push('t');
    for i in 1..=n {
        out.push_str(&format!(",x{i}"));
    }
    for i in 1..=m {
        out.push_str(&format!(",u{i}"));
    }
    for i in 1..=p {
        out.push_str(&format!(",h{i}"));
    }
    out.push_str(",slack,active\n");

    let steps = traj.steps();
    for t in 0..=steps {
        out.push_str(&t.to_string());
        for v in traj.states[t].iter() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        if t < steps {
            for v in traj.inputs[t].iter() {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
        } else {
            for _ in 0..m {
                out.push_str(",0");
            }
        }
        for v in traj.barrier_values[t].iter() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        if t < steps {
            out.push(',');
            out.push_str(&fmt_f64(traj.slacks[t]));
            out.push_str(if traj.filter_active[t] { ",1" } else { ",0" });
        } else {
            out.push_str(",0,0");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parses a trajectory CSV written by [`write_trajectory_csv`]. The
/// padded final row contributes only state and barrier values.
pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryRecord, Error> {
    let malformed = |msg: String| Error::InvalidConfig(format!("{}: {msg}", path.display()));
    let text = std::fs::read_to_string(path)
        .map_err(|e| malformed(format!("cannot read: {e}")))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| malformed("empty file".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    let n = columns.iter().filter(|c| c.starts_with('x')).count();
    let m = columns.iter().filter(|c| c.starts_with('u')).count();
    let p = columns.iter().filter(|c| c.starts_with('h')).count();
    let expected = 1 + n + m + p + 2;
    if columns.len() != expected
        || columns[0] != "t"
        || columns[expected - 2] != "slack"
        || columns[expected - 1] != "active"
        || n == 0
        || p == 0
    {
        return Err(malformed(format!("unrecognized header {header:?}")));
    }

    let rows: Vec<Vec<&str>> = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').collect())
        .collect();
    if rows.is_empty() {
        return Err(malformed("no data rows".into()));
    }
    let mut record = TrajectoryRecord {
        states: Vec::new(),
        inputs: Vec::new(),
        barrier_values: Vec::new(),
        slacks: Vec::new(),
        filter_active: Vec::new(),
    };
    let last = rows.len() - 1;
    for (t, row) in rows.iter().enumerate() {
        if row.len() != expected {
            return Err(malformed(format!("row {t} has {} fields, expected {expected}", row.len())));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| malformed(format!("row {t}: bad float {s:?}")))
        };
        if row[0].parse::<usize>().map_err(|_| malformed(format!("row {t}: bad index")))? != t {
            return Err(malformed(format!("row {t}: out-of-order step index {:?}", row[0])));
        }
        let state: Vec<f64> = row[1..1 + n].iter().map(|s| parse(s)).collect::<Result<_, _>>()?;
        record.states.push(DVector::from_vec(state));
        let h: Vec<f64> = row[1 + n + m..1 + n + m + p]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<_, _>>()?;
        record.barrier_values.push(DVector::from_vec(h));
        if t < last {
            let u: Vec<f64> =
                row[1 + n..1 + n + m].iter().map(|s| parse(s)).collect::<Result<_, _>>()?;
            record.inputs.push(DVector::from_vec(u));
            record.slacks.push(parse(row[expected - 2])?);
            record.filter_active.push(row[expected - 1].trim() == "1");
        }
    }
    Ok(record)
}
