//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for configuration or usage problems, 3 when
//! the solver fails at runtime. The output directory comes from the
//! scenario file unless `TMTOPO_OUT_DIR` overrides it.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::equilibrium::{reaction_sweep, stiffness_series, AdvanceOpts, SolveError};
use crate::io::{
    parse_vtk_chi, write_field_snapshot, write_history_csv, write_sweep_csv, FieldSnapshot,
    IterationRecord, ReadError, SnapshotFormat,
};
use crate::model::{DesignField, Model};
use crate::optimizer::{
    adaptive_drive, check_gradient, initialize, metrics, objective, optimality_residual,
    CoupledNewton, DriveStop, OptState,
};
use crate::scenario::{build_scenario, parse_scenario, ConfigError, Scenario};

pub const OUT_DIR_VAR: &str = "TMTOPO_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "tmtopo",
    version,
    about = "Plane-strain topology optimization with internal contact through a third medium"
)]
struct Cli {
    /// Keep assembly and reductions in a fixed order for bitwise
    /// reproducible runs (this build is always ordered; the flag records
    /// the intent).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a displacement-driven reaction sweep of the configured design.
    Simulate {
        config: PathBuf,
        /// Load levels as from:to:steps, e.g. 0:-0.6:30.
        #[arg(long)]
        sweep: String,
    },
    /// Run the monolithic design optimization.
    Optimize {
        config: PathBuf,
        /// Write a design snapshot every this many accepted iterations.
        #[arg(long, default_value_t = 10)]
        snapshot_every: usize,
    },
    /// Re-run a reaction sweep with the design read from a snapshot.
    Sweep {
        config: PathBuf,
        /// VTK design snapshot (as written by optimize).
        #[arg(long)]
        design: PathBuf,
        /// Load levels as from:to:steps; defaults to the control-point
        /// levels of the scenario.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Compare the adjoint design gradient against finite differences.
    CheckGradient {
        config: PathBuf,
        /// Design perturbation per degree of freedom.
        #[arg(long, default_value_t = 1e-5)]
        fd_step: f64,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("snapshot: {0}")]
    Snapshot(#[from] ReadError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Snapshot(_) => 2,
            CliError::Solve(_) | CliError::Io(_) | CliError::Runtime(_) => 3,
        }
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid(msg.into()))
}

/// Parse arguments (the first is the program name) and run; returns the
/// process exit code.
pub fn cli_dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, sweep } => {
            let scenario = load(&config, cli.deterministic)?;
            let levels = parse_levels(&sweep)?;
            let out = prepare_output(&scenario)?;
            run_sweep(&scenario.model, &scenario.design, &levels, &out)
        }
        Command::Optimize {
            config,
            snapshot_every,
        } => {
            let scenario = load(&config, cli.deterministic)?;
            let out = prepare_output(&scenario)?;
            run_optimize(&scenario, snapshot_every.max(1), &out)
        }
        Command::Sweep {
            config,
            design,
            sweep,
        } => {
            let scenario = load(&config, cli.deterministic)?;
            let levels = match sweep {
                Some(s) => parse_levels(&s)?,
                None => control_point_levels(&scenario)?,
            };
            let text = std::fs::read_to_string(&design)
                .map_err(|e| config_error(format!("cannot read {}: {e}", design.display())))?;
            let (nx, ny, chi) = parse_vtk_chi(&text)?;
            let mesh = &scenario.model.mesh;
            if (nx, ny) != (mesh.nx, mesh.ny) {
                return Err(config_error(format!(
                    "snapshot grid {}x{} does not match the {}x{} mesh",
                    nx, ny, mesh.nx, mesh.ny
                )));
            }
            let out = prepare_output(&scenario)?;
            run_sweep(&scenario.model, &DesignField::Nodal(chi), &levels, &out)
        }
        Command::CheckGradient { config, fd_step } => {
            let scenario = load(&config, cli.deterministic)?;
            if !(fd_step > 0.0) {
                return Err(config_error("--fd-step must be positive"));
            }
            run_check_gradient(&scenario, fd_step)
        }
    }
}

fn load(path: &Path, deterministic: bool) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let mut config = parse_scenario(&text)?;
    config.output.deterministic |= deterministic;
    Ok(build_scenario(&config)?)
}

fn parse_levels(spec: &str) -> Result<Vec<f64>, CliError> {
    let err = || config_error(format!("--sweep wants from:to:steps, got '{spec}'"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [from, to, steps] = parts[..] else {
        return Err(err());
    };
    let from: f64 = from.trim().parse().map_err(|_| err())?;
    let to: f64 = to.trim().parse().map_err(|_| err())?;
    let steps: usize = steps.trim().parse().map_err(|_| err())?;
    if steps == 0 || !from.is_finite() || !to.is_finite() || from == to {
        return Err(err());
    }
    Ok((0..=steps)
        .map(|k| from + (to - from) * k as f64 / steps as f64)
        .collect())
}

fn control_point_levels(scenario: &Scenario) -> Result<Vec<f64>, CliError> {
    let setup = scenario
        .optimizer
        .as_ref()
        .ok_or_else(|| config_error("pass --sweep or configure control points"))?;
    Ok(setup.params.control_points.iter().map(|p| p.u_d).collect())
}

/// Resolve and create the output directory.
fn prepare_output(scenario: &Scenario) -> Result<PathBuf, CliError> {
    let dir = std::env::var_os(OUT_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(&scenario.config.output.dir));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn run_sweep(
    model: &Model,
    design: &DesignField,
    levels: &[f64],
    out: &Path,
) -> Result<(), CliError> {
    let (points, report) = reaction_sweep(model, design, levels, &AdvanceOpts::default())?;
    let stiffness = stiffness_series(&points);
    let path = out.join("sweep.csv");
    write_sweep_csv(&path, &points, &stiffness)?;
    let last = points.last().expect("at least one level");
    println!(
        "sweep: {} samples to u_D = {:.6e}, final reaction {:.6e}, min void det {:.3e}, {} rejected substeps",
        points.len(),
        last.u_d,
        last.reaction,
        report.min_void_det,
        report.rejections().count()
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Corner-node id -> serendipity-node id, for sampling displacement fields
/// on the design grid.
fn corner_to_q8(model: &Model) -> Vec<usize> {
    let mesh = &model.mesh;
    let mut map = vec![0; mesh.n_q4_nodes()];
    for e in 0..mesh.n_elements() {
        let q8 = mesh.q8_nodes(e);
        for (c, q4) in mesh.q4_nodes(e).into_iter().enumerate() {
            map[q4] = q8[c];
        }
    }
    map
}

fn snapshot_of(model: &Model, state: &OptState) -> FieldSnapshot {
    let mesh = &model.mesh;
    let map = corner_to_q8(model);
    let displacements = state
        .cps
        .iter()
        .map(|cp| {
            let full = model.u_space.scattered(&cp.u);
            map.iter().map(|&n| [full[2 * n], full[2 * n + 1]]).collect()
        })
        .collect();
    FieldSnapshot {
        nx: mesh.nx,
        ny: mesh.ny,
        lx: mesh.lx,
        ly: mesh.ly,
        chi: state.chi.clone(),
        rho: state.chi.iter().map(|&c| crate::material::sigmoid_density(c)).collect(),
        displacements,
    }
}

fn run_optimize(scenario: &Scenario, snapshot_every: usize, out: &Path) -> Result<(), CliError> {
    let setup = scenario
        .optimizer
        .as_ref()
        .ok_or_else(|| config_error("optimization needs control points and an optimizer section"))?;
    let DesignField::Nodal(chi0) = &scenario.design else {
        return Err(config_error(
            "optimization needs a nodal initial design ('patches' or graded 'rects')",
        ));
    };
    let model = &scenario.model;
    let params = &setup.params;
    let mut state = initialize(model, params, chi0.clone())?;
    println!(
        "initialized: C = {:.6e}, mean density {:.4}",
        objective(model, params, &state),
        metrics(model, params, &state).volume_fraction
    );
    let mut stepper = CoupledNewton::new(model, params);
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut write_failure: Option<std::io::Error> = None;
    let report = adaptive_drive(&mut stepper, &mut state, &setup.drive, |state, event| {
        let m = metrics(model, params, state);
        let newton_iterations = *event.outcome.as_ref().expect("accepted event");
        let record = IterationRecord {
            i: event.iteration,
            t: event.t,
            dt: event.dt,
            newton_iterations,
            c: m.c_q.iter().sum::<f64>() + m.c_interface,
            c_chi: m.c_chi,
            c_q: m.c_q,
            rho_bar: state.rho_bar,
            mu_avg: state.mu_avg,
            mu_max: state.mu_max,
        };
        println!(
            "iter {:3}  t {:9.3e}  dt {:9.3e}  newton {}  C {:.6e}  rho_bar {:.4}",
            record.i, record.t, record.dt, record.newton_iterations, record.c, record.rho_bar
        );
        let accepted = records.len() + 1;
        if accepted % snapshot_every == 0 && write_failure.is_none() {
            let path = out.join(format!("design_{:04}.vtk", record.i));
            if let Err(e) = write_field_snapshot(&path, &snapshot_of(model, state), SnapshotFormat::Vtk)
            {
                write_failure = Some(e);
            }
        }
        records.push(record);
    })?;
    if let Some(e) = write_failure {
        return Err(e.into());
    }
    write_history_csv(&out.join("history.csv"), &records)?;
    let snap = snapshot_of(model, &state);
    write_field_snapshot(&out.join("design_final.vtk"), &snap, SnapshotFormat::Vtk)?;
    write_field_snapshot(&out.join("density_final.txt"), &snap, SnapshotFormat::PlainGrid)?;
    let final_metrics = metrics(model, params, &state);
    println!(
        "final: C = {:.6e}, mean density {:.4}, interface violation on {:.2}% of the domain",
        objective(model, params, &state),
        final_metrics.volume_fraction,
        100.0 * final_metrics.violation_fraction
    );
    match report.stop {
        DriveStop::StepConverged => {
            let residual = optimality_residual(model, params, &state)?;
            println!(
                "converged: step exceeded dt_max after {} accepted iterations; undamped residual {:.3e}",
                records.len(),
                residual
            );
            Ok(())
        }
        DriveStop::IterationLimit => {
            println!("stopped at the iteration budget ({} attempts)", report.events.len());
            Ok(())
        }
        DriveStop::StepUnderflow => {
            for event in report.events.iter().rev().take(6).rev() {
                eprintln!(
                    "  attempt {} at dt {:.3e}: {}",
                    event.iteration,
                    event.dt,
                    match &event.outcome {
                        Ok(n) => format!("accepted after {n} Newton iterations"),
                        Err(e) => format!("rejected ({e})"),
                    }
                );
            }
            Err(CliError::Runtime(format!(
                "step size underflowed below {:.3e} after repeated rejections",
                setup.drive.dt_min
            )))
        }
    }
}

fn run_check_gradient(scenario: &Scenario, fd_step: f64) -> Result<(), CliError> {
    let setup = scenario
        .optimizer
        .as_ref()
        .ok_or_else(|| config_error("gradient checks need control points and an optimizer section"))?;
    let DesignField::Nodal(chi0) = &scenario.design else {
        return Err(config_error("gradient checks need a nodal initial design"));
    };
    let check = check_gradient(&scenario.model, &setup.params, chi0, fd_step)?;
    println!(
        "design gradient vs central differences over {} DOFs (step {:.1e})",
        check.analytic.len(),
        fd_step
    );
    println!(
        "worst DOF {}: analytic {:.9e}, differenced {:.9e}",
        check.worst, check.analytic[check.worst], check.fd[check.worst]
    );
    println!("max relative error {:.3e}", check.max_rel_err);
    Ok(())
}
