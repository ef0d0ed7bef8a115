use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use gridsplit_core::coordinator::{formation_snapshot, RunFailure};
use gridsplit_core::report::{compare, read_summary, summarize, write_outputs};
use gridsplit_core::solver::enumerate::enumerate_optimal;
use gridsplit_core::solver::SolverOptions;
use gridsplit_core::{
    build_milp, fixed_topology_solution, open_scenario, run, solve_formation, FormationError, Mode, RestorationRun,
    RunOptions, Scenario, ScenarioError,
};
use log::info;
use serde_json::json;

/// Multi-microgrid formation and service restoration.
#[derive(Parser)]
#[command(name = "gridsplit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a restoration and write traces and metrics.
    Run {
        /// Scenario JSON, or `builtin:two-feeder`.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "flexible")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        /// Also write the plot-ready CSV tables.
        #[arg(long)]
        emit_plots: bool,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write each event's formation MILP in LP format to this directory.
        #[arg(long, value_name = "DIR")]
        export_lp: Option<PathBuf>,
        /// Branch-and-bound node limit per formation solve.
        #[arg(long, default_value_t = SolverOptions::default().node_limit)]
        node_limit: u64,
    },
    /// Tabulate metric deltas between two run directories (b - a).
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Brute-force the formation at one step and check it against the MILP.
    Enumerate {
        #[arg(long)]
        scenario: String,
        /// Formation step index.
        #[arg(long)]
        step: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Load a scenario and report whether it is valid.
    Validate {
        #[arg(long)]
        scenario: String,
    },
    /// Write the built-in two-feeder scenario to a directory.
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: 1,
            error: e.into(),
        }
    }
}

fn scenario_failure(e: ScenarioError) -> Failure {
    Failure {
        code: if e.is_validation() { 2 } else { 1 },
        error: e.into(),
    }
}

fn load(source: &str) -> Result<Scenario, Failure> {
    open_scenario(source).map_err(scenario_failure)
}

fn export_lp(sc: &Scenario, r: &RestorationRun, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (i, ev) in r.events.iter().enumerate() {
        let Some(snap) = &ev.snapshot else { continue };
        let g = sc.graph_at(ev.t_min);
        let prev = match i {
            0 => fixed_topology_solution(&g)?,
            _ => r.events[i - 1].solution.clone(),
        };
        let problem = build_milp(&g, snap, &sc.weights, Some(&prev))?;
        let path = dir.join(format!("formation_{:04}.lp", ev.t_min));
        fs::write(&path, problem.model.to_lp_string()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            scenario,
            mode,
            out,
            emit_plots,
            seed,
            export_lp: lp_dir,
            node_limit,
        } => {
            let sc = load(&scenario)?;
            let options = RunOptions {
                solver: SolverOptions {
                    node_limit,
                    ..SolverOptions::default()
                },
                seed,
            };
            let r = match run(&sc, mode, &options) {
                Ok(r) => r,
                Err(e) => {
                    let code = match e.cause {
                        RunFailure::Formation(FormationError::SolverLimit) => 3,
                        _ => 1,
                    };
                    let written = write_outputs(&e.partial, &out, false)?;
                    info!("partial trace written to {} ({} files)", out.display(), written.len());
                    return Err(Failure { code, error: e.into() });
                }
            };
            let files = write_outputs(&r, &out, emit_plots)?;
            if let Some(dir) = lp_dir {
                export_lp(&sc, &r, &dir)?;
            }
            let s = summarize(&r);
            println!(
                "{} ({}): served {:.1} kWh, PV utilization {:.2}%, {} topology changes, {} files in {}",
                s.scenario,
                s.mode,
                s.total_served_kwh,
                s.pv_utilization(),
                s.topology_change_count,
                files.len(),
                out.display()
            );
        }
        Command::Compare { a, b } => {
            let c = compare(&read_summary(&a)?, &read_summary(&b)?)?;
            print!("{}", c.to_csv());
        }
        Command::Enumerate { scenario, step, seed } => {
            let sc = load(&scenario)?;
            let seed = seed.unwrap_or(sc.seed);
            let snap = formation_snapshot(&sc, step, seed).ok_or_else(|| anyhow!("no formation step {step}"))?;
            let t_min = sc.timeline.formation_times().nth(step).unwrap_or(0);
            let g = sc.graph_at(t_min);
            let oracle = enumerate_optimal(&g, &snap, &sc.weights, None)?;
            let milp =
                solve_formation(&g, &snap, &sc.weights, None, &SolverOptions::default()).map_err(|e| Failure {
                    code: if e == FormationError::SolverLimit { 3 } else { 1 },
                    error: e.into(),
                })?;
            let gap = (oracle.objective - milp.solution.objective_value).abs();
            let doc = json!({
                "step": step,
                "t_min": t_min,
                "candidates": oracle.candidates,
                "radial": oracle.radial_count,
                "feasible": oracle.feasible_count,
                "objective": oracle.objective,
                "milp_objective": milp.solution.objective_value,
                "gap": gap,
                "closed_edges": oracle.solution.closed_edges(),
                "groups": oracle.solution.groups(g.gfm_nodes().len()),
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        Command::Validate { scenario } => {
            let sc = load(&scenario)?;
            println!(
                "{}: ok ({} zones, {} switches, {} sources, {} steps of {} min)",
                sc.name,
                sc.graph.nodes().len(),
                sc.graph.edges().len(),
                sc.graph.gfm_nodes().len(),
                sc.timeline.steps(),
                sc.timeline.dispatch_step_min
            );
        }
        Command::Fixture { out } => {
            let path = gridsplit_core::fixture_two_feeder()
                .save(&out)
                .map_err(scenario_failure)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRIDSPLIT_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
