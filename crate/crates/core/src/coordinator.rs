//! Rolling-horizon restoration: formation every few hours, day-ahead
//! scheduling per microgrid, 5-minute dispatch in between.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ems::{DispatchStep, EmsError, EnergyManager, MicrogridState, MicrogridTopology, ZoneSample};
use crate::formation::{self, FormationError, FormationSnapshot, FormationSolution};
use crate::netmodel::{ZoneGraph, ZoneId};
use crate::scenario::{Aggregation, Profile, Scenario};
use crate::solver::SolverOptions;

/// Scheduling is refreshed at least this often.
const RESCHEDULE_MIN: u32 = 180;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Timeline {
    pub formation_horizon_min: u32,
    pub formation_step_min: u32,
    pub schedule_horizon_min: u32,
    pub schedule_step_min: u32,
    pub dispatch_horizon_min: u32,
    pub dispatch_step_min: u32,
    pub total_duration_min: u32,
}

impl Default for Timeline {
    fn default() -> Self {
        Self {
            formation_horizon_min: 24 * 60,
            formation_step_min: 180,
            schedule_horizon_min: 24 * 60,
            schedule_step_min: 30,
            dispatch_horizon_min: 30,
            dispatch_step_min: 5,
            total_duration_min: 48 * 60,
        }
    }
}

impl Timeline {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("formation_horizon_min", self.formation_horizon_min),
            ("formation_step_min", self.formation_step_min),
            ("schedule_horizon_min", self.schedule_horizon_min),
            ("schedule_step_min", self.schedule_step_min),
            ("dispatch_horizon_min", self.dispatch_horizon_min),
            ("dispatch_step_min", self.dispatch_step_min),
            ("total_duration_min", self.total_duration_min),
        ];
        if let Some((name, _)) = all.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        let divides = |a: u32, b: u32, what: &str| {
            if b % a == 0 {
                Ok(())
            } else {
                Err(format!("{what}: {a} does not divide {b}"))
            }
        };
        divides(
            self.dispatch_step_min,
            self.dispatch_horizon_min,
            "dispatch step / dispatch horizon",
        )?;
        divides(
            self.dispatch_horizon_min,
            self.schedule_step_min,
            "dispatch horizon / schedule step",
        )?;
        divides(
            self.schedule_step_min,
            self.formation_step_min,
            "schedule step / formation step",
        )?;
        divides(
            self.formation_step_min,
            self.total_duration_min,
            "formation step / total duration",
        )?;
        if self.formation_horizon_min < self.formation_step_min {
            return Err("formation horizon is shorter than its step".into());
        }
        if self.schedule_horizon_min < self.schedule_step_min {
            return Err("schedule horizon is shorter than its step".into());
        }
        Ok(())
    }

    /// Number of dispatch steps in the run.
    pub fn steps(&self) -> usize {
        (self.total_duration_min / self.dispatch_step_min.max(1)) as usize
    }

    pub fn formation_times(&self) -> impl Iterator<Item = u32> {
        (0..self.total_duration_min).step_by(self.formation_step_min.max(1) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Flexible,
    Fixed,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Flexible => "flexible",
            Mode::Fixed => "fixed",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flexible" => Ok(Mode::Flexible),
            "fixed" => Ok(Mode::Fixed),
            other => Err(format!("unknown mode `{other}` (expected flexible or fixed)")),
        }
    }
}

/// Topology decided at one formation event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationEvent {
    pub t_min: u32,
    pub solution: FormationSolution,
    /// Snapshot the MILP saw; `None` in fixed mode.
    pub snapshot: Option<FormationSnapshot>,
    pub node_count: u64,
    pub lp_iterations: u64,
    /// Largest `|z - x_f x_t|` after rounding (flexible mode only).
    pub mccormick_gap: f64,
    pub solve_ms: f64,
}

/// Per-zone outcome of one dispatch step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneStep {
    pub t_min: u32,
    pub zone: ZoneId,
    pub microgrid: Option<usize>,
    pub load_kw: f64,
    pub served_kw: f64,
    pub pv_available_kw: f64,
    pub pv_used_kw: f64,
    /// Out of service for a switching interval.
    pub switching: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyChange {
    pub t_min: u32,
    pub zone: ZoneId,
    pub from: Option<usize>,
    pub to: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorationRun {
    pub scenario: String,
    pub fingerprint: String,
    pub mode: Mode,
    pub seed: u64,
    pub zones: Vec<ZoneId>,
    pub critical: BTreeSet<ZoneId>,
    pub feeder_of: BTreeMap<ZoneId, u32>,
    pub microgrids: usize,
    pub step_min: u32,
    pub events: Vec<FormationEvent>,
    /// Microgrid states right after each formation event's topology is
    /// applied.
    pub states: Vec<Vec<MicrogridState>>,
    pub dispatch: Vec<DispatchStep>,
    pub zone_steps: Vec<ZoneStep>,
    pub initial_resources: Vec<(f64, f64)>,
}

#[derive(Debug, Error)]
pub enum RunFailure {
    #[error(transparent)]
    Formation(#[from] FormationError),
    #[error(transparent)]
    Ems(#[from] EmsError),
}

/// A failed run together with everything simulated before the failure.
#[derive(Debug, Error)]
#[error("restoration stopped at minute {t_min}: {cause}")]
pub struct RunError {
    pub t_min: u32,
    pub cause: RunFailure,
    pub partial: Box<RestorationRun>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub solver: SolverOptions,
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
}

fn sample(load: &Profile, pv: &Profile, step: usize, zones: &[ZoneId]) -> ZoneSample {
    ZoneSample {
        load_kw: zones.iter().zip(&load.values[step]).map(|(&z, &v)| (z, v)).collect(),
        pv_kw: zones.iter().zip(&pv.values[step]).map(|(&z, &v)| (z, v)).collect(),
    }
}

fn aggregate(p: &Profile, from: usize, to: usize, how: Aggregation) -> Vec<f64> {
    let n = p.values[0].len();
    let rows = &p.values[from..to];
    (0..n)
        .map(|i| match how {
            Aggregation::Mean => rows.iter().map(|r| r[i]).sum::<f64>() / rows.len() as f64,
            Aggregation::Max => rows.iter().map(|r| r[i]).fold(0.0, f64::max),
        })
        .collect()
}

fn step_snapshot(scenario: &Scenario, load: &Profile, pv: &Profile, k: usize) -> FormationSnapshot {
    let tl = &scenario.timeline;
    let per = (tl.formation_step_min / tl.dispatch_step_min) as usize;
    let from = k * per;
    let to = (from + per).min(tl.steps());
    let how = scenario.forecast.aggregation;
    FormationSnapshot::new(k, aggregate(load, from, to, how), aggregate(pv, from, to, how))
}

/// Forecast snapshot of formation step `k` with every source at its rated
/// injection. `None` past the end of the run.
pub fn formation_snapshot(scenario: &Scenario, k: usize, seed: u64) -> Option<FormationSnapshot> {
    if k >= scenario.timeline.formation_times().count() {
        return None;
    }
    let (load, pv) = scenario.forecasts(seed);
    Some(step_snapshot(scenario, &load, &pv, k))
}

/// Injection each source can sustain over `hours`, limited by power rating
/// and remaining stored energy.
fn sustainable_injection(states: &[MicrogridState], hours: f64) -> Vec<f64> {
    states
        .iter()
        .map(|s| {
            let r = &s.resource;
            r.battery_power_kw.min(s.soc_kwh / hours) + r.diesel_power_kw.min(s.fuel_kwh / hours)
        })
        .collect()
}

/// Runs a restoration with the given energy manager.
pub fn run_with(
    scenario: &Scenario,
    mode: Mode,
    ems: &dyn EnergyManager,
    options: &RunOptions,
) -> Result<RestorationRun, RunError> {
    let tl = &scenario.timeline;
    let g0 = &scenario.graph;
    let zones: Vec<ZoneId> = g0.nodes().iter().map(|n| n.id).collect();
    let seed = options.seed.unwrap_or(scenario.seed);
    let (fc_load, fc_pv) = scenario.forecasts(seed);
    let step_min = tl.dispatch_step_min;
    let total_steps = tl.steps();
    let per_slot = (tl.schedule_step_min / step_min) as usize;
    let per_window = (tl.dispatch_horizon_min / step_min) as usize;

    let mut states: Vec<MicrogridState> = g0
        .resources()
        .iter()
        .enumerate()
        .map(|(k, r)| MicrogridState::new(k, r))
        .collect();
    let mut run = RestorationRun {
        scenario: scenario.name.clone(),
        fingerprint: scenario.fingerprint(),
        mode,
        seed,
        zones: zones.clone(),
        critical: g0.nodes().iter().filter(|n| n.is_critical).map(|n| n.id).collect(),
        feeder_of: g0.nodes().iter().map(|n| (n.id, n.feeder_id)).collect(),
        microgrids: states.len(),
        step_min,
        events: Vec::new(),
        states: Vec::new(),
        dispatch: Vec::with_capacity(total_steps * states.len()),
        zone_steps: Vec::with_capacity(total_steps * zones.len()),
        initial_resources: states.iter().map(|s| (s.soc_kwh, s.fuel_kwh)).collect(),
    };
    let fail = |run: RestorationRun, t_min: u32, cause: RunFailure| RunError {
        t_min,
        cause,
        partial: Box::new(run),
    };

    let mut applied: Option<FormationSolution> = None;
    let mut topos: Vec<MicrogridTopology> = Vec::new();
    let mut plans = Vec::new();
    let mut graph: ZoneGraph;

    for step in 0..total_steps {
        let t = step as u32 * step_min;
        let mut switching: BTreeSet<ZoneId> = BTreeSet::new();

        if t % tl.formation_step_min == 0 {
            graph = scenario.graph_at(t);
            let event = match mode {
                Mode::Fixed => {
                    let mut sol =
                        formation::fixed_topology_solution(&graph).map_err(|e| fail(run.clone(), t, e.into()))?;
                    sol.step_index = run.events.len();
                    FormationEvent {
                        t_min: t,
                        solution: sol,
                        snapshot: None,
                        node_count: 0,
                        lp_iterations: 0,
                        mccormick_gap: 0.0,
                        solve_ms: 0.0,
                    }
                }
                Mode::Flexible => {
                    let remaining_h = (tl.total_duration_min - t) as f64 / 60.0;
                    let hours = remaining_h.min(tl.formation_horizon_min as f64 / 60.0);
                    let snap = step_snapshot(scenario, &fc_load, &fc_pv, run.events.len())
                        .with_caps(sustainable_injection(&states, hours));
                    let prev = match &applied {
                        Some(p) => p.clone(),
                        None => {
                            formation::fixed_topology_solution(&graph).map_err(|e| fail(run.clone(), t, e.into()))?
                        }
                    };
                    let out =
                        formation::solve_formation(&graph, &snap, &scenario.weights, Some(&prev), &options.solver)
                            .map_err(|e| fail(run.clone(), t, e.into()))?;
                    let gap = out.problem.vars.mccormick_gap(&graph, &out.report.values);
                    debug!(
                        "formation at {t} min: objective {:.3}, {} nodes, {} pivots",
                        out.solution.objective_value, out.report.node_count, out.report.lp_iterations
                    );
                    FormationEvent {
                        t_min: t,
                        solution: out.solution,
                        snapshot: Some(snap),
                        node_count: out.report.node_count,
                        lp_iterations: out.report.lp_iterations,
                        mccormick_gap: gap,
                        solve_ms: out.report.wall_time.as_secs_f64() * 1e3,
                    }
                }
            };
            if let Some(prev) = &applied {
                for (&z, &k) in &event.solution.assignment {
                    if prev.assignment.get(&z).copied().flatten() != k && k.is_some() {
                        switching.insert(z);
                    }
                }
            }
            if !switching.is_empty() {
                info!("minute {t}: zones {switching:?} change microgrid");
            }
            let closed = event.solution.closed_edges();
            topos = states
                .iter()
                .map(|s| MicrogridTopology::new(&graph, &closed, s.gfm_node))
                .collect();
            for (s, topo) in states.iter_mut().zip(&topos) {
                s.member_zones = topo.members();
                s.served.retain(|z, _| s.member_zones.contains(z));
            }
            applied = Some(event.solution.clone());
            run.events.push(event);
            run.states.push(states.clone());
            plans.clear();
        }

        if plans.is_empty() || t % RESCHEDULE_MIN.min(tl.formation_step_min) == 0 {
            let end = (step + (tl.schedule_horizon_min / step_min) as usize).min(total_steps);
            let forecast: Vec<ZoneSample> = (step..end)
                .step_by(per_slot)
                .map(|s0| {
                    let s1 = (s0 + per_slot).min(end);
                    let samples: Vec<ZoneSample> = (s0..s1).map(|s| sample(&fc_load, &fc_pv, s, &zones)).collect();
                    ZoneSample::mean(&samples)
                })
                .collect();
            plans.clear();
            for (s, topo) in states.iter().zip(&topos) {
                let plan = ems
                    .schedule(s, topo, &forecast, t, tl.schedule_step_min)
                    .map_err(|e| fail(run.clone(), t, e.into()))?;
                plans.push(plan);
            }
        }

        // dispatch one window at a time; switching zones sit out its first
        // step
        if step % per_window == 0 {
            let end = (step + per_window).min(total_steps);
            let actuals: Vec<ZoneSample> = (step..end)
                .map(|s| sample(&scenario.load, &scenario.pv, s, &zones))
                .collect();
            let mut by_step: Vec<Vec<&DispatchStep>> = vec![Vec::new(); end - step];
            let mut records = Vec::new();
            for ((s, topo), plan) in states.iter_mut().zip(&topos).zip(&plans) {
                let blocked: BTreeSet<ZoneId> = switching.intersection(&topo.members()).copied().collect();
                records.push(ems.dispatch(s, topo, plan, &actuals, t, step_min, &blocked));
            }
            for rec in &records {
                for (i, st) in rec.steps.iter().enumerate() {
                    by_step[i].push(st);
                }
            }
            let assignment = &applied
                .as_ref()
                .expect("a formation event precedes dispatch")
                .assignment;
            for (i, steps) in by_step.iter().enumerate() {
                let ti = t + i as u32 * step_min;
                let a = &actuals[i];
                for &z in &zones {
                    let k = assignment.get(&z).copied().flatten();
                    let st = k.and_then(|k| steps.iter().find(|s| s.microgrid_id == k));
                    let served = st.and_then(|s| s.served_kw.get(&z)).copied().unwrap_or(0.0);
                    let used = st.and_then(|s| s.pv_used_kw.get(&z)).copied().unwrap_or(0.0);
                    run.zone_steps.push(ZoneStep {
                        t_min: ti,
                        zone: z,
                        microgrid: k,
                        load_kw: a.load_kw[&z],
                        served_kw: served,
                        pv_available_kw: a.pv_kw[&z],
                        pv_used_kw: used,
                        switching: i == 0 && switching.contains(&z),
                    });
                }
            }
            for rec in records {
                run.dispatch.extend(rec.steps);
            }
        }
    }
    Ok(run)
}

/// Runs a restoration with the built-in greedy energy manager.
pub fn run(scenario: &Scenario, mode: Mode, options: &RunOptions) -> Result<RestorationRun, RunError> {
    run_with(scenario, mode, &crate::ems::GreedyEms, options)
}

/// Chronological membership changes between consecutive formation events.
pub fn diff_topologies(run: &RestorationRun) -> Vec<TopologyChange> {
    let mut out = Vec::new();
    for pair in run.events.windows(2) {
        let (a, b) = (&pair[0].solution, &pair[1].solution);
        for (&z, &to) in &b.assignment {
            let from = a.assignment.get(&z).copied().flatten();
            if from != to {
                out.push(TopologyChange {
                    t_min: pair[1].t_min,
                    zone: z,
                    from,
                    to,
                });
            }
        }
    }
    out
}
