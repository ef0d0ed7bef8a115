//! Multi-microgrid formation for multi-feeder service restoration.
//!
//! A distribution system is modelled as a graph of load zones joined by
//! switches ([`netmodel`]). At every formation event a MILP ([`formation`])
//! picks switch statuses that split the graph into one radial microgrid per
//! grid-forming resource; the embedded branch-and-bound solver ([`solver`])
//! solves it exactly. Between events each microgrid schedules and dispatches
//! its battery, diesel and PV ([`ems`]), driven by [`coordinator`].
//! [`scenario`] reads inputs and [`report`] turns runs into metrics.

pub mod coordinator;
pub mod ems;
pub mod formation;
pub mod netmodel;
pub mod report;
pub mod scenario;
pub mod solver;

pub use coordinator::{diff_topologies, run, run_with, Mode, RestorationRun, RunError, RunOptions, Timeline};
pub use formation::{
    build_milp, decode, fixed_topology_solution, solve_formation, FormationError, FormationSnapshot, FormationSolution,
    FormationWeights,
};
pub use netmodel::{ZoneGraph, ZoneId};
pub use scenario::{fixture_two_feeder, load_scenario, open_scenario, Scenario, ScenarioError};
