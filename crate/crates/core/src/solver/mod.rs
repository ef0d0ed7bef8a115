//! Exact MILP solver for desk-scale models.
//!
//! [`solve_lp`] solves the continuous relaxation with a dense bounded
//! simplex; [`solve_milp`] adds best-first branch-and-bound over the integer
//! variables. [`enumerate`] holds the brute-force topology oracle used to
//! cross-check formation solves.

mod branch;
pub mod enumerate;
mod lp_format;
mod simplex;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use branch::solve_milp_with;
pub use enumerate::{enumerate_optimal, EnumerationResult};

/// Constraint feasibility tolerance for reported solutions.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Integrality tolerance.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Pruning epsilon for the branch-and-bound bound test.
pub const PRUNE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub integer: bool,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// A minimization MILP with sparse rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MilpModel {
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    /// Constant added to the objective.
    pub objective_offset: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("integer variable `{0}` needs finite bounds")]
    UnboundedInteger(String),
    #[error("variable `{name}` has lower bound {lower} above upper bound {upper}")]
    InvertedBounds { name: String, lower: f64, upper: f64 },
    #[error("constraint `{constraint}` references unknown variable {var}")]
    UnknownVariable { constraint: String, var: usize },
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, integer: bool, objective: f64) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
            integer,
            objective,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_binary(&mut self, name: impl Into<String>, objective: f64) -> VarId {
        self.add_var(name, 0.0, 1.0, true, objective)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64, objective: f64) -> VarId {
        self.add_var(name, lower, upper, false, objective)
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(VarId, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            relation,
            rhs,
        });
    }

    pub fn num_integers(&self) -> usize {
        self.vars.iter().filter(|v| v.integer).count()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        for v in &self.vars {
            if v.lower > v.upper {
                return Err(SolverError::InvertedBounds {
                    name: v.name.clone(),
                    lower: v.lower,
                    upper: v.upper,
                });
            }
            if v.integer && !(v.lower.is_finite() && v.upper.is_finite()) {
                return Err(SolverError::UnboundedInteger(v.name.clone()));
            }
        }
        for c in &self.constraints {
            if let Some(&(VarId(j), _)) = c.terms.iter().find(|(v, _)| v.0 >= self.vars.len()) {
                return Err(SolverError::UnknownVariable {
                    constraint: c.name.clone(),
                    var: j,
                });
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective_offset + self.vars.iter().zip(values).map(|(v, x)| v.objective * x).sum::<f64>()
    }

    /// Largest absolute violation of any row or variable bound.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &x) in self.vars.iter().zip(values) {
            worst = worst.max(v.lower - x).max(x - v.upper);
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(v, a)| a * values[v.0]).sum();
            let viol = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// Largest distance of an integer variable from the nearest integer.
    pub fn max_fractionality(&self, values: &[f64]) -> f64 {
        self.vars
            .iter()
            .zip(values)
            .filter(|(v, _)| v.integer)
            .map(|(_, x)| (x - x.round()).abs())
            .fold(0.0, f64::max)
    }

    /// Copy of the model with every integrality flag cleared.
    pub fn relaxed(&self) -> MilpModel {
        let mut m = self.clone();
        for v in &mut m.vars {
            v.integer = false;
        }
        m
    }

    /// Writes the model in CPLEX LP text format.
    pub fn to_lp_string(&self) -> String {
        lp_format::write_lp(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    pub node_count: u64,
    pub lp_iterations: u64,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Branch-and-bound node budget.
    pub node_limit: u64,
    /// Pivot cap per LP solve; `None` uses `100 * (rows + cols)`.
    pub pivot_limit: Option<u64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            node_limit: 1_000_000,
            pivot_limit: None,
        }
    }
}

pub(crate) struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    pub(crate) fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        {
            Stopwatch(std::time::Instant::now())
        }
        #[cfg(target_arch = "wasm32")]
        {
            Stopwatch()
        }
    }

    pub(crate) fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.0.elapsed()
        }
        #[cfg(target_arch = "wasm32")]
        {
            Duration::ZERO
        }
    }
}

/// Solves the continuous relaxation of `model` (integrality is ignored).
pub fn solve_lp(model: &MilpModel) -> Result<SolveReport, SolverError> {
    solve_lp_with(model, &SolverOptions::default())
}

pub fn solve_lp_with(model: &MilpModel, options: &SolverOptions) -> Result<SolveReport, SolverError> {
    model.validate()?;
    let clock = Stopwatch::start();
    let mut tab = simplex::Tableau::new(model);
    if let Some(cap) = options.pivot_limit {
        tab.set_iteration_cap(cap);
    }
    let outcome = tab.solve_primal();
    let status = match outcome {
        simplex::LpOutcome::Optimal => SolveStatus::Optimal,
        simplex::LpOutcome::Infeasible => SolveStatus::Infeasible,
        simplex::LpOutcome::Unbounded => SolveStatus::Unbounded,
        simplex::LpOutcome::IterationLimit => SolveStatus::IterationLimit,
    };
    let values = tab.structural_values();
    let objective = if status == SolveStatus::Optimal {
        model.objective_value(&values)
    } else {
        f64::NAN
    };
    Ok(SolveReport {
        status,
        objective,
        values,
        node_count: 0,
        lp_iterations: tab.iterations,
        wall_time: clock.elapsed(),
    })
}

/// Solves `model` to proven optimality with branch-and-bound.
pub fn solve_milp(model: &MilpModel) -> Result<SolveReport, SolverError> {
    solve_milp_with(model, &SolverOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_lower_bound_row() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 10.0, 1.0);
        m.add_constraint("c", vec![(x, 1.0)], Relation::Ge, 3.0);
        let r = solve_lp(&m).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", f64::NEG_INFINITY, f64::INFINITY, 0.0);
        m.add_constraint("a", vec![(x, 1.0)], Relation::Le, 1.0);
        m.add_constraint("b", vec![(x, 1.0)], Relation::Ge, 2.0);
        assert_eq!(solve_lp(&m).unwrap().status, SolveStatus::Infeasible);
        assert_eq!(solve_milp(&m).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_ray_is_reported() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, f64::INFINITY, -1.0);
        m.add_constraint("a", vec![(x, 1.0)], Relation::Ge, 1.0);
        assert_eq!(solve_lp(&m).unwrap().status, SolveStatus::Unbounded);
    }

    #[test]
    fn two_item_knapsack() {
        // max 3a + 2b, a + b <= 1
        let mut m = MilpModel::new();
        let a = m.add_binary("a", -3.0);
        let b = m.add_binary("b", -2.0);
        m.add_constraint("cap", vec![(a, 1.0), (b, 1.0)], Relation::Le, 1.0);
        let r = solve_milp(&m).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective + 3.0).abs() < 1e-9);
        assert!((r.values[a.0] - 1.0).abs() < 1e-9);
        assert!(r.values[b.0].abs() < 1e-9);
    }

    #[test]
    fn pure_lp_milp_matches_lp() {
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", 0.0, 4.0, -1.0);
        let y = m.add_continuous("y", 0.0, 4.0, -2.0);
        m.add_constraint("c1", vec![(x, 1.0), (y, 1.0)], Relation::Le, 5.0);
        m.add_constraint("c2", vec![(x, -1.0), (y, 2.0)], Relation::Le, 6.0);
        let lp = solve_lp(&m).unwrap();
        let ip = solve_milp(&m).unwrap();
        assert_eq!(lp.status, SolveStatus::Optimal);
        assert_eq!(lp.values, ip.values);
        assert_eq!(lp.objective, ip.objective);
    }

    #[test]
    fn general_integer_branching() {
        // min -x - y, 2x + 2y <= 7, x - y = 0.5 relaxed gives fractional
        let mut m = MilpModel::new();
        let x = m.add_var("x", 0.0, 10.0, true, -1.0);
        let y = m.add_var("y", 0.0, 10.0, true, -1.0);
        m.add_constraint("c", vec![(x, 2.0), (y, 2.0)], Relation::Le, 7.0);
        m.add_constraint("d", vec![(x, 3.0), (y, -1.0)], Relation::Le, 4.5);
        let r = solve_milp(&m).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective + 3.0).abs() < 1e-9);
        assert!(m.max_fractionality(&r.values) < 1e-9);
        assert!(m.max_violation(&r.values) < FEASIBILITY_TOL);
    }

    #[test]
    fn equality_rows_with_free_variables() {
        // x + y = 4, x - y = 1 -> x = 2.5, y = 1.5
        let mut m = MilpModel::new();
        let x = m.add_continuous("x", f64::NEG_INFINITY, f64::INFINITY, 1.0);
        let y = m.add_continuous("y", f64::NEG_INFINITY, f64::INFINITY, 1.0);
        m.add_constraint("s", vec![(x, 1.0), (y, 1.0)], Relation::Eq, 4.0);
        m.add_constraint("d", vec![(x, 1.0), (y, -1.0)], Relation::Eq, 1.0);
        let r = solve_lp(&m).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.values[x.0] - 2.5).abs() < 1e-9);
        assert!((r.values[y.0] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn integer_without_bounds_is_rejected() {
        let mut m = MilpModel::new();
        m.add_var("n", 0.0, f64::INFINITY, true, 1.0);
        assert!(matches!(solve_milp(&m), Err(SolverError::UnboundedInteger(_))));
    }

    #[test]
    fn node_budget_is_reported_not_truncated() {
        // the relaxation of this model is fractional at the root
        let mut m = MilpModel::new();
        let vars: Vec<_> = (0..8)
            .map(|i| m.add_binary(format!("b{i}"), -1.0 - i as f64 * 0.01))
            .collect();
        m.add_constraint("cap", vars.iter().map(|&v| (v, 2.0)).collect(), Relation::Le, 7.0);
        let opts = SolverOptions {
            node_limit: 1,
            pivot_limit: None,
        };
        let r = solve_milp_with(&m, &opts).unwrap();
        assert_eq!(r.status, SolveStatus::IterationLimit);
    }
}
