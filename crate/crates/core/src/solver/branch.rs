//! Best-first branch-and-bound on top of the dense simplex.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;

use log::debug;

use super::simplex::{LpOutcome, Tableau};
use super::{
    MilpModel, SolveReport, SolveStatus, SolverError, SolverOptions, Stopwatch, FEASIBILITY_TOL, INTEGRALITY_TOL,
    PRUNE_EPS,
};

struct OpenNode {
    bound: f64,
    id: u64,
    parent: Rc<Tableau>,
    var: usize,
    lower: f64,
    upper: f64,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for OpenNode {}

impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpenNode {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

/// Most fractional integer variable; ties go to the lowest index.
fn branching_candidate(model: &MilpModel, values: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut best_dist = INTEGRALITY_TOL;
    for (j, v) in model.vars.iter().enumerate() {
        if !v.integer {
            continue;
        }
        let x = values[j];
        let frac = x - x.floor();
        let dist = frac.min(1.0 - frac);
        if dist > best_dist + 1e-12 {
            best_dist = dist;
            best = Some((j, x));
        }
    }
    best
}

struct Incumbent {
    objective: f64,
    values: Vec<f64>,
}

/// Re-solves the LP from scratch with every integer variable fixed at its
/// rounded incumbent value, which removes drift accumulated by warm starts.
fn polish(model: &MilpModel, values: &[f64], options: &SolverOptions) -> Option<(f64, Vec<f64>, u64)> {
    let mut fixed = model.clone();
    for (v, &x) in fixed.vars.iter_mut().zip(values) {
        if v.integer {
            let r = x.round();
            v.lower = r;
            v.upper = r;
        }
    }
    let mut tab = Tableau::new(&fixed);
    if let Some(cap) = options.pivot_limit {
        tab.set_iteration_cap(cap);
    }
    if tab.solve_primal() != LpOutcome::Optimal {
        return None;
    }
    let vals = tab.structural_values();
    Some((model.objective_value(&vals), vals, tab.iterations))
}

pub fn solve_milp_with(model: &MilpModel, options: &SolverOptions) -> Result<SolveReport, SolverError> {
    model.validate()?;
    if model.num_integers() == 0 {
        return super::solve_lp_with(model, options);
    }
    let clock = Stopwatch::start();
    let mut root = Tableau::new(model);
    if let Some(cap) = options.pivot_limit {
        root.set_iteration_cap(cap);
    }
    let mut lp_iterations = 0u64;
    let outcome = root.solve_primal();
    lp_iterations += root.iterations;
    let finish = |status, incumbent: Option<Incumbent>, nodes, iters| {
        let (objective, values) = match incumbent {
            Some(inc) if status == SolveStatus::Optimal => (inc.objective, inc.values),
            Some(inc) => (f64::NAN, inc.values),
            None => (f64::NAN, vec![f64::NAN; model.vars.len()]),
        };
        Ok(SolveReport {
            status,
            objective,
            values,
            node_count: nodes,
            lp_iterations: iters,
            wall_time: clock.elapsed(),
        })
    };
    match outcome {
        LpOutcome::Optimal => {}
        LpOutcome::Infeasible => return finish(SolveStatus::Infeasible, None, 1, lp_iterations),
        LpOutcome::Unbounded => return finish(SolveStatus::Unbounded, None, 1, lp_iterations),
        LpOutcome::IterationLimit => return finish(SolveStatus::IterationLimit, None, 1, lp_iterations),
    }

    let mut incumbent: Option<Incumbent> = None;
    let mut heap = BinaryHeap::new();
    let mut next_id = 0u64;
    let mut nodes = 1u64;

    let consider = |tab: Tableau,
                    heap: &mut BinaryHeap<OpenNode>,
                    incumbent: &mut Option<Incumbent>,
                    next_id: &mut u64,
                    iters: &mut u64| {
        let values = tab.structural_values();
        let bound = model.objective_value(&values);
        if let Some(inc) = incumbent.as_ref() {
            if bound >= inc.objective - PRUNE_EPS {
                return;
            }
        }
        match branching_candidate(model, &values) {
            None => {
                let (objective, values) = match polish(model, &values, options) {
                    Some((obj, vals, it)) if model.max_violation(&vals) <= FEASIBILITY_TOL => {
                        *iters += it;
                        (obj, vals)
                    }
                    _ => (bound, values),
                };
                if incumbent
                    .as_ref()
                    .is_none_or(|inc| objective < inc.objective - PRUNE_EPS)
                {
                    debug!("incumbent {objective}");
                    *incumbent = Some(Incumbent { objective, values });
                }
            }
            Some((var, x)) => {
                let (lo, hi) = tab.bounds(var);
                let parent = Rc::new(tab);
                for (lower, upper) in [(lo, x.floor()), (x.ceil(), hi)] {
                    heap.push(OpenNode {
                        bound,
                        id: *next_id,
                        parent: Rc::clone(&parent),
                        var,
                        lower,
                        upper,
                    });
                    *next_id += 1;
                }
            }
        }
    };

    consider(root, &mut heap, &mut incumbent, &mut next_id, &mut lp_iterations);

    while let Some(node) = heap.pop() {
        if let Some(inc) = incumbent.as_ref() {
            if node.bound >= inc.objective - PRUNE_EPS {
                continue;
            }
        }
        if nodes >= options.node_limit {
            return finish(SolveStatus::IterationLimit, incumbent, nodes, lp_iterations);
        }
        nodes += 1;
        let mut tab = (*node.parent).clone();
        drop(node.parent);
        let before = tab.iterations;
        tab.set_bounds(node.var, node.lower, node.upper);
        let outcome = tab.solve_dual();
        lp_iterations += tab.iterations - before;
        match outcome {
            LpOutcome::Optimal => {}
            LpOutcome::Infeasible => continue,
            LpOutcome::Unbounded => return finish(SolveStatus::Unbounded, None, nodes, lp_iterations),
            LpOutcome::IterationLimit => return finish(SolveStatus::IterationLimit, incumbent, nodes, lp_iterations),
        }
        consider(tab, &mut heap, &mut incumbent, &mut next_id, &mut lp_iterations);
    }

    match incumbent {
        Some(inc) => finish(SolveStatus::Optimal, Some(inc), nodes, lp_iterations),
        None => finish(SolveStatus::Infeasible, None, nodes, lp_iterations),
    }
}
