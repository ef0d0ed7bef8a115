//! Dense bounded-variable simplex.
//!
//! Every row `i` of the model is stored as `a_i x + s_i = b_i` with a slack
//! whose bounds encode the relation (`<=` gives `s >= 0`, `>=` gives
//! `s <= 0`, `=` fixes `s = 0`). The tableau holds `B^-1 [A | I]` densely,
//! which is fine for the desk-scale models built by the formation layer.
//! A primal simplex (composite phase 1 on the sum of infeasibilities, then
//! phase 2) solves from any basis; a dual simplex re-optimizes after bound
//! changes, which is what branch-and-bound uses to warm start child nodes.

use super::{MilpModel, Relation};

/// Reduced-cost tolerance.
const DUAL_TOL: f64 = 1e-9;
/// Bound-violation tolerance used while pivoting.
const PRIMAL_TOL: f64 = 1e-9;
/// Smallest pivot element accepted.
const PIVOT_TOL: f64 = 1e-9;
/// Consecutive-or-not degenerate pivots before switching to Bland's rule.
const BLAND_AFTER: u64 = 1000;
/// Pivots between refactorizations of the basis.
const REFACTOR_EVERY: u64 = 150;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpOutcome {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone)]
pub(crate) struct Tableau {
    rows: usize,
    cols: usize,
    structurals: usize,
    // original data, kept for refactorization
    a: Vec<f64>,
    rhs: Vec<f64>,
    tab: Vec<f64>,
    x: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    d: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<usize>,
    pub(crate) iterations: u64,
    degenerate: u64,
    since_refactor: u64,
    iteration_cap: u64,
}

const NONBASIC: usize = usize::MAX;

fn initial_value(lb: f64, ub: f64) -> f64 {
    if lb.is_finite() {
        lb
    } else if ub.is_finite() {
        ub
    } else {
        0.0
    }
}

impl Tableau {
    /// Builds the slack-basis tableau for the continuous relaxation of `model`.
    pub(crate) fn new(model: &MilpModel) -> Self {
        let rows = model.constraints.len();
        let structurals = model.vars.len();
        let cols = structurals + rows;
        let mut a = vec![0.0; rows * cols];
        let mut rhs = Vec::with_capacity(rows);
        let mut lb = Vec::with_capacity(cols);
        let mut ub = Vec::with_capacity(cols);
        let mut cost = Vec::with_capacity(cols);
        for v in &model.vars {
            lb.push(v.lower);
            ub.push(v.upper);
            cost.push(v.objective);
        }
        for (i, c) in model.constraints.iter().enumerate() {
            for &(var, coef) in &c.terms {
                a[i * cols + var.0] += coef;
            }
            a[i * cols + structurals + i] = 1.0;
            rhs.push(c.rhs);
            let (slo, shi) = match c.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lb.push(slo);
            ub.push(shi);
            cost.push(0.0);
        }
        let mut x: Vec<f64> = (0..cols).map(|j| initial_value(lb[j], ub[j])).collect();
        for i in 0..rows {
            let mut s = rhs[i];
            for j in 0..structurals {
                s -= a[i * cols + j] * x[j];
            }
            x[structurals + i] = s;
        }
        let basis: Vec<usize> = (structurals..cols).collect();
        let mut row_of = vec![NONBASIC; cols];
        for (i, &b) in basis.iter().enumerate() {
            row_of[b] = i;
        }
        let tab = a.clone();
        let mut t = Tableau {
            rows,
            cols,
            structurals,
            a,
            rhs,
            tab,
            x,
            lb,
            ub,
            cost,
            d: vec![0.0; cols],
            basis,
            row_of,
            iterations: 0,
            degenerate: 0,
            since_refactor: 0,
            iteration_cap: 100 * (rows + structurals) as u64,
        };
        t.recompute_reduced_costs();
        t
    }

    pub(crate) fn set_iteration_cap(&mut self, cap: u64) {
        self.iteration_cap = cap;
    }

    pub(crate) fn structural_values(&self) -> Vec<f64> {
        self.x[..self.structurals].to_vec()
    }

    pub(crate) fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lb[j], self.ub[j])
    }

    /// Changes the bounds of a structural variable, keeping the basis.
    /// Nonbasic variables are moved onto the new box and basic values are
    /// shifted accordingly; basic variables may become primal infeasible,
    /// which the dual simplex then repairs.
    pub(crate) fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lb[j] = lower;
        self.ub[j] = upper;
        if self.row_of[j] == NONBASIC {
            let old = self.x[j];
            // the side that keeps the reduced cost dual feasible
            let new = if self.d[j] < -DUAL_TOL && upper.is_finite() {
                upper
            } else if self.d[j] > DUAL_TOL && lower.is_finite() {
                lower
            } else if old < lower {
                lower
            } else if old > upper {
                upper
            } else {
                old
            };
            let delta = new - old;
            if delta != 0.0 {
                self.x[j] = new;
                for i in 0..self.rows {
                    let t = self.tab[i * self.cols + j];
                    if t != 0.0 {
                        let b = self.basis[i];
                        self.x[b] -= t * delta;
                    }
                }
            }
        }
    }

    fn recompute_reduced_costs(&mut self) {
        let cols = self.cols;
        let mut d = self.cost.clone();
        for i in 0..self.rows {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.tab[i * cols..(i + 1) * cols];
                for (dj, t) in d.iter_mut().zip(row) {
                    *dj -= cb * t;
                }
            }
        }
        for &b in &self.basis {
            d[b] = 0.0;
        }
        self.d = d;
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let piv = self.tab[r * cols + j];
        {
            let row = &mut self.tab[r * cols..(r + 1) * cols];
            for v in row.iter_mut() {
                *v /= piv;
            }
            row[j] = 1.0;
        }
        let pivot_row: Vec<f64> = self.tab[r * cols..(r + 1) * cols].to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.tab[i * cols + j];
            if f != 0.0 {
                let row = &mut self.tab[i * cols..(i + 1) * cols];
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[j] = 0.0;
            }
        }
        let f = self.d[j];
        if f != 0.0 {
            for (dv, p) in self.d.iter_mut().zip(&pivot_row) {
                *dv -= f * p;
            }
        }
        self.d[j] = 0.0;
        let leaving = self.basis[r];
        self.row_of[leaving] = NONBASIC;
        self.basis[r] = j;
        self.row_of[j] = r;
        self.iterations += 1;
        self.since_refactor += 1;
    }

    fn can_increase(&self, j: usize) -> bool {
        self.x[j] < self.ub[j] - PRIMAL_TOL
    }

    fn can_decrease(&self, j: usize) -> bool {
        self.x[j] > self.lb[j] + PRIMAL_TOL
    }

    fn use_bland(&self) -> bool {
        self.degenerate > BLAND_AFTER
    }

    fn primal_infeasibility(&self) -> f64 {
        self.basis
            .iter()
            .map(|&b| (self.lb[b] - self.x[b]).max(self.x[b] - self.ub[b]).max(0.0))
            .sum()
    }

    /// Rebuilds `B^-1 [A | I]`, basic values and reduced costs from the
    /// original data. Returns false if the current basis is numerically
    /// singular, in which case the tableau is reset to the slack basis.
    pub(crate) fn refactor(&mut self) -> bool {
        let m = self.rows;
        let cols = self.cols;
        self.since_refactor = 0;
        if m == 0 {
            self.recompute_reduced_costs();
            return true;
        }
        // Gauss-Jordan on [B | A_full]
        let width = m + cols;
        let mut work = vec![0.0; m * width];
        for i in 0..m {
            for (k, &b) in self.basis.iter().enumerate() {
                work[i * width + k] = self.a[i * cols + b];
            }
            work[i * width + m..(i + 1) * width].copy_from_slice(&self.a[i * cols..(i + 1) * cols]);
        }
        for k in 0..m {
            let mut best = k;
            let mut best_abs = work[k * width + k].abs();
            for i in k + 1..m {
                let v = work[i * width + k].abs();
                if v > best_abs {
                    best = i;
                    best_abs = v;
                }
            }
            if best_abs < 1e-11 {
                self.reset_to_slack_basis();
                return false;
            }
            if best != k {
                for c in 0..width {
                    work.swap(k * width + c, best * width + c);
                }
            }
            let piv = work[k * width + k];
            for c in 0..width {
                work[k * width + c] /= piv;
            }
            let prow: Vec<f64> = work[k * width..(k + 1) * width].to_vec();
            for i in 0..m {
                if i != k {
                    let f = work[i * width + k];
                    if f != 0.0 {
                        for c in 0..width {
                            work[i * width + c] -= f * prow[c];
                        }
                    }
                }
            }
        }
        for i in 0..m {
            self.tab[i * cols..(i + 1) * cols].copy_from_slice(&work[i * width + m..(i + 1) * width]);
        }
        // x_B = B^-1 (b - N x_N)
        let mut resid = self.rhs.clone();
        for i in 0..m {
            for j in 0..cols {
                if self.row_of[j] == NONBASIC {
                    let aij = self.a[i * cols + j];
                    if aij != 0.0 {
                        resid[i] -= aij * self.x[j];
                    }
                }
            }
        }
        // B^-1 is the slack block of the refreshed tableau
        for r in 0..m {
            let mut v = 0.0;
            for i in 0..m {
                v += self.tab[r * cols + self.structurals + i] * resid[i];
            }
            let b = self.basis[r];
            self.x[b] = v;
        }
        self.recompute_reduced_costs();
        true
    }

    fn reset_to_slack_basis(&mut self) {
        let cols = self.cols;
        for j in 0..cols {
            self.row_of[j] = NONBASIC;
        }
        for i in 0..self.rows {
            let b = self.structurals + i;
            self.basis[i] = b;
            self.row_of[b] = i;
        }
        for j in 0..self.structurals {
            self.x[j] = self.x[j].clamp(
                if self.lb[j].is_finite() {
                    self.lb[j]
                } else {
                    f64::NEG_INFINITY
                },
                if self.ub[j].is_finite() {
                    self.ub[j]
                } else {
                    f64::INFINITY
                },
            );
            if !self.x[j].is_finite() {
                self.x[j] = initial_value(self.lb[j], self.ub[j]);
            }
        }
        self.tab.copy_from_slice(&self.a);
        for i in 0..self.rows {
            let mut s = self.rhs[i];
            for j in 0..self.structurals {
                s -= self.a[i * cols + j] * self.x[j];
            }
            self.x[self.structurals + i] = s;
        }
        self.recompute_reduced_costs();
    }

    fn maybe_refactor(&mut self) {
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor();
        }
    }

    /// Primal simplex from the current basis: phase 1 on the sum of
    /// infeasibilities if needed, then phase 2.
    pub(crate) fn solve_primal(&mut self) -> LpOutcome {
        let start = self.iterations;
        // phase 1
        loop {
            if self.iterations - start > self.iteration_cap {
                return LpOutcome::IterationLimit;
            }
            self.maybe_refactor();
            let phase_cost: Vec<f64> = self
                .basis
                .iter()
                .map(|&b| {
                    if self.x[b] < self.lb[b] - PRIMAL_TOL {
                        -1.0
                    } else if self.x[b] > self.ub[b] + PRIMAL_TOL {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            if phase_cost.iter().all(|&c| c == 0.0) {
                break;
            }
            let cols = self.cols;
            let mut d1 = vec![0.0; cols];
            for (i, &c) in phase_cost.iter().enumerate() {
                if c != 0.0 {
                    let row = &self.tab[i * cols..(i + 1) * cols];
                    for (dv, t) in d1.iter_mut().zip(row) {
                        *dv -= c * t;
                    }
                }
            }
            match self.choose_entering(&d1) {
                None => return LpOutcome::Infeasible,
                Some((j, dir)) => match self.primal_step(j, dir, true) {
                    StepResult::Moved => {}
                    StepResult::Unbounded => {
                        // an unbounded ray in phase 1 still reduces infeasibility
                        // indefinitely only if no basic variable blocks; treat as
                        // numerical trouble and refactor
                        if !self.refactor() {
                            continue;
                        }
                        if self.primal_infeasibility() > PRIMAL_TOL {
                            return LpOutcome::Infeasible;
                        }
                    }
                },
            }
        }
        self.recompute_reduced_costs();
        // phase 2
        loop {
            if self.iterations - start > self.iteration_cap {
                return LpOutcome::IterationLimit;
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor();
                if self.primal_infeasibility() > 1e-7 {
                    return self.solve_primal();
                }
            }
            let d = self.d.clone();
            match self.choose_entering(&d) {
                None => return LpOutcome::Optimal,
                Some((j, dir)) => match self.primal_step(j, dir, false) {
                    StepResult::Moved => {}
                    StepResult::Unbounded => return LpOutcome::Unbounded,
                },
            }
        }
    }

    fn choose_entering(&self, d: &[f64]) -> Option<(usize, f64)> {
        let bland = self.use_bland();
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.cols {
            if self.row_of[j] != NONBASIC {
                continue;
            }
            let dj = d[j];
            let dir = if dj < -DUAL_TOL && self.can_increase(j) {
                1.0
            } else if dj > DUAL_TOL && self.can_decrease(j) {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            let score = dj.abs();
            if score > best_score {
                best_score = score;
                best = Some((j, dir));
            }
        }
        best
    }

    fn primal_step(&mut self, j: usize, dir: f64, phase_one: bool) -> StepResult {
        let cols = self.cols;
        let bland = self.use_bland();
        let mut theta = self.ub[j] - self.lb[j];
        let mut leave: Option<(usize, f64)> = None;
        let mut leave_key = (f64::INFINITY, 0.0f64, usize::MAX);
        for i in 0..self.rows {
            let alpha = self.tab[i * cols + j];
            if alpha.abs() < PIVOT_TOL {
                continue;
            }
            let b = self.basis[i];
            let delta = -dir * alpha;
            let xb = self.x[b];
            let (limit, target) = if delta < 0.0 {
                if phase_one && xb > self.ub[b] + PRIMAL_TOL {
                    ((xb - self.ub[b]) / -delta, self.ub[b])
                } else if self.lb[b].is_finite() && (!phase_one || xb >= self.lb[b] - PRIMAL_TOL) {
                    (((xb - self.lb[b]) / -delta).max(0.0), self.lb[b])
                } else {
                    continue;
                }
            } else if phase_one && xb < self.lb[b] - PRIMAL_TOL {
                ((self.lb[b] - xb) / delta, self.lb[b])
            } else if self.ub[b].is_finite() && (!phase_one || xb <= self.ub[b] + PRIMAL_TOL) {
                (((self.ub[b] - xb) / delta).max(0.0), self.ub[b])
            } else {
                continue;
            };
            // prefer the smallest ratio; among near-ties the largest pivot,
            // or the lowest basic index under Bland's rule
            let better = if limit < leave_key.0 - 1e-12 {
                true
            } else if limit <= leave_key.0 + 1e-12 {
                if bland {
                    b < leave_key.2
                } else {
                    alpha.abs() > leave_key.1
                }
            } else {
                false
            };
            if better {
                leave_key = (limit, alpha.abs(), b);
                leave = Some((i, target));
            }
        }
        if leave.is_some() {
            if leave_key.0 < theta {
                theta = leave_key.0;
            } else {
                leave = None;
            }
        }
        if !theta.is_finite() {
            return StepResult::Unbounded;
        }
        if theta < 1e-12 {
            self.degenerate += 1;
        }
        // apply the move
        if theta != 0.0 {
            self.x[j] += dir * theta;
            for i in 0..self.rows {
                let alpha = self.tab[i * cols + j];
                if alpha != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= dir * theta * alpha;
                }
            }
        }
        match leave {
            None => {
                // bound flip
                self.x[j] = if dir > 0.0 { self.ub[j] } else { self.lb[j] };
                self.iterations += 1;
            }
            Some((r, target)) => {
                let b = self.basis[r];
                self.pivot(r, j);
                self.x[b] = target;
            }
        }
        StepResult::Moved
    }

    /// Dual simplex from a dual-feasible basis. Falls back to the primal
    /// method if dual feasibility has been lost.
    pub(crate) fn solve_dual(&mut self) -> LpOutcome {
        let start = self.iterations;
        let mut dual_degenerate = 0u64;
        loop {
            if self.iterations - start > self.iteration_cap {
                return LpOutcome::IterationLimit;
            }
            self.maybe_refactor();
            if !self.is_dual_feasible() {
                return self.solve_primal();
            }
            // leaving row: largest bound violation
            let mut r = usize::MAX;
            let mut worst = PRIMAL_TOL;
            let mut to_lower = true;
            for i in 0..self.rows {
                let b = self.basis[i];
                let below = self.lb[b] - self.x[b];
                let above = self.x[b] - self.ub[b];
                if below > worst {
                    worst = below;
                    r = i;
                    to_lower = true;
                } else if above > worst {
                    worst = above;
                    r = i;
                    to_lower = false;
                }
            }
            if r == usize::MAX {
                // primal feasible; clean up any remaining reduced-cost slack
                return self.solve_primal();
            }
            let cols = self.cols;
            let bland = dual_degenerate > BLAND_AFTER;
            let mut enter = usize::MAX;
            let mut best_ratio = f64::INFINITY;
            let mut best_alpha = 0.0;
            for j in 0..cols {
                if self.row_of[j] != NONBASIC {
                    continue;
                }
                let alpha = self.tab[r * cols + j];
                if alpha.abs() < PIVOT_TOL {
                    continue;
                }
                let eligible = if to_lower {
                    (alpha < 0.0 && self.can_increase(j)) || (alpha > 0.0 && self.can_decrease(j))
                } else {
                    (alpha > 0.0 && self.can_increase(j)) || (alpha < 0.0 && self.can_decrease(j))
                };
                if !eligible {
                    continue;
                }
                let ratio = self.d[j].abs() / alpha.abs();
                // Bland: first eligible index among ties
                let better =
                    ratio < best_ratio - 1e-12 || (!bland && ratio <= best_ratio + 1e-12 && alpha.abs() > best_alpha);
                if better {
                    best_ratio = ratio;
                    best_alpha = alpha.abs();
                    enter = j;
                }
            }
            if enter == usize::MAX {
                return LpOutcome::Infeasible;
            }
            if best_ratio < 1e-12 {
                dual_degenerate += 1;
            }
            let j = enter;
            let b = self.basis[r];
            let target = if to_lower { self.lb[b] } else { self.ub[b] };
            let alpha = self.tab[r * cols + j];
            let step = (self.x[b] - target) / alpha;
            self.x[j] += step;
            for i in 0..self.rows {
                let t = self.tab[i * cols + j];
                if t != 0.0 {
                    let bi = self.basis[i];
                    self.x[bi] -= t * step;
                }
            }
            self.pivot(r, j);
            self.x[b] = target;
        }
    }

    fn is_dual_feasible(&self) -> bool {
        (0..self.cols).all(|j| {
            if self.row_of[j] != NONBASIC {
                return true;
            }
            let dj = self.d[j];
            !((dj < -1e-7 && self.can_increase(j)) || (dj > 1e-7 && self.can_decrease(j)))
        })
    }
}

enum StepResult {
    Moved,
    Unbounded,
}
