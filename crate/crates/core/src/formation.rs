//! Multi-microgrid formation as a MILP.
//!
//! Binary switch statuses `y`, zone-to-microgrid assignments `x` and their
//! products `z` (linearized exactly with McCormick rows) partition the zone
//! graph into one radial tree per grid-forming resource. A transportation
//! model carries net load over closed switches, and a single-commodity flow
//! (every non-source zone consumes one unit) certifies that each tree is
//! connected to its source.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{EdgeId, NetworkError, RootedTree, ZoneGraph, ZoneId};
use crate::solver::{self, MilpModel, Relation, SolveReport, SolveStatus, SolverError, SolverOptions, VarId};

/// Tolerance used when rounding binaries in a solver result.
pub const ROUNDING_TOL: f64 = 1e-6;

/// Load and PV bounds for one formation step, indexed like `ZoneGraph::nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationSnapshot {
    pub step_index: usize,
    pub zone_load_kw: Vec<f64>,
    pub zone_pv_kw: Vec<f64>,
    pub pv_min_kw: Vec<f64>,
    pub load_min_kw: Vec<f64>,
    /// Injection limit per microgrid; `None` uses each resource's rating.
    pub gfm_injection_cap_kw: Option<Vec<f64>>,
}

impl FormationSnapshot {
    pub fn new(step_index: usize, zone_load_kw: Vec<f64>, zone_pv_kw: Vec<f64>) -> Self {
        let n = zone_load_kw.len();
        Self {
            step_index,
            zone_load_kw,
            zone_pv_kw,
            pv_min_kw: vec![0.0; n],
            load_min_kw: vec![0.0; n],
            gfm_injection_cap_kw: None,
        }
    }

    /// Snapshot at each zone's peak load with no PV.
    pub fn peak(g: &ZoneGraph) -> Self {
        let load = g.nodes().iter().map(|n| n.peak_load_kw).collect();
        Self::new(0, load, vec![0.0; g.nodes().len()])
    }

    pub fn with_caps(mut self, caps: Vec<f64>) -> Self {
        self.gfm_injection_cap_kw = Some(caps);
        self
    }

    pub fn validate(&self, g: &ZoneGraph) -> Result<(), FormationError> {
        let n = g.nodes().len();
        for (name, v) in [
            ("zone_load_kw", &self.zone_load_kw),
            ("zone_pv_kw", &self.zone_pv_kw),
            ("pv_min_kw", &self.pv_min_kw),
            ("load_min_kw", &self.load_min_kw),
        ] {
            if v.len() != n {
                return Err(FormationError::Snapshot(format!(
                    "{name} has {} entries, expected {n}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(FormationError::Snapshot(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        for (i, node) in g.nodes().iter().enumerate() {
            if self.load_min_kw[i] > self.zone_load_kw[i] + 1e-12 {
                return Err(FormationError::Snapshot(format!(
                    "zone {}: load minimum above maximum",
                    node.id
                )));
            }
            if self.pv_min_kw[i] > self.zone_pv_kw[i] + 1e-12 {
                return Err(FormationError::Snapshot(format!(
                    "zone {}: PV minimum above maximum",
                    node.id
                )));
            }
        }
        if let Some(caps) = &self.gfm_injection_cap_kw {
            if caps.len() != g.resources().len() || caps.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(FormationError::Snapshot(
                    "injection caps must match the resources".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn injection_cap(&self, g: &ZoneGraph, k: usize) -> f64 {
        match &self.gfm_injection_cap_kw {
            Some(c) => c[k],
            None => g.resources()[k].rated_injection_kw(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationWeights {
    /// Weight on commodity entering a critical zone.
    pub critical_flow_weight: f64,
    pub default_flow_weight: f64,
    /// Weight per kW of shed load.
    pub shed_weight: f64,
    /// Cost per switch whose status differs from the previous topology.
    pub switch_change_penalty: f64,
}

impl Default for FormationWeights {
    fn default() -> Self {
        Self {
            critical_flow_weight: 10.0,
            default_flow_weight: 1.0,
            shed_weight: 1000.0,
            switch_change_penalty: 0.1,
        }
    }
}

impl FormationWeights {
    pub fn validate(&self) -> Result<(), FormationError> {
        if !(self.critical_flow_weight > self.default_flow_weight && self.default_flow_weight > 0.0) {
            return Err(FormationError::Model(
                "weights need critical_flow_weight > default_flow_weight > 0".into(),
            ));
        }
        if !(self.shed_weight > 0.0) || !(self.switch_change_penalty >= 0.0) {
            return Err(FormationError::Model(
                "shed weight must be positive and penalty nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Weight on commodity flowing into `head`.
    pub fn flow_weight(&self, g: &ZoneGraph, head: ZoneId) -> f64 {
        if g.node(head).is_some_and(|n| n.is_critical) {
            self.critical_flow_weight
        } else {
            self.default_flow_weight
        }
    }
}

/// Decoded topology of one formation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormationSolution {
    pub step_index: usize,
    pub switch_status: BTreeMap<EdgeId, bool>,
    /// Microgrid index per zone; `None` for zones no source can reach.
    pub assignment: BTreeMap<ZoneId, Option<usize>>,
    pub served_load_kw: BTreeMap<ZoneId, f64>,
    pub pv_dispatch_kw: BTreeMap<ZoneId, f64>,
    /// Signed flow, positive from `from` to `to`.
    pub line_flow_kw: BTreeMap<EdgeId, f64>,
    /// Signed commodity flow, positive from `from` to `to`.
    pub commodity_flow: BTreeMap<EdgeId, f64>,
    /// Net commodity emitted by each source (one entry per microgrid).
    pub source_commodity: Vec<f64>,
    pub gfm_injection_kw: Vec<f64>,
    pub objective_value: f64,
    pub load_shed_term: f64,
    pub flow_term: f64,
    pub switch_term: f64,
}

impl FormationSolution {
    pub fn closed_edges(&self) -> BTreeSet<EdgeId> {
        self.switch_status.iter().filter(|(_, &c)| c).map(|(&e, _)| e).collect()
    }

    pub fn members(&self, k: usize) -> BTreeSet<ZoneId> {
        self.assignment
            .iter()
            .filter(|(_, &a)| a == Some(k))
            .map(|(&z, _)| z)
            .collect()
    }

    /// Microgrid membership as sorted zone lists, one per microgrid.
    pub fn groups(&self, microgrids: usize) -> Vec<Vec<ZoneId>> {
        (0..microgrids).map(|k| self.members(k).into_iter().collect()).collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormationError {
    #[error("lateral policy on edge {edge} cannot be met: {reason}")]
    InfeasibleTopology { edge: EdgeId, reason: String },
    #[error("invalid formation model: {0}")]
    Model(String),
    #[error("invalid snapshot: {0}")]
    Snapshot(String),
    #[error("cannot decode solver output: {0}")]
    Decode(String),
    #[error("formation MILP is infeasible")]
    Infeasible,
    #[error("solver stopped at its node or pivot limit")]
    SolverLimit,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Where each formation quantity lives in the MILP.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationVarMap {
    pub microgrids: usize,
    /// Per edge (graph order).
    pub y: Vec<VarId>,
    /// Per node then microgrid; `None` for island zones.
    pub x: Vec<Option<Vec<VarId>>>,
    /// Per edge then microgrid; `None` for edges inside islands or faulted.
    pub z: Vec<Option<Vec<VarId>>>,
    pub flow_fwd: Vec<Option<VarId>>,
    pub flow_rev: Vec<Option<VarId>>,
    pub commodity_fwd: Vec<Option<VarId>>,
    pub commodity_rev: Vec<Option<VarId>>,
    pub pv: Vec<Option<VarId>>,
    pub load: Vec<Option<VarId>>,
    pub injection: Vec<VarId>,
    pub source: Vec<VarId>,
}

/// A formation MILP together with the context needed to decode it.
#[derive(Debug, Clone)]
pub struct FormationProblem {
    pub model: MilpModel,
    pub vars: FormationVarMap,
    pub graph: ZoneGraph,
    pub snapshot: FormationSnapshot,
    pub weights: FormationWeights,
    pub previous_closed: Option<BTreeSet<EdgeId>>,
    pub islands: BTreeSet<ZoneId>,
}

/// Checks each lateral policy against what the topology can supply.
pub fn check_policies(g: &ZoneGraph) -> Result<(), FormationError> {
    for p in g.lateral_policies() {
        let edge = g
            .edge(p.edge_id)
            .ok_or(FormationError::Model(format!("unknown policy edge {}", p.edge_id)))?;
        if p.force_zero || p.min_downstream_nodes == 0 {
            continue;
        }
        if g.is_faulted(edge.id) {
            return Err(FormationError::InfeasibleTopology {
                edge: edge.id,
                reason: format!(
                    "edge is faulted but {} downstream zones are required",
                    p.min_downstream_nodes
                ),
            });
        }
        let reach = g.reach_avoiding_gfm(edge.other(p.gfm_node_id), p.gfm_node_id).len();
        if p.min_downstream_nodes as usize > reach {
            return Err(FormationError::InfeasibleTopology {
                edge: edge.id,
                reason: format!(
                    "{} downstream zones required but only {reach} can be reached",
                    p.min_downstream_nodes
                ),
            });
        }
    }
    Ok(())
}

/// Builds the formation MILP for one snapshot.
pub fn build_milp(
    g: &ZoneGraph,
    snap: &FormationSnapshot,
    weights: &FormationWeights,
    prev: Option<&FormationSolution>,
) -> Result<FormationProblem, FormationError> {
    let k_count = g.resources().len();
    if k_count == 0 {
        return Err(FormationError::Model("no grid-forming resources".into()));
    }
    snap.validate(g)?;
    weights.validate()?;
    check_policies(g)?;

    let islands = g.island_zones();
    for r in g.resources() {
        if islands.contains(&r.node_id) {
            return Err(FormationError::Model(format!(
                "grid-forming zone {} lies in a load island",
                r.node_id
            )));
        }
    }
    let island_tree = g.island_spanning_edges();
    let previous_closed = prev.map(|p| p.closed_edges());
    let big_m = g.nodes().len() as f64;
    let nodes = g.nodes();
    let edges = g.edges();
    let mut m = MilpModel::new();

    // load shed: shed_weight * sum(Dmax - D)
    m.objective_offset = weights.shed_weight * snap.zone_load_kw.iter().sum::<f64>();

    // switch statuses
    let mut y = Vec::with_capacity(edges.len());
    for e in edges {
        let (lo, hi) = if g.is_faulted(e.id) {
            (0.0, 0.0)
        } else if island_tree.contains(&e.id) {
            (1.0, 1.0)
        } else if islands.contains(&e.from) {
            (0.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let mut cost = 0.0;
        if let Some(prev) = &previous_closed {
            if prev.contains(&e.id) {
                cost = -weights.switch_change_penalty;
                m.objective_offset += weights.switch_change_penalty;
            } else {
                cost = weights.switch_change_penalty;
            }
        }
        y.push(m.add_var(format!("y[{}]", e.id), lo, hi, true, cost));
    }

    // assignments
    let mut x: Vec<Option<Vec<VarId>>> = Vec::with_capacity(nodes.len());
    for n in nodes {
        if islands.contains(&n.id) {
            x.push(None);
            continue;
        }
        let own = g.microgrid_of_gfm(n.id);
        let vars = (0..k_count)
            .map(|k| {
                let (lo, hi) = match own {
                    Some(o) if o == k => (1.0, 1.0),
                    Some(_) => (0.0, 0.0),
                    None => (0.0, 1.0),
                };
                m.add_var(format!("x[{},{k}]", n.id), lo, hi, true, 0.0)
            })
            .collect();
        x.push(Some(vars));
    }

    // switch-microgrid products
    let live = |e: &crate::netmodel::SwitchEdge| !g.is_faulted(e.id) && !islands.contains(&e.from);
    let mut z: Vec<Option<Vec<VarId>>> = Vec::with_capacity(edges.len());
    for e in edges {
        if !live(e) {
            z.push(None);
            continue;
        }
        z.push(Some(
            (0..k_count)
                .map(|k| m.add_var(format!("z[{},{k}]", e.id), 0.0, 1.0, true, 0.0))
                .collect(),
        ));
    }

    // power and commodity flows
    let mut flow_fwd = Vec::with_capacity(edges.len());
    let mut flow_rev = Vec::with_capacity(edges.len());
    let mut com_fwd = Vec::with_capacity(edges.len());
    let mut com_rev = Vec::with_capacity(edges.len());
    for e in edges {
        if !live(e) {
            flow_fwd.push(None);
            flow_rev.push(None);
            com_fwd.push(None);
            com_rev.push(None);
            continue;
        }
        let lim = e.flow_limit_kw;
        flow_fwd.push(Some(m.add_continuous(format!("T+[{}]", e.id), 0.0, lim, 0.0)));
        flow_rev.push(Some(m.add_continuous(format!("T-[{}]", e.id), 0.0, lim, 0.0)));
        let w_fwd = weights.flow_weight(g, e.to);
        let w_rev = weights.flow_weight(g, e.from);
        com_fwd.push(Some(m.add_continuous(format!("F+[{}]", e.id), 0.0, big_m, w_fwd)));
        com_rev.push(Some(m.add_continuous(format!("F-[{}]", e.id), 0.0, big_m, w_rev)));
    }

    let mut pv = Vec::with_capacity(nodes.len());
    let mut load = Vec::with_capacity(nodes.len());
    for (i, n) in nodes.iter().enumerate() {
        if islands.contains(&n.id) {
            pv.push(None);
            load.push(None);
            continue;
        }
        pv.push(Some(m.add_continuous(
            format!("P[{}]", n.id),
            snap.pv_min_kw[i],
            snap.zone_pv_kw[i],
            0.0,
        )));
        load.push(Some(m.add_continuous(
            format!("D[{}]", n.id),
            snap.load_min_kw[i],
            snap.zone_load_kw[i],
            -weights.shed_weight,
        )));
    }
    let injection: Vec<VarId> = g
        .resources()
        .iter()
        .enumerate()
        .map(|(k, r)| m.add_continuous(format!("G[{}]", r.node_id), 0.0, snap.injection_cap(g, k), 0.0))
        .collect();
    let source: Vec<VarId> = g
        .resources()
        .iter()
        .map(|r| m.add_continuous(format!("W[{}]", r.node_id), 0.0, big_m - 1.0, 0.0))
        .collect();

    // every zone belongs to exactly one microgrid
    for (n, xs) in nodes.iter().zip(&x) {
        if let Some(xs) = xs {
            m.add_constraint(
                format!("assign[{}]", n.id),
                xs.iter().map(|&v| (v, 1.0)).collect(),
                Relation::Eq,
                1.0,
            );
        }
    }

    // closed switch joins two zones of the same microgrid
    for (li, e) in edges.iter().enumerate() {
        let Some(zs) = &z[li] else { continue };
        let mut terms = vec![(y[li], 1.0)];
        terms.extend(zs.iter().map(|&v| (v, -1.0)));
        m.add_constraint(format!("link[{}]", e.id), terms, Relation::Eq, 0.0);
        let xf = x[g.node_index(e.from).unwrap()].as_ref().unwrap();
        let xt = x[g.node_index(e.to).unwrap()].as_ref().unwrap();
        for k in 0..k_count {
            let zk = zs[k];
            m.add_constraint(
                format!("mc_f[{},{k}]", e.id),
                vec![(zk, 1.0), (xf[k], -1.0)],
                Relation::Le,
                0.0,
            );
            m.add_constraint(
                format!("mc_t[{},{k}]", e.id),
                vec![(zk, 1.0), (xt[k], -1.0)],
                Relation::Le,
                0.0,
            );
            m.add_constraint(
                format!("mc_lo[{},{k}]", e.id),
                vec![(zk, 1.0), (xf[k], -1.0), (xt[k], -1.0)],
                Relation::Ge,
                -1.0,
            );
        }
    }

    // nodal balance: outflow - inflow = P - D + G
    for (i, n) in nodes.iter().enumerate() {
        let (Some(p), Some(d)) = (pv[i], load[i]) else { continue };
        let mut terms = Vec::new();
        for (li, e) in edges.iter().enumerate() {
            let (Some(tf), Some(tr)) = (flow_fwd[li], flow_rev[li]) else {
                continue;
            };
            if e.from == n.id {
                terms.push((tf, 1.0));
                terms.push((tr, -1.0));
            } else if e.to == n.id {
                terms.push((tf, -1.0));
                terms.push((tr, 1.0));
            }
        }
        terms.push((p, -1.0));
        terms.push((d, 1.0));
        if let Some(k) = g.microgrid_of_gfm(n.id) {
            terms.push((injection[k], -1.0));
        }
        m.add_constraint(format!("balance[{}]", n.id), terms, Relation::Eq, 0.0);
    }

    // line limits follow switch status
    for (li, e) in edges.iter().enumerate() {
        if let (Some(tf), Some(tr)) = (flow_fwd[li], flow_rev[li]) {
            m.add_constraint(
                format!("tlim[{}]", e.id),
                vec![(tf, 1.0), (tr, 1.0), (y[li], -e.flow_limit_kw)],
                Relation::Le,
                0.0,
            );
        }
        if let (Some(ff), Some(fr)) = (com_fwd[li], com_rev[li]) {
            m.add_constraint(
                format!("flim[{}]", e.id),
                vec![(ff, 1.0), (fr, 1.0), (y[li], -big_m)],
                Relation::Le,
                0.0,
            );
        }
    }

    // radiality
    m.add_constraint(
        "radial",
        y.iter().map(|&v| (v, 1.0)).collect(),
        Relation::Eq,
        g.radial_edge_count() as f64,
    );

    // single-commodity flow: sinks consume one unit, sources emit W
    for n in nodes {
        if islands.contains(&n.id) {
            continue;
        }
        let mut terms = Vec::new();
        for (li, e) in edges.iter().enumerate() {
            let (Some(ff), Some(fr)) = (com_fwd[li], com_rev[li]) else {
                continue;
            };
            // inflow - outflow
            if e.to == n.id {
                terms.push((ff, 1.0));
                terms.push((fr, -1.0));
            } else if e.from == n.id {
                terms.push((ff, -1.0));
                terms.push((fr, 1.0));
            }
        }
        match g.microgrid_of_gfm(n.id) {
            Some(k) => {
                terms.push((source[k], 1.0));
                m.add_constraint(format!("source[{}]", n.id), terms, Relation::Eq, 0.0);
            }
            None => m.add_constraint(format!("sink[{}]", n.id), terms, Relation::Eq, 1.0),
        }
    }

    // lateral policies
    for p in g.lateral_policies() {
        let li = g.edge_index(p.edge_id).unwrap();
        let e = &edges[li];
        let (Some(ff), Some(fr)) = (com_fwd[li], com_rev[li]) else {
            continue;
        };
        if p.force_zero {
            m.vars[ff.0].upper = 0.0;
            m.vars[fr.0].upper = 0.0;
            continue;
        }
        let (out, back) = if e.from == p.gfm_node_id { (ff, fr) } else { (fr, ff) };
        m.add_constraint(
            format!("lateral[{}]", e.id),
            vec![(out, 1.0), (back, -1.0)],
            Relation::Ge,
            p.min_downstream_nodes as f64,
        );
    }

    Ok(FormationProblem {
        model: m,
        vars: FormationVarMap {
            microgrids: k_count,
            y,
            x,
            z,
            flow_fwd,
            flow_rev,
            commodity_fwd: com_fwd,
            commodity_rev: com_rev,
            pv,
            load,
            injection,
            source,
        },
        graph: g.clone(),
        snapshot: snap.clone(),
        weights: weights.clone(),
        previous_closed,
        islands,
    })
}

fn round_binary(v: f64, what: &str) -> Result<bool, FormationError> {
    if (v - 1.0).abs() <= ROUNDING_TOL {
        Ok(true)
    } else if v.abs() <= ROUNDING_TOL {
        Ok(false)
    } else {
        Err(FormationError::Decode(format!(
            "{what} = {v} is not binary within {ROUNDING_TOL}"
        )))
    }
}

/// Objective terms recomputed from decoded quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub load_shed: f64,
    pub flow: f64,
    pub switch: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.load_shed + self.flow + self.switch
    }
}

/// Evaluates the formation objective for decoded served load, commodity
/// flows and switch statuses.
pub fn objective_terms(
    g: &ZoneGraph,
    snap: &FormationSnapshot,
    weights: &FormationWeights,
    served: &BTreeMap<ZoneId, f64>,
    commodity: &BTreeMap<EdgeId, f64>,
    closed: &BTreeSet<EdgeId>,
    previous_closed: Option<&BTreeSet<EdgeId>>,
) -> ObjectiveTerms {
    let load_shed = weights.shed_weight
        * g.nodes()
            .iter()
            .enumerate()
            .map(|(i, n)| snap.zone_load_kw[i] - served.get(&n.id).copied().unwrap_or(0.0))
            .sum::<f64>();
    let flow = g
        .edges()
        .iter()
        .map(|e| {
            let f = commodity.get(&e.id).copied().unwrap_or(0.0);
            if f >= 0.0 {
                weights.flow_weight(g, e.to) * f
            } else {
                weights.flow_weight(g, e.from) * -f
            }
        })
        .sum();
    let switch = previous_closed.map_or(0.0, |prev| {
        weights.switch_change_penalty
            * g.edges()
                .iter()
                .filter(|e| prev.contains(&e.id) != closed.contains(&e.id))
                .count() as f64
    });
    ObjectiveTerms {
        load_shed,
        flow,
        switch,
    }
}

/// Turns an optimal solver report into a topology and checks it.
pub fn decode(report: &SolveReport, problem: &FormationProblem) -> Result<FormationSolution, FormationError> {
    if report.status != SolveStatus::Optimal {
        return Err(FormationError::Decode(format!("solver status {:?}", report.status)));
    }
    let g = &problem.graph;
    let vm = &problem.vars;
    let val = |v: VarId| report.values[v.0];

    let mut switch_status = BTreeMap::new();
    for (e, &yv) in g.edges().iter().zip(&vm.y) {
        switch_status.insert(e.id, round_binary(val(yv), &format!("y[{}]", e.id))?);
    }
    let mut assignment = BTreeMap::new();
    for (n, xs) in g.nodes().iter().zip(&vm.x) {
        let Some(xs) = xs else {
            assignment.insert(n.id, None);
            continue;
        };
        let mut chosen = None;
        for (k, &xv) in xs.iter().enumerate() {
            if round_binary(val(xv), &format!("x[{},{k}]", n.id))? {
                if chosen.is_some() {
                    return Err(FormationError::Decode(format!("zone {} assigned twice", n.id)));
                }
                chosen = Some(k);
            }
        }
        if chosen.is_none() {
            return Err(FormationError::Decode(format!("zone {} has no microgrid", n.id)));
        }
        assignment.insert(n.id, chosen);
    }
    for (e, zs) in g.edges().iter().zip(&vm.z) {
        if let Some(zs) = zs {
            for (k, &zv) in zs.iter().enumerate() {
                round_binary(val(zv), &format!("z[{},{k}]", e.id))?;
            }
        }
    }

    let closed: BTreeSet<EdgeId> = switch_status.iter().filter(|(_, &c)| c).map(|(&e, _)| e).collect();
    let census = g.is_radial_forest(&closed);
    if !census.radial {
        return Err(FormationError::Decode(format!(
            "decoded topology is not radial: {}",
            census.reason.unwrap_or_default()
        )));
    }
    for tree in &census.trees {
        let k = tree.gfm.and_then(|z| g.microgrid_of_gfm(z));
        for z in &tree.nodes {
            if assignment.get(z).copied().flatten() != k {
                return Err(FormationError::Decode(format!("zone {z} assigned outside its tree")));
            }
        }
    }

    let opt = |v: Option<VarId>| v.map_or(0.0, val);
    let mut served_load_kw = BTreeMap::new();
    let mut pv_dispatch_kw = BTreeMap::new();
    for (i, n) in g.nodes().iter().enumerate() {
        served_load_kw.insert(n.id, opt(vm.load[i]));
        pv_dispatch_kw.insert(n.id, opt(vm.pv[i]));
    }
    let mut line_flow_kw = BTreeMap::new();
    let mut commodity_flow = BTreeMap::new();
    for (li, e) in g.edges().iter().enumerate() {
        line_flow_kw.insert(e.id, opt(vm.flow_fwd[li]) - opt(vm.flow_rev[li]));
        commodity_flow.insert(e.id, opt(vm.commodity_fwd[li]) - opt(vm.commodity_rev[li]));
    }
    let terms = objective_terms(
        g,
        &problem.snapshot,
        &problem.weights,
        &served_load_kw,
        &commodity_flow,
        &closed,
        problem.previous_closed.as_ref(),
    );
    let objective_value = terms.total();
    if (objective_value - report.objective).abs() > 1e-6 * (1.0 + report.objective.abs()) {
        return Err(FormationError::Decode(format!(
            "recomputed objective {objective_value} differs from solver objective {}",
            report.objective
        )));
    }
    Ok(FormationSolution {
        step_index: problem.snapshot.step_index,
        switch_status,
        assignment,
        served_load_kw,
        pv_dispatch_kw,
        line_flow_kw,
        commodity_flow,
        source_commodity: vm.source.iter().map(|&v| val(v)).collect(),
        gfm_injection_kw: vm.injection.iter().map(|&v| val(v)).collect(),
        objective_value,
        load_shed_term: terms.load_shed,
        flow_term: terms.flow,
        switch_term: terms.switch,
    })
}

impl FormationVarMap {
    /// Largest `|z - x_f * x_t|` over all edges and microgrids after
    /// rounding every binary.
    pub fn mccormick_gap(&self, g: &ZoneGraph, values: &[f64]) -> f64 {
        let r = |v: VarId| values[v.0].round();
        let mut worst: f64 = 0.0;
        for (e, zs) in g.edges().iter().zip(&self.z) {
            let Some(zs) = zs else { continue };
            let xf = self.x[g.node_index(e.from).unwrap()].as_ref().unwrap();
            let xt = self.x[g.node_index(e.to).unwrap()].as_ref().unwrap();
            for k in 0..self.microgrids {
                worst = worst.max((r(zs[k]) - r(xf[k]) * r(xt[k])).abs());
            }
        }
        worst
    }
}

/// Result of a complete formation solve.
#[derive(Debug, Clone)]
pub struct FormationOutcome {
    pub solution: FormationSolution,
    pub report: SolveReport,
    pub problem: FormationProblem,
}

/// Builds, solves and decodes one formation step.
pub fn solve_formation(
    g: &ZoneGraph,
    snap: &FormationSnapshot,
    weights: &FormationWeights,
    prev: Option<&FormationSolution>,
    options: &SolverOptions,
) -> Result<FormationOutcome, FormationError> {
    let problem = build_milp(g, snap, weights, prev)?;
    let report = solver::solve_milp_with(&problem.model, options)?;
    match report.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(FormationError::Infeasible),
        SolveStatus::IterationLimit => return Err(FormationError::SolverLimit),
        SolveStatus::Unbounded => return Err(FormationError::Model("formation MILP is unbounded".into())),
    }
    let solution = decode(&report, &problem)?;
    Ok(FormationOutcome {
        solution,
        report,
        problem,
    })
}

/// Commodity carried by each closed edge of a radial topology: the number
/// of zones behind it, signed by direction. Zones in unanchored components
/// carry nothing.
pub fn tree_commodity(g: &ZoneGraph, closed: &BTreeSet<EdgeId>) -> BTreeMap<EdgeId, f64> {
    let mut flow: BTreeMap<EdgeId, f64> = g.edges().iter().map(|e| (e.id, 0.0)).collect();
    for r in g.resources() {
        let tree = RootedTree::build(g, closed, r.node_id);
        let sizes = tree.subtree_sizes();
        for (&child, &eid) in &tree.parent_edge {
            let e = g.edge(eid).unwrap();
            let s = sizes[&child] as f64;
            flow.insert(eid, if e.to == child { s } else { -s });
        }
    }
    flow
}

/// The normal feeder configuration: every healthy normally-closed switch
/// closed, ties open. Zones cut off from every source by faults are left
/// unassigned. Only the topology fields and commodity flows are filled in.
pub fn fixed_topology_solution(g: &ZoneGraph) -> Result<FormationSolution, FormationError> {
    let closed = g.default_closed_edges();
    let census = g.is_radial_forest(&closed);
    if let Some(reason) = &census.reason {
        if reason.contains("cycle") || reason.contains("share a tree") || reason.contains("faulted") {
            return Err(FormationError::Model(format!(
                "default topology is not radial: {reason}"
            )));
        }
    }
    let mut assignment: BTreeMap<ZoneId, Option<usize>> = g.nodes().iter().map(|n| (n.id, None)).collect();
    for tree in &census.trees {
        let k = tree.gfm.and_then(|z| g.microgrid_of_gfm(z));
        for z in &tree.nodes {
            assignment.insert(*z, k);
        }
    }
    let commodity_flow = tree_commodity(g, &closed);
    let source_commodity = g
        .resources()
        .iter()
        .enumerate()
        .map(|(k, _)| assignment.values().filter(|a| **a == Some(k)).count().saturating_sub(1) as f64)
        .collect();
    Ok(FormationSolution {
        step_index: 0,
        switch_status: g.edges().iter().map(|e| (e.id, closed.contains(&e.id))).collect(),
        assignment,
        served_load_kw: g.nodes().iter().map(|n| (n.id, 0.0)).collect(),
        pv_dispatch_kw: g.nodes().iter().map(|n| (n.id, 0.0)).collect(),
        line_flow_kw: g.edges().iter().map(|e| (e.id, 0.0)).collect(),
        commodity_flow,
        source_commodity,
        gfm_injection_kw: vec![0.0; g.resources().len()],
        objective_value: 0.0,
        load_shed_term: 0.0,
        flow_term: 0.0,
        switch_term: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::LateralPolicy;
    use crate::scenario::{fixture_graph, fixture_policies};

    fn edge_between(g: &ZoneGraph, a: ZoneId, b: ZoneId) -> EdgeId {
        g.edges().iter().find(|e| e.touches(a) && e.touches(b)).unwrap().id
    }

    fn count_named(m: &MilpModel, prefix: &str) -> usize {
        m.vars.iter().filter(|v| v.name.starts_with(prefix)).count()
    }

    #[test]
    fn fixture_model_dimensions() {
        let g = fixture_graph();
        let p = build_milp(&g, &FormationSnapshot::peak(&g), &FormationWeights::default(), None).unwrap();
        assert_eq!(count_named(&p.model, "y["), 10);
        assert_eq!(count_named(&p.model, "x["), 20);
        assert_eq!(count_named(&p.model, "z["), 20);
        let radial = p.model.constraints.iter().find(|c| c.name == "radial").unwrap();
        assert_eq!(radial.rhs, 8.0);
        assert_eq!(radial.terms.len(), 10);
    }

    #[test]
    fn symmetric_snapshot_without_ties_keeps_feeders() {
        // ties held open by policy -> default feeders are the only partition
        let g = fixture_graph();
        let ties: Vec<EdgeId> = g.edges().iter().filter(|e| e.normally_open).map(|e| e.id).collect();
        let g = g.with_faults(ties.into_iter().collect()).unwrap();
        let out = solve_formation(
            &g,
            &FormationSnapshot::peak(&g),
            &FormationWeights::default(),
            None,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(out.solution.groups(2), vec![vec![1, 2, 3, 4, 5], vec![6, 7, 8, 9, 10]]);
    }

    #[test]
    fn force_zero_routes_zone_2_through_tie() {
        let g = fixture_graph();
        let e12 = edge_between(&g, 1, 2);
        let g = g
            .with_policies(vec![LateralPolicy {
                gfm_node_id: 1,
                edge_id: e12,
                min_downstream_nodes: 0,
                force_zero: true,
            }])
            .unwrap();
        let out = solve_formation(
            &g,
            &FormationSnapshot::peak(&g),
            &FormationWeights::default(),
            None,
            &SolverOptions::default(),
        )
        .unwrap();
        let s = &out.solution;
        assert_eq!(s.commodity_flow[&e12], 0.0);
        assert!(!s.switch_status[&e12]);
        assert_eq!(s.assignment[&2], Some(1));
        assert!(s.switch_status[&edge_between(&g, 2, 10)]);
    }

    #[test]
    fn lateral_minimum_pins_interior_zones() {
        let g = fixture_graph().with_policies(fixture_policies()).unwrap();
        // starve MG1 so the optimizer would like to move zones away from it
        let snap = FormationSnapshot::peak(&g).with_caps(vec![100.0, 6000.0]);
        let out = solve_formation(&g, &snap, &FormationWeights::default(), None, &SolverOptions::default()).unwrap();
        assert_eq!(out.solution.assignment[&3], Some(0));
        assert_eq!(out.solution.assignment[&4], Some(0));
        assert_eq!(out.solution.assignment[&8], Some(1));
        assert_eq!(out.solution.assignment[&9], Some(1));
    }

    #[test]
    fn oversized_lateral_minimum_fails_at_build_time() {
        let g = fixture_graph();
        let e13 = edge_between(&g, 1, 3);
        let g = g
            .with_policies(vec![LateralPolicy {
                gfm_node_id: 1,
                edge_id: e13,
                min_downstream_nodes: 5,
                force_zero: false,
            }])
            .unwrap();
        let err = build_milp(&g, &FormationSnapshot::peak(&g), &FormationWeights::default(), None).unwrap_err();
        assert!(matches!(err, FormationError::InfeasibleTopology { .. }), "{err:?}");
    }

    #[test]
    fn fractional_binary_is_a_decode_error() {
        let g = fixture_graph();
        let p = build_milp(&g, &FormationSnapshot::peak(&g), &FormationWeights::default(), None).unwrap();
        let mut report = solver::solve_milp(&p.model).unwrap();
        assert!(decode(&report, &p).is_ok());
        report.values[p.vars.y[0].0] = 0.4999999;
        assert!(matches!(decode(&report, &p), Err(FormationError::Decode(_))));
    }

    #[test]
    fn decode_assignment_matches_x() {
        let g = fixture_graph();
        let p = build_milp(&g, &FormationSnapshot::peak(&g), &FormationWeights::default(), None).unwrap();
        let report = solver::solve_milp(&p.model).unwrap();
        let sol = decode(&report, &p).unwrap();
        for (i, n) in g.nodes().iter().enumerate() {
            let xs = p.vars.x[i].as_ref().unwrap();
            let argmax = (0..2)
                .max_by(|&a, &b| report.values[xs[a].0].total_cmp(&report.values[xs[b].0]))
                .unwrap();
            assert_eq!(sol.assignment[&n.id], Some(argmax));
        }
        assert_eq!(p.vars.mccormick_gap(&g, &report.values), 0.0);
    }

    #[test]
    fn fixed_topology_of_fixture() {
        let g = fixture_graph();
        let s = fixed_topology_solution(&g).unwrap();
        assert_eq!(s.groups(2), vec![vec![1, 2, 3, 4, 5], vec![6, 7, 8, 9, 10]]);
        assert_eq!(s.source_commodity, vec![4.0, 4.0]);
        assert_eq!(s.commodity_flow[&edge_between(&g, 1, 3)], 3.0);
    }

    #[test]
    fn fixed_topology_rejects_cycles() {
        let g = fixture_graph();
        let mut nodes = g.nodes().to_vec();
        let mut edges = g.edges().to_vec();
        for e in &mut edges {
            e.normally_open = false;
        }
        nodes.sort_by_key(|n| n.id);
        let cyclic = ZoneGraph::new(nodes, edges, g.resources().to_vec(), BTreeSet::new(), vec![]).unwrap();
        assert!(fixed_topology_solution(&cyclic).is_err());
    }

    #[test]
    fn single_feeder_single_tree() {
        let g = fixture_graph();
        let nodes: Vec<_> = g.nodes().iter().filter(|n| n.feeder_id == 1).cloned().collect();
        let edges: Vec<_> = g.edges().iter().filter(|e| e.from <= 5 && e.to <= 5).cloned().collect();
        let res: Vec<_> = g.resources().iter().filter(|r| r.node_id <= 5).cloned().collect();
        let g1 = ZoneGraph::new(nodes, edges, res, BTreeSet::new(), vec![]).unwrap();
        let s = fixed_topology_solution(&g1).unwrap();
        assert_eq!(s.groups(1), vec![vec![1, 2, 3, 4, 5]]);
    }

    #[test]
    fn previous_topology_penalty_counts_changes() {
        let g = fixture_graph();
        let base = fixed_topology_solution(&g).unwrap();
        let p = build_milp(
            &g,
            &FormationSnapshot::peak(&g),
            &FormationWeights::default(),
            Some(&base),
        )
        .unwrap();
        let r = solver::solve_milp(&p.model).unwrap();
        let sol = decode(&r, &p).unwrap();
        let changes = g
            .edges()
            .iter()
            .filter(|e| base.switch_status[&e.id] != sol.switch_status[&e.id])
            .count();
        assert!((sol.switch_term - 0.1 * changes as f64).abs() < 1e-12);
    }
}
