//! Brute-force formation oracle.
//!
//! Every closed-switch subset of the radial size is tried. Radial, policy-
//! compliant candidates are scored with a tree max-flow evaluation that
//! shares no code with the MILP, so agreement between the two is a real
//! cross-check.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::formation::{FormationSnapshot, FormationSolution, FormationWeights};
use crate::netmodel::{EdgeId, RootedTree, ZoneGraph, ZoneId};

/// Largest number of switchable edges the oracle will enumerate.
pub const MAX_ENUMERATED_EDGES: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnumerationError {
    #[error("{0} switchable edges exceed the enumeration guard of {MAX_ENUMERATED_EDGES}")]
    GuardExceeded(usize),
    #[error("the oracle needs zero minimum load and PV (zone {0})")]
    NonzeroMinimum(ZoneId),
    #[error("snapshot does not match the graph: {0}")]
    Snapshot(String),
    #[error("no radial topology satisfies the lateral policies")]
    NoFeasibleTopology,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    pub solution: FormationSolution,
    pub objective: f64,
    /// Subsets of the radial size that were examined.
    pub candidates: usize,
    /// Candidates that form a radial forest.
    pub radial_count: usize,
    /// Radial candidates that also honour every lateral policy.
    pub feasible_count: usize,
}

/// Calls `f` with every `k`-subset of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

struct TreeFlow {
    served: BTreeMap<ZoneId, f64>,
    pv_used: BTreeMap<ZoneId, f64>,
    injection: f64,
    line_flow: BTreeMap<EdgeId, f64>,
}

/// Maximum servable load of one rooted tree under line limits and a source
/// cap. Children settle with their parent bottom-up: a surplus subtree can
/// export at most the line limit, a deficit subtree can import at most the
/// line limit, the rest is curtailed or shed.
fn tree_flow(
    g: &ZoneGraph,
    tree: &RootedTree,
    load: &BTreeMap<ZoneId, f64>,
    pv: &BTreeMap<ZoneId, f64>,
    cap: f64,
) -> TreeFlow {
    let limit = |z: ZoneId| g.edge(tree.parent_edge[&z]).unwrap().flow_limit_kw;
    // net exchange of each subtree with its parent, positive = export
    let mut net: BTreeMap<ZoneId, f64> = BTreeMap::new();
    for &z in tree.order.iter().rev() {
        let mut n = pv[&z] - load[&z];
        for (&c, &p) in &tree.parent {
            if p == z && c != z {
                n += net[&c];
            }
        }
        if z != tree.root {
            n = n.clamp(-limit(z), limit(z));
        }
        net.insert(z, n);
    }
    let root_net = net[&tree.root];
    let injection = if root_net < 0.0 { (-root_net).min(cap) } else { 0.0 };

    // top-down: `exchange[z]` is what z receives from its parent (negative
    // when it sends); each zone serves itself, then its deficit children,
    // drawing on parent power, then child exports, then its own PV
    let children = |z: ZoneId| -> Vec<ZoneId> {
        tree.parent
            .iter()
            .filter(|(&c, &p)| p == z && c != z)
            .map(|(&c, _)| c)
            .collect()
    };
    let mut served = BTreeMap::new();
    let mut pv_used = BTreeMap::new();
    let mut line_flow = BTreeMap::new();
    let mut exchange: BTreeMap<ZoneId, f64> = BTreeMap::from([(tree.root, injection)]);
    for &z in &tree.order {
        let kids = children(z);
        let x = exchange[&z];
        let avail_in = x.max(0.0);
        let out_req = (-x).max(0.0);
        let export_cap: f64 = kids.iter().map(|c| net[c].max(0.0)).sum();
        let supply = avail_in + pv[&z] + export_cap;
        let serve = load[&z].min(supply - out_req).max(0.0);
        served.insert(z, serve);
        let mut rest = (supply - out_req - serve).max(0.0);
        let mut given = 0.0;
        for &c in &kids {
            if net[&c] < 0.0 {
                let give = (-net[&c]).min(rest);
                rest -= give;
                given += give;
                exchange.insert(c, give);
            }
        }
        let consumed = out_req + serve + given;
        let mut left = (consumed - avail_in).max(0.0);
        for &c in &kids {
            if net[&c] >= 0.0 {
                let take = net[&c].min(left);
                left -= take;
                exchange.insert(c, -take);
            }
        }
        pv_used.insert(z, left.min(pv[&z]));
        if z != tree.root {
            let e = g.edge(tree.parent_edge[&z]).unwrap();
            line_flow.insert(e.id, if e.to == z { x } else { -x });
        }
    }
    TreeFlow {
        served,
        pv_used,
        injection,
        line_flow,
    }
}

/// Finds the optimal formation by exhaustive enumeration.
pub fn enumerate_optimal(
    g: &ZoneGraph,
    snap: &FormationSnapshot,
    weights: &FormationWeights,
    prev: Option<&FormationSolution>,
) -> Result<EnumerationResult, EnumerationError> {
    let n = g.nodes().len();
    if snap.zone_load_kw.len() != n || snap.zone_pv_kw.len() != n {
        return Err(EnumerationError::Snapshot(
            "per-zone vectors have the wrong length".into(),
        ));
    }
    for (i, node) in g.nodes().iter().enumerate() {
        if snap.load_min_kw.get(i).copied().unwrap_or(0.0) != 0.0
            || snap.pv_min_kw.get(i).copied().unwrap_or(0.0) != 0.0
        {
            return Err(EnumerationError::NonzeroMinimum(node.id));
        }
    }
    let islands = g.island_zones();
    let fixed: BTreeSet<EdgeId> = g.island_spanning_edges();
    let free: Vec<EdgeId> = g
        .edges()
        .iter()
        .filter(|e| !g.is_faulted(e.id) && !islands.contains(&e.from) && !islands.contains(&e.to))
        .map(|e| e.id)
        .collect();
    if free.len() > MAX_ENUMERATED_EDGES {
        return Err(EnumerationError::GuardExceeded(free.len()));
    }
    let need = g.radial_edge_count().saturating_sub(fixed.len());

    let load: BTreeMap<ZoneId, f64> = g
        .nodes()
        .iter()
        .zip(&snap.zone_load_kw)
        .map(|(n, &v)| (n.id, v))
        .collect();
    let pv: BTreeMap<ZoneId, f64> = g
        .nodes()
        .iter()
        .zip(&snap.zone_pv_kw)
        .map(|(n, &v)| (n.id, v))
        .collect();
    let total_load: f64 = snap.zone_load_kw.iter().sum();
    let prev_closed = prev.map(|p| p.closed_edges());
    let critical = |z: ZoneId| g.node(z).is_some_and(|n| n.is_critical);

    let mut candidates = 0;
    let mut radial_count = 0;
    let mut feasible_count = 0;
    let mut best: Option<(f64, FormationSolution)> = None;

    for_each_combination(free.len(), need, |pick| {
        candidates += 1;
        let mut closed = fixed.clone();
        closed.extend(pick.iter().map(|&i| free[i]));
        if !g.is_radial_forest(&closed).radial {
            return;
        }
        radial_count += 1;

        let trees: Vec<RootedTree> = g
            .resources()
            .iter()
            .map(|r| RootedTree::build(g, &closed, r.node_id))
            .collect();
        let sizes: Vec<BTreeMap<ZoneId, usize>> = trees.iter().map(|t| t.subtree_sizes()).collect();

        for p in g.lateral_policies() {
            let k = g.microgrid_of_gfm(p.gfm_node_id).unwrap();
            let e = g.edge(p.edge_id).unwrap();
            let other = e.other(p.gfm_node_id);
            let outward = if closed.contains(&e.id) && trees[k].parent.get(&other) == Some(&p.gfm_node_id) {
                sizes[k][&other]
            } else {
                0
            };
            if p.force_zero && outward > 0 {
                return;
            }
            if outward < p.min_downstream_nodes as usize {
                return;
            }
        }
        feasible_count += 1;

        let mut flow_term = 0.0;
        let mut commodity = BTreeMap::new();
        let mut served = BTreeMap::new();
        let mut pv_used = BTreeMap::new();
        let mut line_flow = BTreeMap::new();
        let mut injection = Vec::new();
        let mut assignment: BTreeMap<ZoneId, Option<usize>> = g.nodes().iter().map(|n| (n.id, None)).collect();
        for (k, t) in trees.iter().enumerate() {
            for (&child, &eid) in &t.parent_edge {
                let s = sizes[k][&child] as f64;
                let w = if critical(child) {
                    weights.critical_flow_weight
                } else {
                    weights.default_flow_weight
                };
                flow_term += w * s;
                let e = g.edge(eid).unwrap();
                commodity.insert(eid, if e.to == child { s } else { -s });
            }
            for &z in &t.order {
                assignment.insert(z, Some(k));
            }
            let cap = snap.injection_cap(g, k);
            let tf = tree_flow(g, t, &load, &pv, cap);
            injection.push(tf.injection);
            served.extend(tf.served);
            pv_used.extend(tf.pv_used);
            line_flow.extend(tf.line_flow);
        }
        let served_total: f64 = served.values().sum();
        let shed_term = weights.shed_weight * (total_load - served_total);
        let switch_term = prev_closed.as_ref().map_or(0.0, |pc| {
            weights.switch_change_penalty
                * g.edges()
                    .iter()
                    .filter(|e| pc.contains(&e.id) != closed.contains(&e.id))
                    .count() as f64
        });
        let objective = shed_term + flow_term + switch_term;
        if best.as_ref().is_some_and(|(b, _)| *b <= objective + 1e-9) {
            return;
        }
        for node in g.nodes() {
            served.entry(node.id).or_insert(0.0);
            pv_used.entry(node.id).or_insert(0.0);
        }
        for e in g.edges() {
            commodity.entry(e.id).or_insert(0.0);
            line_flow.entry(e.id).or_insert(0.0);
        }
        let source_commodity = (0..g.resources().len())
            .map(|k| trees[k].order.len().saturating_sub(1) as f64)
            .collect();
        best = Some((
            objective,
            FormationSolution {
                step_index: snap.step_index,
                switch_status: g.edges().iter().map(|e| (e.id, closed.contains(&e.id))).collect(),
                assignment,
                served_load_kw: served,
                pv_dispatch_kw: pv_used,
                line_flow_kw: line_flow,
                commodity_flow: commodity,
                source_commodity,
                gfm_injection_kw: injection,
                objective_value: objective,
                load_shed_term: shed_term,
                flow_term,
                switch_term,
            },
        ));
    });

    let (objective, solution) = best.ok_or(EnumerationError::NoFeasibleTopology)?;
    Ok(EnumerationResult {
        solution,
        objective,
        candidates,
        radial_count,
        feasible_count,
    })
}

/// Zones that change microgrid between any two policy-feasible radial
/// topologies: the zones a formation step is allowed to exchange.
pub fn exchangeable_zones(g: &ZoneGraph) -> Result<BTreeSet<ZoneId>, EnumerationError> {
    let islands = g.island_zones();
    let fixed = g.island_spanning_edges();
    let free: Vec<EdgeId> = g
        .edges()
        .iter()
        .filter(|e| !g.is_faulted(e.id) && !islands.contains(&e.from) && !islands.contains(&e.to))
        .map(|e| e.id)
        .collect();
    if free.len() > MAX_ENUMERATED_EDGES {
        return Err(EnumerationError::GuardExceeded(free.len()));
    }
    let need = g.radial_edge_count().saturating_sub(fixed.len());
    let mut owners: BTreeMap<ZoneId, BTreeSet<usize>> = BTreeMap::new();
    for_each_combination(free.len(), need, |pick| {
        let mut closed = fixed.clone();
        closed.extend(pick.iter().map(|&i| free[i]));
        if !g.is_radial_forest(&closed).radial {
            return;
        }
        let trees: Vec<RootedTree> = g
            .resources()
            .iter()
            .map(|r| RootedTree::build(g, &closed, r.node_id))
            .collect();
        for p in g.lateral_policies() {
            let k = g.microgrid_of_gfm(p.gfm_node_id).unwrap();
            let e = g.edge(p.edge_id).unwrap();
            let other = e.other(p.gfm_node_id);
            let outward = if closed.contains(&e.id) && trees[k].parent.get(&other) == Some(&p.gfm_node_id) {
                trees[k].subtree_sizes()[&other]
            } else {
                0
            };
            if (p.force_zero && outward > 0) || outward < p.min_downstream_nodes as usize {
                return;
            }
        }
        for (k, t) in trees.iter().enumerate() {
            for &z in &t.order {
                owners.entry(z).or_default().insert(k);
            }
        }
    });
    Ok(owners
        .into_iter()
        .filter(|(_, ks)| ks.len() > 1)
        .map(|(z, _)| z)
        .collect())
}
