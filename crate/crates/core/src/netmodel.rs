//! Zone graph of a multi-feeder distribution system.
//!
//! Nodes are load zones (sections between controllable switches), edges are
//! switches. Grid-forming resources sit on zones; faulted edges are removed
//! from the closable set.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ZoneId = u32;
pub type EdgeId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneNode {
    pub id: ZoneId,
    pub feeder_id: u32,
    pub is_critical: bool,
    /// Total connected load of the zone at reference conditions.
    pub peak_load_kw: f64,
    pub has_gfm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchEdge {
    pub id: EdgeId,
    pub from: ZoneId,
    pub to: ZoneId,
    pub normally_open: bool,
    /// Symmetric line flow limit.
    pub flow_limit_kw: f64,
}

impl SwitchEdge {
    pub fn touches(&self, zone: ZoneId) -> bool {
        self.from == zone || self.to == zone
    }

    pub fn other(&self, zone: ZoneId) -> ZoneId {
        if self.from == zone {
            self.to
        } else {
            self.from
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFormingResource {
    pub node_id: ZoneId,
    pub battery_power_kw: f64,
    pub battery_energy_kwh: f64,
    pub battery_soc0: f64,
    /// Charging efficiency; discharge is lossless.
    pub battery_efficiency: f64,
    pub diesel_power_kw: f64,
    /// Fuel budget expressed as deliverable electrical energy.
    pub diesel_fuel_kwh: f64,
}

impl GridFormingResource {
    pub fn rated_injection_kw(&self) -> f64 {
        self.battery_power_kw + self.diesel_power_kw
    }
}

/// Lower bound on the fictitious commodity leaving a grid-forming zone along
/// one incident edge. `min_downstream_nodes = n` pins at least `n` zones
/// behind that edge to the microgrid; `force_zero` keeps the branch out of
/// the microgrid entirely.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LateralPolicy {
    pub gfm_node_id: ZoneId,
    pub edge_id: EdgeId,
    pub min_downstream_nodes: u32,
    #[serde(default)]
    pub force_zero: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("duplicate zone id {0}")]
    DuplicateZone(ZoneId),
    #[error("duplicate edge id {0}")]
    DuplicateEdge(EdgeId),
    #[error("edge {edge} references unknown zone {zone}")]
    UnknownZone { edge: EdgeId, zone: ZoneId },
    #[error("edge {0} is a self loop")]
    SelfLoop(EdgeId),
    #[error("edges {0} and {1} join the same pair of zones")]
    ParallelEdges(EdgeId, EdgeId),
    #[error("zone {0} has a negative peak load")]
    NegativeLoad(ZoneId),
    #[error("edge {0} needs a positive flow limit")]
    BadFlowLimit(EdgeId),
    #[error("zone {0} is flagged grid-forming but hosts {1} resources")]
    GfmMismatch(ZoneId, usize),
    #[error("resource at zone {0} is invalid: {1}")]
    BadResource(ZoneId, &'static str),
    #[error("faulted edge {0} does not exist")]
    UnknownFault(EdgeId),
    #[error("lateral policy on edge {edge}: {reason}")]
    BadPolicy { edge: EdgeId, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneGraph {
    nodes: Vec<ZoneNode>,
    edges: Vec<SwitchEdge>,
    resources: Vec<GridFormingResource>,
    faulted_edges: BTreeSet<EdgeId>,
    lateral_policies: Vec<LateralPolicy>,
    #[serde(skip)]
    index: BTreeMap<ZoneId, usize>,
}

/// One connected component of a closed-switch set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    /// Grid-forming zone anchoring the tree, if any.
    pub gfm: Option<ZoneId>,
    pub nodes: BTreeSet<ZoneId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RadialCensus {
    pub radial: bool,
    /// Components that contain a grid-forming zone.
    pub trees: Vec<Tree>,
    /// Components without one (load islands and de-energized pieces).
    pub unanchored: Vec<BTreeSet<ZoneId>>,
    pub reason: Option<String>,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    /// Returns false if `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
        true
    }
}

impl ZoneGraph {
    pub fn new(
        mut nodes: Vec<ZoneNode>,
        mut edges: Vec<SwitchEdge>,
        mut resources: Vec<GridFormingResource>,
        faulted_edges: BTreeSet<EdgeId>,
        lateral_policies: Vec<LateralPolicy>,
    ) -> Result<Self, NetworkError> {
        nodes.sort_by_key(|n| n.id);
        edges.sort_by_key(|e| e.id);
        resources.sort_by_key(|r| r.node_id);
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(NetworkError::DuplicateZone(n.id));
            }
            if !(n.peak_load_kw >= 0.0) {
                return Err(NetworkError::NegativeLoad(n.id));
            }
        }
        let mut pairs: BTreeMap<(ZoneId, ZoneId), EdgeId> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for e in &edges {
            if !seen.insert(e.id) {
                return Err(NetworkError::DuplicateEdge(e.id));
            }
            for z in [e.from, e.to] {
                if !index.contains_key(&z) {
                    return Err(NetworkError::UnknownZone { edge: e.id, zone: z });
                }
            }
            if e.from == e.to {
                return Err(NetworkError::SelfLoop(e.id));
            }
            if !(e.flow_limit_kw > 0.0) {
                return Err(NetworkError::BadFlowLimit(e.id));
            }
            let key = (e.from.min(e.to), e.from.max(e.to));
            if let Some(prev) = pairs.insert(key, e.id) {
                return Err(NetworkError::ParallelEdges(prev, e.id));
            }
        }
        for n in &nodes {
            let count = resources.iter().filter(|r| r.node_id == n.id).count();
            if (n.has_gfm && count != 1) || (!n.has_gfm && count != 0) {
                return Err(NetworkError::GfmMismatch(n.id, count));
            }
        }
        for r in &resources {
            if !index.contains_key(&r.node_id) {
                return Err(NetworkError::BadResource(r.node_id, "unknown zone"));
            }
            if !(r.battery_power_kw >= 0.0
                && r.battery_energy_kwh >= 0.0
                && r.diesel_power_kw >= 0.0
                && r.diesel_fuel_kwh >= 0.0)
            {
                return Err(NetworkError::BadResource(r.node_id, "ratings must be nonnegative"));
            }
            if !(0.0..=1.0).contains(&r.battery_soc0) {
                return Err(NetworkError::BadResource(
                    r.node_id,
                    "initial state of charge outside [0, 1]",
                ));
            }
            if !(r.battery_efficiency > 0.0 && r.battery_efficiency <= 1.0) {
                return Err(NetworkError::BadResource(r.node_id, "efficiency outside (0, 1]"));
            }
        }
        for f in &faulted_edges {
            if !seen.contains(f) {
                return Err(NetworkError::UnknownFault(*f));
            }
        }
        let g = ZoneGraph {
            nodes,
            edges,
            resources,
            faulted_edges,
            lateral_policies: Vec::new(),
            index,
        };
        for p in &lateral_policies {
            g.check_policy(p)?;
        }
        Ok(ZoneGraph { lateral_policies, ..g })
    }

    fn check_policy(&self, p: &LateralPolicy) -> Result<(), NetworkError> {
        let edge = self.edge(p.edge_id).ok_or(NetworkError::BadPolicy {
            edge: p.edge_id,
            reason: "unknown edge",
        })?;
        if !edge.touches(p.gfm_node_id) {
            return Err(NetworkError::BadPolicy {
                edge: p.edge_id,
                reason: "edge is not incident to the grid-forming zone",
            });
        }
        if !self.node(p.gfm_node_id).is_some_and(|n| n.has_gfm) {
            return Err(NetworkError::BadPolicy {
                edge: p.edge_id,
                reason: "policy zone hosts no grid-forming resource",
            });
        }
        if p.min_downstream_nodes as usize > self.nodes.len().saturating_sub(1) {
            return Err(NetworkError::BadPolicy {
                edge: p.edge_id,
                reason: "minimum exceeds the number of zones",
            });
        }
        if p.force_zero && p.min_downstream_nodes != 0 {
            return Err(NetworkError::BadPolicy {
                edge: p.edge_id,
                reason: "force_zero requires a zero minimum",
            });
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[ZoneNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[SwitchEdge] {
        &self.edges
    }

    /// Resources ordered by zone id; position is the microgrid index.
    pub fn resources(&self) -> &[GridFormingResource] {
        &self.resources
    }

    pub fn faulted_edges(&self) -> &BTreeSet<EdgeId> {
        &self.faulted_edges
    }

    pub fn lateral_policies(&self) -> &[LateralPolicy] {
        &self.lateral_policies
    }

    pub fn node_index(&self, id: ZoneId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node(&self, id: ZoneId) -> Option<&ZoneNode> {
        self.node_index(id).map(|i| &self.nodes[i])
    }

    pub fn edge(&self, id: EdgeId) -> Option<&SwitchEdge> {
        self.edges.iter().find(|e| e.id == id)
    }

    pub fn edge_index(&self, id: EdgeId) -> Option<usize> {
        self.edges.iter().position(|e| e.id == id)
    }

    pub fn is_faulted(&self, id: EdgeId) -> bool {
        self.faulted_edges.contains(&id)
    }

    pub fn gfm_nodes(&self) -> Vec<ZoneId> {
        self.resources.iter().map(|r| r.node_id).collect()
    }

    /// Microgrid index anchored at `zone`, if it is grid-forming.
    pub fn microgrid_of_gfm(&self, zone: ZoneId) -> Option<usize> {
        self.resources.iter().position(|r| r.node_id == zone)
    }

    /// Copy of the graph with a different fault set.
    pub fn with_faults(&self, faulted: BTreeSet<EdgeId>) -> Result<ZoneGraph, NetworkError> {
        for f in &faulted {
            if self.edge(*f).is_none() {
                return Err(NetworkError::UnknownFault(*f));
            }
        }
        Ok(ZoneGraph {
            faulted_edges: faulted,
            ..self.clone()
        })
    }

    /// Copy of the graph with a different set of lateral policies.
    pub fn with_policies(&self, policies: Vec<LateralPolicy>) -> Result<ZoneGraph, NetworkError> {
        for p in &policies {
            self.check_policy(p)?;
        }
        Ok(ZoneGraph {
            lateral_policies: policies,
            ..self.clone()
        })
    }

    pub fn live_edges(&self) -> impl Iterator<Item = &SwitchEdge> {
        self.edges.iter().filter(move |e| !self.faulted_edges.contains(&e.id))
    }

    fn components(&self, edges: impl Iterator<Item = EdgeId>) -> Vec<BTreeSet<ZoneId>> {
        let mut dsu = DisjointSet::new(self.nodes.len());
        for id in edges {
            if let Some(e) = self.edge(id) {
                dsu.union(self.index[&e.from], self.index[&e.to]);
            }
        }
        let mut groups: BTreeMap<usize, BTreeSet<ZoneId>> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            groups.entry(dsu.find(i)).or_default().insert(n.id);
        }
        groups.into_values().collect()
    }

    /// Components of the graph with every healthy switch closed that cannot
    /// reach any grid-forming resource.
    pub fn load_islands(&self) -> Vec<BTreeSet<ZoneId>> {
        let live: Vec<EdgeId> = self.live_edges().map(|e| e.id).collect();
        self.components(live.into_iter())
            .into_iter()
            .filter(|c| !c.iter().any(|z| self.node(*z).is_some_and(|n| n.has_gfm)))
            .collect()
    }

    pub fn island_zones(&self) -> BTreeSet<ZoneId> {
        self.load_islands().into_iter().flatten().collect()
    }

    /// Zones touching a normally-open tie switch.
    pub fn leaf_nodes(&self) -> BTreeSet<ZoneId> {
        self.edges
            .iter()
            .filter(|e| e.normally_open)
            .flat_map(|e| [e.from, e.to])
            .collect()
    }

    /// Number of closed switches in any radial configuration:
    /// `|V| - |Π| - |R|`.
    pub fn radial_edge_count(&self) -> usize {
        self.nodes
            .len()
            .saturating_sub(self.resources.len())
            .saturating_sub(self.load_islands().len())
    }

    /// Edges closed in the normal (pre-outage) configuration.
    pub fn default_closed_edges(&self) -> BTreeSet<EdgeId> {
        self.live_edges().filter(|e| !e.normally_open).map(|e| e.id).collect()
    }

    /// Checks that `closed` forms a forest where each grid-forming zone
    /// anchors its own tree and every zone outside a load island is
    /// connected to one.
    pub fn is_radial_forest(&self, closed: &BTreeSet<EdgeId>) -> RadialCensus {
        let fail = |reason: String| RadialCensus {
            radial: false,
            trees: Vec::new(),
            unanchored: Vec::new(),
            reason: Some(reason),
        };
        let mut dsu = DisjointSet::new(self.nodes.len());
        for id in closed {
            let Some(e) = self.edge(*id) else {
                return fail(format!("unknown edge {id}"));
            };
            if self.is_faulted(*id) {
                return fail(format!("edge {id} is faulted"));
            }
            if !dsu.union(self.index[&e.from], self.index[&e.to]) {
                return fail(format!("closing edge {id} creates a cycle"));
            }
        }
        let mut groups: BTreeMap<usize, BTreeSet<ZoneId>> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            groups.entry(dsu.find(i)).or_default().insert(n.id);
        }
        let islands = self.island_zones();
        let mut trees = Vec::new();
        let mut unanchored = Vec::new();
        let mut reason = None;
        for comp in groups.into_values() {
            let gfms: Vec<ZoneId> = comp
                .iter()
                .copied()
                .filter(|z| self.node(*z).is_some_and(|n| n.has_gfm))
                .collect();
            match gfms.len() {
                0 => {
                    if reason.is_none() {
                        if let Some(z) = comp.iter().find(|z| !islands.contains(z)) {
                            reason = Some(format!("zone {z} is not connected to a grid-forming resource"));
                        }
                    }
                    unanchored.push(comp);
                }
                1 => trees.push(Tree {
                    gfm: Some(gfms[0]),
                    nodes: comp,
                }),
                _ => {
                    if reason.is_none() {
                        reason = Some(format!("grid-forming zones {gfms:?} share a tree"));
                    }
                    trees.push(Tree { gfm: None, nodes: comp });
                }
            }
        }
        RadialCensus {
            radial: reason.is_none(),
            trees,
            unanchored,
            reason,
        }
    }

    /// Healthy neighbours of `zone` through any switch, with the edge used.
    pub fn neighbours(&self, zone: ZoneId) -> impl Iterator<Item = (ZoneId, &SwitchEdge)> {
        self.live_edges()
            .filter(move |e| e.touches(zone))
            .map(move |e| (e.other(zone), e))
    }

    /// Zones reachable from `start` over healthy switches without entering
    /// `blocked` or any grid-forming zone.
    pub fn reach_avoiding_gfm(&self, start: ZoneId, blocked: ZoneId) -> BTreeSet<ZoneId> {
        let mut seen = BTreeSet::new();
        if self.node(start).is_none_or(|n| n.has_gfm) || start == blocked {
            return seen;
        }
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(z) = queue.pop_front() {
            for (nb, _) in self.neighbours(z) {
                if nb == blocked || seen.contains(&nb) || self.node(nb).is_some_and(|n| n.has_gfm) {
                    continue;
                }
                seen.insert(nb);
                queue.push_back(nb);
            }
        }
        seen
    }

    /// Breadth-first spanning trees of each load island; these switches are
    /// held closed so the radial count holds with islands present.
    pub fn island_spanning_edges(&self) -> BTreeSet<EdgeId> {
        let mut out = BTreeSet::new();
        for island in self.load_islands() {
            let Some(&root) = island.iter().next() else { continue };
            let mut seen = BTreeSet::from([root]);
            let mut queue = VecDeque::from([root]);
            while let Some(z) = queue.pop_front() {
                for (nb, e) in self.neighbours(z) {
                    if island.contains(&nb) && seen.insert(nb) {
                        out.insert(e.id);
                        queue.push_back(nb);
                    }
                }
            }
        }
        out
    }
}

/// Rooted view of one microgrid tree.
#[derive(Debug, Clone, PartialEq)]
pub struct RootedTree {
    pub root: ZoneId,
    /// Parent of each member (root maps to itself).
    pub parent: BTreeMap<ZoneId, ZoneId>,
    /// Edge to the parent for each non-root member.
    pub parent_edge: BTreeMap<ZoneId, EdgeId>,
    pub depth: BTreeMap<ZoneId, u32>,
    /// Members in breadth-first order from the root.
    pub order: Vec<ZoneId>,
}

impl RootedTree {
    /// Roots the subgraph of `closed` switches containing `root`.
    pub fn build(g: &ZoneGraph, closed: &BTreeSet<EdgeId>, root: ZoneId) -> RootedTree {
        let mut parent = BTreeMap::from([(root, root)]);
        let mut parent_edge = BTreeMap::new();
        let mut depth = BTreeMap::from([(root, 0)]);
        let mut order = vec![root];
        let mut queue = VecDeque::from([root]);
        while let Some(z) = queue.pop_front() {
            let mut next: Vec<(ZoneId, EdgeId)> = g
                .neighbours(z)
                .filter(|(_, e)| closed.contains(&e.id))
                .map(|(nb, e)| (nb, e.id))
                .collect();
            next.sort();
            for (nb, eid) in next {
                if parent.contains_key(&nb) {
                    continue;
                }
                parent.insert(nb, z);
                parent_edge.insert(nb, eid);
                depth.insert(nb, depth[&z] + 1);
                order.push(nb);
                queue.push_back(nb);
            }
        }
        RootedTree {
            root,
            parent,
            parent_edge,
            depth,
            order,
        }
    }

    pub fn contains(&self, z: ZoneId) -> bool {
        self.parent.contains_key(&z)
    }

    /// Zones on the path from `z` up to (and including) the root.
    pub fn path_to_root(&self, z: ZoneId) -> Vec<ZoneId> {
        let mut path = vec![z];
        let mut cur = z;
        while let Some(&p) = self.parent.get(&cur) {
            if p == cur {
                break;
            }
            path.push(p);
            cur = p;
        }
        path
    }

    /// Number of members in the subtree hanging below `z` (including `z`).
    pub fn subtree_sizes(&self) -> BTreeMap<ZoneId, usize> {
        let mut size: BTreeMap<ZoneId, usize> = self.order.iter().map(|&z| (z, 1)).collect();
        for &z in self.order.iter().rev() {
            let p = self.parent[&z];
            if p != z {
                let s = size[&z];
                *size.get_mut(&p).unwrap() += s;
            }
        }
        size
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::fixture_graph;

    fn set(v: &[u32]) -> BTreeSet<u32> {
        v.iter().copied().collect()
    }

    #[test]
    fn fixture_has_no_islands() {
        let g = fixture_graph();
        assert!(g.load_islands().is_empty());
        assert_eq!(g.radial_edge_count(), 8);
    }

    #[test]
    fn faulting_both_edges_of_zone_5_isolates_it() {
        let g = fixture_graph();
        let faults: BTreeSet<EdgeId> = g.edges().iter().filter(|e| e.touches(5)).map(|e| e.id).collect();
        let g = g.with_faults(faults).unwrap();
        assert_eq!(g.load_islands(), vec![set(&[5])]);
        assert_eq!(g.radial_edge_count(), 7);
    }

    #[test]
    fn lone_gfm_is_not_an_island() {
        let g = ZoneGraph::new(
            vec![ZoneNode {
                id: 1,
                feeder_id: 1,
                is_critical: false,
                peak_load_kw: 10.0,
                has_gfm: true,
            }],
            vec![],
            vec![GridFormingResource {
                node_id: 1,
                battery_power_kw: 1.0,
                battery_energy_kwh: 1.0,
                battery_soc0: 1.0,
                battery_efficiency: 0.95,
                diesel_power_kw: 0.0,
                diesel_fuel_kwh: 0.0,
            }],
            BTreeSet::new(),
            vec![],
        )
        .unwrap();
        assert!(g.load_islands().is_empty());
    }

    #[test]
    fn leaf_nodes_are_tie_endpoints() {
        let g = fixture_graph();
        assert_eq!(g.leaf_nodes(), set(&[2, 5, 6, 10]));
    }

    #[test]
    fn leaf_nodes_deduplicate_shared_endpoint() {
        let mk = |id| ZoneNode {
            id,
            feeder_id: 1,
            is_critical: false,
            peak_load_kw: 1.0,
            has_gfm: false,
        };
        let e = |id, from, to, open| SwitchEdge {
            id,
            from,
            to,
            normally_open: open,
            flow_limit_kw: 1.0,
        };
        let g = ZoneGraph::new(
            vec![mk(1), mk(2), mk(3)],
            vec![e(1, 1, 2, true), e(2, 1, 3, true)],
            vec![],
            BTreeSet::new(),
            vec![],
        )
        .unwrap();
        assert_eq!(g.leaf_nodes(), set(&[1, 2, 3]));
        let none = ZoneGraph::new(
            vec![mk(1), mk(2)],
            vec![e(1, 1, 2, false)],
            vec![],
            BTreeSet::new(),
            vec![],
        )
        .unwrap();
        assert!(none.leaf_nodes().is_empty());
    }

    #[test]
    fn default_topology_is_radial() {
        let g = fixture_graph();
        let census = g.is_radial_forest(&g.default_closed_edges());
        assert!(census.radial, "{:?}", census.reason);
        let trees: Vec<_> = census.trees.iter().map(|t| t.nodes.clone()).collect();
        assert_eq!(trees, vec![set(&[1, 2, 3, 4, 5]), set(&[6, 7, 8, 9, 10])]);
    }

    #[test]
    fn cycle_is_rejected() {
        // all ten switches closed contains the loop through both ties
        let g = fixture_graph();
        let all: BTreeSet<EdgeId> = g.edges().iter().map(|e| e.id).collect();
        assert!(!g.is_radial_forest(&all).radial);
    }

    #[test]
    fn joining_both_gfms_is_rejected() {
        let g = fixture_graph();
        // default minus (4,5) plus both ties: acyclic but MG1 and MG2 merge
        let mut closed = g.default_closed_edges();
        let e45 = g.edges().iter().find(|e| e.touches(4) && e.touches(5)).unwrap().id;
        closed.remove(&e45);
        for e in g.edges().iter().filter(|e| e.normally_open) {
            closed.insert(e.id);
        }
        let census = g.is_radial_forest(&closed);
        assert!(!census.radial);
        assert!(census.reason.unwrap().contains("share a tree"));
    }

    #[test]
    fn stranded_zone_is_rejected() {
        let g = fixture_graph();
        let mut closed = g.default_closed_edges();
        let e45 = g.edges().iter().find(|e| e.touches(4) && e.touches(5)).unwrap().id;
        closed.remove(&e45);
        assert!(!g.is_radial_forest(&closed).radial);
    }

    #[test]
    fn rejects_malformed_graphs() {
        let mk = |id| ZoneNode {
            id,
            feeder_id: 1,
            is_critical: false,
            peak_load_kw: 1.0,
            has_gfm: false,
        };
        let e = |id, from, to| SwitchEdge {
            id,
            from,
            to,
            normally_open: false,
            flow_limit_kw: 1.0,
        };
        assert_eq!(
            ZoneGraph::new(vec![mk(1), mk(1)], vec![], vec![], BTreeSet::new(), vec![]).unwrap_err(),
            NetworkError::DuplicateZone(1)
        );
        assert_eq!(
            ZoneGraph::new(
                vec![mk(1), mk(2)],
                vec![e(1, 1, 2), e(2, 2, 1)],
                vec![],
                BTreeSet::new(),
                vec![]
            )
            .unwrap_err(),
            NetworkError::ParallelEdges(1, 2)
        );
        assert_eq!(
            ZoneGraph::new(vec![mk(1)], vec![e(1, 1, 1)], vec![], BTreeSet::new(), vec![]).unwrap_err(),
            NetworkError::SelfLoop(1)
        );
        assert!(matches!(
            ZoneGraph::new(vec![mk(1)], vec![e(1, 1, 9)], vec![], BTreeSet::new(), vec![]).unwrap_err(),
            NetworkError::UnknownZone { .. }
        ));
        let mut gfm = mk(1);
        gfm.has_gfm = true;
        assert_eq!(
            ZoneGraph::new(vec![gfm], vec![], vec![], BTreeSet::new(), vec![]).unwrap_err(),
            NetworkError::GfmMismatch(1, 0)
        );
    }

    #[test]
    fn policies_are_checked_against_topology() {
        let g = fixture_graph();
        let bad = LateralPolicy {
            gfm_node_id: 1,
            edge_id: g.edges().iter().find(|e| e.touches(9) && e.touches(10)).unwrap().id,
            min_downstream_nodes: 1,
            force_zero: false,
        };
        assert!(matches!(
            g.with_policies(vec![bad]),
            Err(NetworkError::BadPolicy { .. })
        ));
    }

    #[test]
    fn rooted_tree_depths() {
        let g = fixture_graph();
        let t = RootedTree::build(&g, &g.default_closed_edges(), 7);
        assert_eq!(t.depth[&7], 0);
        assert_eq!(t.depth[&6], 1);
        assert_eq!(t.depth[&10], 3);
        assert_eq!(t.path_to_root(10), vec![10, 9, 8, 7]);
        assert_eq!(t.subtree_sizes()[&8], 3);
    }
}
