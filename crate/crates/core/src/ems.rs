//! Per-microgrid energy management.
//!
//! [`GreedyEms`] plans 30-minute slots over a day-ahead forecast and then
//! dispatches each slot at 5-minute resolution against realized load and
//! PV. Zones are ranked critical first, then by depth from the source, then
//! by id; lower-ranked zones are dropped first when energy runs short.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{EdgeId, GridFormingResource, RootedTree, ZoneGraph, ZoneId};

const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridState {
    pub microgrid_id: usize,
    pub gfm_node: ZoneId,
    pub resource: GridFormingResource,
    pub member_zones: BTreeSet<ZoneId>,
    pub soc_kwh: f64,
    pub fuel_kwh: f64,
    pub served: BTreeMap<ZoneId, bool>,
}

impl MicrogridState {
    pub fn new(microgrid_id: usize, resource: &GridFormingResource) -> Self {
        Self {
            microgrid_id,
            gfm_node: resource.node_id,
            resource: resource.clone(),
            member_zones: BTreeSet::new(),
            soc_kwh: resource.battery_soc0 * resource.battery_energy_kwh,
            fuel_kwh: resource.diesel_fuel_kwh,
            served: BTreeMap::new(),
        }
    }
}

/// One microgrid's tree plus the criticality flags the EMS ranks by.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrogridTopology {
    pub tree: RootedTree,
    pub critical: BTreeSet<ZoneId>,
}

impl MicrogridTopology {
    pub fn new(g: &ZoneGraph, closed: &BTreeSet<EdgeId>, gfm: ZoneId) -> Self {
        let tree = RootedTree::build(g, closed, gfm);
        let critical = tree
            .order
            .iter()
            .copied()
            .filter(|z| g.node(*z).is_some_and(|n| n.is_critical))
            .collect();
        Self { tree, critical }
    }

    pub fn members(&self) -> BTreeSet<ZoneId> {
        self.tree.order.iter().copied().collect()
    }

    pub fn depth(&self, z: ZoneId) -> u32 {
        self.tree.depth[&z]
    }

    /// Members in service priority order.
    pub fn ranked(&self) -> Vec<ZoneId> {
        let mut zs = self.tree.order.clone();
        zs.sort_by_key(|z| (!self.critical.contains(z), self.tree.depth[z], *z));
        zs
    }

    /// Zones carrying power when `committed` zones are served: the source
    /// zone, every committed zone and everything on their paths to it.
    pub fn energized(&self, committed: &BTreeSet<ZoneId>) -> BTreeSet<ZoneId> {
        let mut on = BTreeSet::from([self.tree.root]);
        for &z in committed {
            for p in self.tree.path_to_root(z) {
                if !on.insert(p) {
                    break;
                }
            }
        }
        on
    }

    /// `zones` together with every member below any of them.
    pub fn with_descendants(&self, zones: &BTreeSet<ZoneId>) -> BTreeSet<ZoneId> {
        self.tree
            .order
            .iter()
            .copied()
            .filter(|&z| self.tree.path_to_root(z).iter().any(|p| zones.contains(p)))
            .collect()
    }
}

/// Load and PV of each zone at one time step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ZoneSample {
    pub load_kw: BTreeMap<ZoneId, f64>,
    pub pv_kw: BTreeMap<ZoneId, f64>,
}

impl ZoneSample {
    fn load(&self, z: ZoneId) -> f64 {
        self.load_kw.get(&z).copied().unwrap_or(0.0)
    }

    fn pv(&self, z: ZoneId) -> f64 {
        self.pv_kw.get(&z).copied().unwrap_or(0.0)
    }

    /// Element-wise mean of several samples.
    pub fn mean(samples: &[ZoneSample]) -> ZoneSample {
        let mut out = ZoneSample::default();
        let n = samples.len().max(1) as f64;
        for s in samples {
            for (&z, &v) in &s.load_kw {
                *out.load_kw.entry(z).or_insert(0.0) += v / n;
            }
            for (&z, &v) in &s.pv_kw {
                *out.pv_kw.entry(z).or_insert(0.0) += v / n;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPlan {
    pub start_min: u32,
    pub committed: BTreeSet<ZoneId>,
    pub energized: BTreeSet<ZoneId>,
    pub served_load_kw: f64,
    /// Discharge positive, charge negative.
    pub battery_kw: f64,
    pub diesel_kw: f64,
    pub pv_used_kw: f64,
    pub pv_curtailed_kw: BTreeMap<ZoneId, f64>,
    pub soc_end_kwh: f64,
    pub fuel_end_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub microgrid_id: usize,
    pub slot_min: u32,
    pub slots: Vec<SlotPlan>,
}

impl SchedulePlan {
    pub fn slot_at(&self, t_min: u32) -> Option<&SlotPlan> {
        self.slots
            .iter()
            .rev()
            .find(|s| s.start_min <= t_min && t_min < s.start_min + self.slot_min)
    }
}

/// Realized operation of one microgrid over one 5-minute step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchStep {
    pub t_min: u32,
    pub microgrid_id: usize,
    pub served_kw: BTreeMap<ZoneId, f64>,
    pub unserved_kw: BTreeMap<ZoneId, f64>,
    pub pv_available_kw: BTreeMap<ZoneId, f64>,
    pub pv_used_kw: BTreeMap<ZoneId, f64>,
    pub battery_kw: f64,
    pub diesel_kw: f64,
    pub soc_kwh: f64,
    pub fuel_kwh: f64,
}

impl DispatchStep {
    pub fn served_total(&self) -> f64 {
        self.served_kw.values().sum()
    }

    pub fn pv_used_total(&self) -> f64 {
        self.pv_used_kw.values().sum()
    }

    /// `served - (pv + diesel + battery)`; zero when the step balances.
    pub fn balance_residual(&self) -> f64 {
        self.served_total() - (self.pv_used_total() + self.diesel_kw + self.battery_kw)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub steps: Vec<DispatchStep>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmsError {
    #[error("microgrid {microgrid}: zone {zone} is not connected to the source")]
    TopologyMismatch { microgrid: usize, zone: ZoneId },
    #[error("forecast window is empty")]
    EmptyForecast,
}

/// The interface the coordinator drives; formation never depends on the
/// implementation behind it.
pub trait EnergyManager {
    /// Plans consecutive `slot_min` slots starting at `start_min`, one per
    /// forecast sample.
    fn schedule(
        &self,
        state: &MicrogridState,
        topo: &MicrogridTopology,
        forecast: &[ZoneSample],
        start_min: u32,
        slot_min: u32,
    ) -> Result<SchedulePlan, EmsError>;

    /// Runs `actuals` (consecutive `step_min` steps from `start_min`)
    /// against `plan`. Zones in `blocked`, and everything fed through them,
    /// are out of service for the first step.
    #[allow(clippy::too_many_arguments)]
    fn dispatch(
        &self,
        state: &mut MicrogridState,
        topo: &MicrogridTopology,
        plan: &SchedulePlan,
        actuals: &[ZoneSample],
        start_min: u32,
        step_min: u32,
        blocked: &BTreeSet<ZoneId>,
    ) -> DispatchRecord;
}

/// Device headroom for one step of length `hours`.
#[derive(Debug, Clone, Copy)]
struct Headroom {
    discharge: f64,
    charge: f64,
    diesel: f64,
}

fn headroom(r: &GridFormingResource, soc: f64, fuel: f64, hours: f64) -> Headroom {
    Headroom {
        discharge: r.battery_power_kw.min(soc / hours).max(0.0),
        charge: r
            .battery_power_kw
            .min((r.battery_energy_kwh - soc) / (r.battery_efficiency * hours))
            .max(0.0),
        diesel: r.diesel_power_kw.min(fuel / hours).max(0.0),
    }
}

/// Battery, diesel and PV use that covers `load` from `pv` under the merit
/// order PV, battery, diesel; surplus PV charges the battery and the rest
/// is curtailed. `None` when the load cannot be met.
fn settle(load: f64, pv: f64, h: Headroom) -> Option<(f64, f64, f64)> {
    let need = load - pv;
    if need <= 0.0 {
        let charge = (-need).min(h.charge);
        return Some((-charge, 0.0, load + charge));
    }
    let b = need.min(h.discharge);
    let d = need - b;
    if d > h.diesel + BALANCE_TOL {
        return None;
    }
    Some((b, d.min(h.diesel), pv))
}

fn advance(r: &GridFormingResource, soc: f64, fuel: f64, battery_kw: f64, diesel_kw: f64, hours: f64) -> (f64, f64) {
    let soc = if battery_kw >= 0.0 {
        soc - battery_kw * hours
    } else {
        soc - battery_kw * r.battery_efficiency * hours
    };
    (
        soc.clamp(0.0, r.battery_energy_kwh),
        (fuel - diesel_kw * hours).max(0.0),
    )
}

#[derive(Debug, Clone, Default)]
pub struct GreedyEms;

impl GreedyEms {
    fn slot_outcome(
        r: &GridFormingResource,
        topo: &MicrogridTopology,
        f: &ZoneSample,
        committed: &BTreeSet<ZoneId>,
        soc: f64,
        fuel: f64,
        hours: f64,
    ) -> Option<(f64, f64, f64)> {
        let load: f64 = committed.iter().map(|&z| f.load(z)).sum();
        let pv: f64 = topo.energized(committed).iter().map(|&z| f.pv(z)).sum();
        settle(load, pv, headroom(r, soc, fuel, hours))
    }

    /// Replays fixed commitments from `soc`/`fuel`; false if any slot fails.
    fn sustainable(
        r: &GridFormingResource,
        topo: &MicrogridTopology,
        forecast: &[ZoneSample],
        commitments: &[BTreeSet<ZoneId>],
        mut soc: f64,
        mut fuel: f64,
        hours: f64,
    ) -> bool {
        for (f, c) in forecast.iter().zip(commitments) {
            match Self::slot_outcome(r, topo, f, c, soc, fuel, hours) {
                Some((b, d, _)) => (soc, fuel) = advance(r, soc, fuel, b, d, hours),
                None => return false,
            }
        }
        true
    }

    /// Critical zones only, greedily slot by slot.
    fn critical_pass(
        r: &GridFormingResource,
        topo: &MicrogridTopology,
        forecast: &[ZoneSample],
        soc0: f64,
        fuel0: f64,
        hours: f64,
    ) -> Vec<BTreeSet<ZoneId>> {
        let ranked: Vec<ZoneId> = topo
            .ranked()
            .into_iter()
            .filter(|z| topo.critical.contains(z))
            .collect();
        let (mut soc, mut fuel) = (soc0, fuel0);
        let mut out = Vec::with_capacity(forecast.len());
        for f in forecast {
            let mut committed = BTreeSet::new();
            for &z in &ranked {
                committed.insert(z);
                if Self::slot_outcome(r, topo, f, &committed, soc, fuel, hours).is_none() {
                    committed.remove(&z);
                }
            }
            let (b, d, _) = Self::slot_outcome(r, topo, f, &committed, soc, fuel, hours).unwrap_or((0.0, 0.0, 0.0));
            (soc, fuel) = advance(r, soc, fuel, b, d, hours);
            out.push(committed);
        }
        out
    }
}

impl EnergyManager for GreedyEms {
    fn schedule(
        &self,
        state: &MicrogridState,
        topo: &MicrogridTopology,
        forecast: &[ZoneSample],
        start_min: u32,
        slot_min: u32,
    ) -> Result<SchedulePlan, EmsError> {
        if forecast.is_empty() {
            return Err(EmsError::EmptyForecast);
        }
        for &z in &state.member_zones {
            if !topo.tree.contains(z) {
                return Err(EmsError::TopologyMismatch {
                    microgrid: state.microgrid_id,
                    zone: z,
                });
            }
        }
        let r = &state.resource;
        let hours = slot_min as f64 / 60.0;
        let ranked = topo.ranked();
        let mut commitments = Self::critical_pass(r, topo, forecast, state.soc_kwh, state.fuel_kwh, hours);

        // add non-critical zones where the slot balances, shallower critical
        // zones are all in, and the critical plan ahead stays affordable
        let (mut soc, mut fuel) = (state.soc_kwh, state.fuel_kwh);
        let mut slots = Vec::with_capacity(forecast.len());
        for s in 0..forecast.len() {
            let f = &forecast[s];
            let mut committed = commitments[s].clone();
            let shallowest_gap = topo
                .critical
                .iter()
                .filter(|z| !committed.contains(z))
                .map(|&z| topo.depth(z))
                .min();
            for &z in ranked.iter().filter(|z| !topo.critical.contains(z)) {
                if shallowest_gap.is_some_and(|d| topo.depth(z) >= d) {
                    continue;
                }
                committed.insert(z);
                let ok = match Self::slot_outcome(r, topo, f, &committed, soc, fuel, hours) {
                    Some((b, d, _)) => {
                        let (s1, f1) = advance(r, soc, fuel, b, d, hours);
                        Self::sustainable(r, topo, &forecast[s + 1..], &commitments[s + 1..], s1, f1, hours)
                    }
                    None => false,
                };
                if !ok {
                    committed.remove(&z);
                }
            }
            let (b, d, pv_used) = Self::slot_outcome(r, topo, f, &committed, soc, fuel, hours).unwrap_or_else(|| {
                // the critical pass guaranteed feasibility; guard anyway
                committed.clear();
                Self::slot_outcome(r, topo, f, &committed, soc, fuel, hours).expect("empty slot always settles")
            });
            let energized = topo.energized(&committed);
            let pv_avail: f64 = energized.iter().map(|&z| f.pv(z)).sum();
            let scale = if pv_avail > 0.0 { 1.0 - pv_used / pv_avail } else { 0.0 };
            let pv_curtailed_kw: BTreeMap<ZoneId, f64> = topo
                .tree
                .order
                .iter()
                .map(|&z| {
                    (
                        z,
                        if energized.contains(&z) {
                            f.pv(z) * scale
                        } else {
                            f.pv(z)
                        },
                    )
                })
                .collect();
            (soc, fuel) = advance(r, soc, fuel, b, d, hours);
            commitments[s] = committed.clone();
            slots.push(SlotPlan {
                start_min: start_min + s as u32 * slot_min,
                served_load_kw: committed.iter().map(|&z| f.load(z)).sum(),
                committed,
                energized,
                battery_kw: b,
                diesel_kw: d,
                pv_used_kw: pv_used,
                pv_curtailed_kw,
                soc_end_kwh: soc,
                fuel_end_kwh: fuel,
            });
        }
        Ok(SchedulePlan {
            microgrid_id: state.microgrid_id,
            slot_min,
            slots,
        })
    }

    fn dispatch(
        &self,
        state: &mut MicrogridState,
        topo: &MicrogridTopology,
        plan: &SchedulePlan,
        actuals: &[ZoneSample],
        start_min: u32,
        step_min: u32,
        blocked: &BTreeSet<ZoneId>,
    ) -> DispatchRecord {
        let r = state.resource.clone();
        let hours = step_min as f64 / 60.0;
        let ranked = topo.ranked();
        let out_of_service = topo.with_descendants(blocked);
        let mut shed: BTreeSet<ZoneId> = BTreeSet::new();
        let mut record = DispatchRecord::default();
        let mut current_slot = None;

        for (i, a) in actuals.iter().enumerate() {
            let t = start_min + i as u32 * step_min;
            let slot = plan.slot_at(t);
            let slot_start = slot.map(|s| s.start_min);
            if slot_start != current_slot {
                // shedding lasts for the rest of a plan slot
                shed.clear();
                current_slot = slot_start;
            }
            let mut committed: BTreeSet<ZoneId> = slot
                .map(|s| s.committed.iter().copied().filter(|z| topo.tree.contains(*z)).collect())
                .unwrap_or_default();
            committed.retain(|z| !(i == 0 && out_of_service.contains(z)) && !shed.contains(z));
            let (b0, d0) = slot.map_or((0.0, 0.0), |s| (s.battery_kw, s.diesel_kw));

            let (battery, diesel, pv_used, energized) = loop {
                let h = headroom(&r, state.soc_kwh, state.fuel_kwh, hours);
                let energized = topo.energized(&committed);
                let load: f64 = committed.iter().map(|&z| a.load(z)).sum();
                let pv: f64 = energized.iter().map(|&z| a.pv(z)).sum();
                let mut b = b0.clamp(-h.charge, h.discharge);
                let mut d = d0.clamp(0.0, h.diesel);
                let deficit = load - pv - b - d;
                if deficit > 0.0 {
                    let rb = deficit.min(h.discharge - b);
                    b += rb;
                    let rd = (deficit - rb).min(h.diesel - d);
                    d += rd;
                    if deficit - rb - rd > BALANCE_TOL {
                        // drop the lowest-ranked committed zone and retry
                        let victim = ranked.iter().rev().find(|z| committed.contains(z)).copied();
                        match victim {
                            Some(z) => {
                                committed.remove(&z);
                                shed.insert(z);
                                continue;
                            }
                            None => unreachable!("an empty commitment never has a deficit"),
                        }
                    }
                    // exact balance, absorbing rounding into diesel or battery
                    if d > 0.0 {
                        d = load - pv - b;
                    } else {
                        b = load - pv - d;
                    }
                    break (b, d, pv, energized);
                }
                let surplus = -deficit;
                // soak up surplus: charge harder, then back off diesel,
                // then curtail PV
                let rb = surplus.min(b + h.charge);
                b -= rb;
                let rd = (surplus - rb).min(d);
                d -= rd;
                let pv_used = load - b - d;
                break (b, d, pv_used.clamp(0.0, pv), energized);
            };

            let pv_avail_energized: f64 = energized.iter().map(|&z| a.pv(z)).sum();
            let share = if pv_avail_energized > 0.0 {
                pv_used / pv_avail_energized
            } else {
                0.0
            };
            let mut served_kw = BTreeMap::new();
            let mut unserved_kw = BTreeMap::new();
            let mut pv_available_kw = BTreeMap::new();
            let mut pv_used_kw = BTreeMap::new();
            for &z in &topo.tree.order {
                let l = a.load(z);
                let s = if committed.contains(&z) { l } else { 0.0 };
                served_kw.insert(z, s);
                unserved_kw.insert(z, l - s);
                pv_available_kw.insert(z, a.pv(z));
                pv_used_kw.insert(z, if energized.contains(&z) { a.pv(z) * share } else { 0.0 });
            }
            (state.soc_kwh, state.fuel_kwh) = advance(&r, state.soc_kwh, state.fuel_kwh, battery, diesel, hours);
            state.served = topo.tree.order.iter().map(|&z| (z, committed.contains(&z))).collect();
            record.steps.push(DispatchStep {
                t_min: t,
                microgrid_id: state.microgrid_id,
                served_kw,
                unserved_kw,
                pv_available_kw,
                pv_used_kw,
                battery_kw: battery,
                diesel_kw: diesel,
                soc_kwh: state.soc_kwh,
                fuel_kwh: state.fuel_kwh,
            });
        }
        record
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{SwitchEdge, ZoneNode};

    fn resource(bp: f64, be: f64, soc0: f64, dp: f64, fuel: f64) -> GridFormingResource {
        GridFormingResource {
            node_id: 1,
            battery_power_kw: bp,
            battery_energy_kwh: be,
            battery_soc0: soc0,
            battery_efficiency: 0.95,
            diesel_power_kw: dp,
            diesel_fuel_kwh: fuel,
        }
    }

    /// Path 1-2-...-n with the source at zone 1.
    fn chain(n: u32, critical: &[ZoneId], res: GridFormingResource) -> (ZoneGraph, MicrogridState, MicrogridTopology) {
        let nodes = (1..=n)
            .map(|id| ZoneNode {
                id,
                feeder_id: 1,
                is_critical: critical.contains(&id),
                peak_load_kw: 100.0,
                has_gfm: id == 1,
            })
            .collect();
        let edges = (1..n)
            .map(|id| SwitchEdge {
                id,
                from: id,
                to: id + 1,
                normally_open: false,
                flow_limit_kw: 1e6,
            })
            .collect();
        let g = ZoneGraph::new(nodes, edges, vec![res.clone()], BTreeSet::new(), vec![]).unwrap();
        let closed = g.default_closed_edges();
        let topo = MicrogridTopology::new(&g, &closed, 1);
        let mut st = MicrogridState::new(0, &res);
        st.member_zones = topo.members();
        (g, st, topo)
    }

    fn flat(loads: &[(ZoneId, f64)], pvs: &[(ZoneId, f64)], n: usize) -> Vec<ZoneSample> {
        let s = ZoneSample {
            load_kw: loads.iter().copied().collect(),
            pv_kw: pvs.iter().copied().collect(),
        };
        vec![s; n]
    }

    #[test]
    fn single_zone_flat_load_on_full_battery() {
        let (_, st, topo) = chain(1, &[], resource(1000.0, 12_000.0, 1.0, 0.0, 0.0));
        let plan = GreedyEms
            .schedule(&st, &topo, &flat(&[(1, 100.0)], &[], 48), 0, 30)
            .unwrap();
        assert_eq!(plan.slots.len(), 48);
        let mut prev = 12_000.0;
        for s in &plan.slots {
            assert!(s.committed.contains(&1));
            assert!((prev - s.soc_end_kwh - 50.0).abs() < 1e-9);
            prev = s.soc_end_kwh;
        }
    }

    #[test]
    fn no_resources_sheds_everything() {
        let (_, st, topo) = chain(3, &[2], resource(1000.0, 1000.0, 0.0, 0.0, 0.0));
        let plan = GreedyEms
            .schedule(&st, &topo, &flat(&[(1, 10.0), (2, 10.0), (3, 10.0)], &[], 4), 0, 30)
            .unwrap();
        assert!(plan.slots.iter().all(|s| s.committed.is_empty()));
    }

    #[test]
    fn plan_balances() {
        let (_, st, topo) = chain(4, &[3], resource(200.0, 400.0, 0.5, 150.0, 300.0));
        let fc = flat(&[(1, 80.0), (2, 60.0), (3, 90.0), (4, 70.0)], &[(2, 120.0)], 16);
        let plan = GreedyEms.schedule(&st, &topo, &fc, 0, 30).unwrap();
        for s in &plan.slots {
            assert!((s.served_load_kw - s.pv_used_kw - s.battery_kw - s.diesel_kw).abs() < 1e-6);
            assert!(s.soc_end_kwh >= 0.0 && s.soc_end_kwh <= 400.0);
        }
    }

    #[test]
    fn critical_zone_beats_shallower_noncritical() {
        // only one zone's worth of energy; zone 3 is critical
        let (_, st, topo) = chain(3, &[3], resource(100.0, 1000.0, 1.0, 0.0, 0.0));
        let plan = GreedyEms
            .schedule(&st, &topo, &flat(&[(1, 0.0), (2, 80.0), (3, 80.0)], &[], 2), 0, 30)
            .unwrap();
        assert_eq!(plan.slots[0].committed, BTreeSet::from([1, 3]));
        assert!(plan.slots[0].energized.contains(&2));
    }

    #[test]
    fn lookahead_keeps_energy_for_critical_zone() {
        // enough battery for the critical zone all day but not both zones
        let (_, st, topo) = chain(3, &[2], resource(500.0, 400.0, 1.0, 0.0, 0.0));
        let fc = flat(&[(1, 0.0), (2, 100.0), (3, 100.0)], &[], 8);
        let plan = GreedyEms.schedule(&st, &topo, &fc, 0, 30).unwrap();
        assert!(plan.slots.iter().all(|s| s.committed.contains(&2)));
    }

    #[test]
    fn exact_forecast_dispatch_follows_plan() {
        let (_, mut st, topo) = chain(3, &[2], resource(300.0, 600.0, 0.8, 100.0, 200.0));
        let sample = ZoneSample {
            load_kw: [(1, 50.0), (2, 100.0), (3, 120.0)].into(),
            pv_kw: [(1, 30.0)].into(),
        };
        let plan = GreedyEms.schedule(&st, &topo, &[sample.clone()], 0, 30).unwrap();
        let rec = GreedyEms.dispatch(&mut st, &topo, &plan, &vec![sample; 6], 0, 5, &BTreeSet::new());
        let s0 = &plan.slots[0];
        for step in &rec.steps {
            assert!((step.battery_kw - s0.battery_kw).abs() < 1e-9);
            assert!((step.diesel_kw - s0.diesel_kw).abs() < 1e-9);
            assert!((step.served_total() - s0.served_load_kw).abs() < 1e-9);
        }
        assert!((st.soc_kwh - s0.soc_end_kwh).abs() < 1e-9);
    }

    #[test]
    fn pv_spike_on_full_battery_is_curtailed() {
        let (_, mut st, topo) = chain(1, &[], resource(1000.0, 1000.0, 1.0, 0.0, 0.0));
        let fc = ZoneSample {
            load_kw: [(1, 200.0)].into(),
            pv_kw: [(1, 200.0)].into(),
        };
        let plan = GreedyEms.schedule(&st, &topo, &[fc], 0, 30).unwrap();
        let act = ZoneSample {
            load_kw: [(1, 200.0)].into(),
            pv_kw: [(1, 700.0)].into(),
        };
        let rec = GreedyEms.dispatch(&mut st, &topo, &plan, &[act], 0, 5, &BTreeSet::new());
        let s = &rec.steps[0];
        assert!((s.pv_used_total() - 200.0).abs() < 1e-9);
        assert!(s.balance_residual().abs() < 1e-9);
        assert_eq!(st.soc_kwh, 1000.0);
    }

    #[test]
    fn load_spike_sheds_lowest_rank_in_same_step() {
        let (_, mut st, topo) = chain(3, &[2], resource(200.0, 1000.0, 1.0, 0.0, 0.0));
        let fc = ZoneSample {
            load_kw: [(1, 0.0), (2, 80.0), (3, 80.0)].into(),
            pv_kw: BTreeMap::new(),
        };
        let plan = GreedyEms.schedule(&st, &topo, &[fc], 0, 30).unwrap();
        assert_eq!(plan.slots[0].committed, BTreeSet::from([1, 2, 3]));
        let spike = ZoneSample {
            load_kw: [(1, 0.0), (2, 80.0), (3, 150.0)].into(),
            pv_kw: BTreeMap::new(),
        };
        let rec = GreedyEms.dispatch(&mut st, &topo, &plan, &[spike], 0, 5, &BTreeSet::new());
        let s = &rec.steps[0];
        assert_eq!(s.served_kw[&3], 0.0);
        assert_eq!(s.served_kw[&2], 80.0);
        assert!(s.balance_residual().abs() < 1e-9);
    }

    #[test]
    fn blocked_zone_takes_its_subtree_down() {
        let (_, mut st, topo) = chain(3, &[], resource(1000.0, 1000.0, 1.0, 0.0, 0.0));
        let fc = ZoneSample {
            load_kw: [(1, 10.0), (2, 10.0), (3, 10.0)].into(),
            pv_kw: BTreeMap::new(),
        };
        let plan = GreedyEms.schedule(&st, &topo, &[fc.clone()], 0, 30).unwrap();
        let rec = GreedyEms.dispatch(&mut st, &topo, &plan, &[fc], 0, 5, &BTreeSet::from([2]));
        assert_eq!(rec.steps[0].served_kw[&1], 10.0);
        assert_eq!(rec.steps[0].served_kw[&2], 0.0);
        assert_eq!(rec.steps[0].served_kw[&3], 0.0);
    }
}
