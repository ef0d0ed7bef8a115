//! Run metrics, paired comparisons and the files written for each run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{diff_topologies, RestorationRun};
use crate::netmodel::ZoneId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneMetrics {
    pub zone: ZoneId,
    pub feeder: u32,
    pub critical: bool,
    pub demand_kwh: f64,
    pub served_kwh: f64,
    pub unserved_kwh: f64,
    pub percent_served: f64,
    pub unserved_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvMetrics {
    /// `None` for the all-feeder total.
    pub feeder: Option<u32>,
    pub available_kwh: f64,
    pub used_kwh: f64,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceMetrics {
    pub microgrid: usize,
    pub initial_soc_kwh: f64,
    pub final_soc_kwh: f64,
    pub initial_fuel_kwh: f64,
    pub final_fuel_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub scenario: String,
    pub fingerprint: String,
    pub mode: String,
    pub seed: u64,
    pub zones: Vec<ZoneMetrics>,
    pub pv: Vec<PvMetrics>,
    pub resources: Vec<ResourceMetrics>,
    pub total_demand_kwh: f64,
    pub total_served_kwh: f64,
    /// Zone membership changes over the run.
    pub topology_change_count: usize,
    pub formation_events: usize,
    /// Sum over critical zones of hours with any unserved load.
    pub critical_unserved_hours: f64,
}

impl MetricsSummary {
    pub fn pv_utilization(&self) -> f64 {
        self.pv
            .iter()
            .find(|p| p.feeder.is_none())
            .map_or(0.0, |p| p.utilization)
    }

    pub fn critical_percent_sum(&self) -> f64 {
        self.zones.iter().filter(|z| z.critical).map(|z| z.percent_served).sum()
    }

    pub fn zone(&self, id: ZoneId) -> Option<&ZoneMetrics> {
        self.zones.iter().find(|z| z.zone == id)
    }
}

fn percent(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        100.0
    } else {
        (100.0 * num / den).clamp(0.0, 100.0)
    }
}

fn ratio_percent(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        0.0
    } else {
        (100.0 * num / den).clamp(0.0, 100.0)
    }
}

/// Aggregates a run's trace.
pub fn summarize(run: &RestorationRun) -> MetricsSummary {
    let hours = run.step_min as f64 / 60.0;
    let mut zm: BTreeMap<ZoneId, ZoneMetrics> = run
        .zones
        .iter()
        .map(|&z| {
            (
                z,
                ZoneMetrics {
                    zone: z,
                    feeder: run.feeder_of[&z],
                    critical: run.critical.contains(&z),
                    demand_kwh: 0.0,
                    served_kwh: 0.0,
                    unserved_kwh: 0.0,
                    percent_served: 0.0,
                    unserved_hours: 0.0,
                },
            )
        })
        .collect();
    let mut pv: BTreeMap<Option<u32>, (f64, f64)> = BTreeMap::new();
    for s in &run.zone_steps {
        let m = zm.get_mut(&s.zone).expect("trace zone is known");
        m.demand_kwh += s.load_kw * hours;
        m.served_kwh += s.served_kw * hours;
        m.unserved_kwh += (s.load_kw - s.served_kw) * hours;
        if s.load_kw - s.served_kw > 1e-9 {
            m.unserved_hours += hours;
        }
        for key in [Some(m.feeder), None] {
            let e = pv.entry(key).or_insert((0.0, 0.0));
            e.0 += s.pv_available_kw * hours;
            e.1 += s.pv_used_kw * hours;
        }
    }
    for m in zm.values_mut() {
        m.percent_served = percent(m.served_kwh, m.demand_kwh);
    }
    let zones: Vec<ZoneMetrics> = zm.into_values().collect();
    let mut pv: Vec<PvMetrics> = pv
        .into_iter()
        .map(|(feeder, (a, u))| PvMetrics {
            feeder,
            available_kwh: a,
            used_kwh: u,
            utilization: ratio_percent(u, a),
        })
        .collect();
    if pv.is_empty() {
        pv.push(PvMetrics {
            feeder: None,
            available_kwh: 0.0,
            used_kwh: 0.0,
            utilization: 0.0,
        });
    }
    let resources = (0..run.microgrids)
        .map(|k| {
            let last = run.dispatch.iter().rev().find(|d| d.microgrid_id == k);
            let (soc0, fuel0) = run.initial_resources[k];
            ResourceMetrics {
                microgrid: k,
                initial_soc_kwh: soc0,
                final_soc_kwh: last.map_or(soc0, |d| d.soc_kwh),
                initial_fuel_kwh: fuel0,
                final_fuel_kwh: last.map_or(fuel0, |d| d.fuel_kwh),
            }
        })
        .collect();
    MetricsSummary {
        scenario: run.scenario.clone(),
        fingerprint: run.fingerprint.clone(),
        mode: run.mode.to_string(),
        seed: run.seed,
        total_demand_kwh: zones.iter().map(|z| z.demand_kwh).sum(),
        total_served_kwh: zones.iter().map(|z| z.served_kwh).sum(),
        critical_unserved_hours: zones.iter().filter(|z| z.critical).map(|z| z.unserved_hours).sum(),
        topology_change_count: diff_topologies(run).len(),
        formation_events: run.events.len(),
        zones,
        pv,
        resources,
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("runs come from different scenarios ({a} vs {b})")]
    ScenarioMismatch { a: String, b: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub item: String,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

/// Per-zone percent served plus totals; every delta is `b - a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mode_a: String,
    pub mode_b: String,
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARISON_TOTAL_ROWS: [&str; 4] = [
    "total_served_kwh",
    "pv_utilization_percent",
    "critical_percent_served_sum",
    "topology_changes",
];

pub fn compare(a: &MetricsSummary, b: &MetricsSummary) -> Result<Comparison, ReportError> {
    if a.fingerprint != b.fingerprint {
        return Err(ReportError::ScenarioMismatch {
            a: a.fingerprint.clone(),
            b: b.fingerprint.clone(),
        });
    }
    let row = |item: String, x: f64, y: f64| ComparisonRow {
        item,
        a: x,
        b: y,
        delta: y - x,
    };
    let mut rows = Vec::new();
    for za in &a.zones {
        let pb = b.zone(za.zone).map_or(0.0, |z| z.percent_served);
        rows.push(row(format!("zone_{}_percent_served", za.zone), za.percent_served, pb));
    }
    let totals = [
        (a.total_served_kwh, b.total_served_kwh),
        (a.pv_utilization(), b.pv_utilization()),
        (a.critical_percent_sum(), b.critical_percent_sum()),
        (a.topology_change_count as f64, b.topology_change_count as f64),
    ];
    for (name, (x, y)) in COMPARISON_TOTAL_ROWS.iter().zip(totals) {
        rows.push(row(name.to_string(), x, y));
    }
    Ok(Comparison {
        mode_a: a.mode.clone(),
        mode_b: b.mode.clone(),
        rows,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# a = {}, b = {}, delta = b - a\nitem,a,b,delta\n",
            self.mode_a, self.mode_b
        );
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", r.item, r.a, r.b, r.delta);
        }
        out
    }
}

fn opt(k: Option<usize>) -> String {
    k.map_or(String::new(), |k| (k + 1).to_string())
}

/// Per-zone trace, one row per zone per dispatch step. Microgrids are
/// numbered from 1; blank means unassigned.
pub fn trace_csv(run: &RestorationRun) -> String {
    let mut out = String::from("t_min,zone,microgrid,load_kw,served_kw,pv_available_kw,pv_used_kw,switching\n");
    for s in &run.zone_steps {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            s.t_min,
            s.zone,
            opt(s.microgrid),
            s.load_kw,
            s.served_kw,
            s.pv_available_kw,
            s.pv_used_kw,
            u8::from(s.switching)
        );
    }
    out
}

pub fn microgrid_trace_csv(run: &RestorationRun) -> String {
    let mut out = String::from("t_min,microgrid,served_kw,pv_used_kw,battery_kw,diesel_kw,soc_kwh,fuel_kwh\n");
    for d in &run.dispatch {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            d.t_min,
            d.microgrid_id + 1,
            d.served_total(),
            d.pv_used_total(),
            d.battery_kw,
            d.diesel_kw,
            d.soc_kwh,
            d.fuel_kwh
        );
    }
    out
}

pub fn topology_changes_csv(run: &RestorationRun) -> String {
    let mut out = String::from("t_min,zone,from,to\n");
    for c in diff_topologies(run) {
        let _ = writeln!(out, "{},{},{},{}", c.t_min, c.zone, opt(c.from), opt(c.to));
    }
    out
}

fn groups_text(run: &RestorationRun, a: &BTreeMap<ZoneId, Option<usize>>) -> String {
    (0..run.microgrids)
        .map(|k| {
            a.iter()
                .filter(|(_, &m)| m == Some(k))
                .map(|(z, _)| z.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join(" | ")
}

/// One row per formation event. Wall-clock times are left out so the file
/// is reproducible.
pub fn formation_log_csv(run: &RestorationRun) -> String {
    let mut out = String::from(
        "event,t_min,objective,load_shed_term,flow_term,switch_term,closed_edges,microgrids,nodes,lp_iterations\n",
    );
    for (i, e) in run.events.iter().enumerate() {
        let s = &e.solution;
        let closed: Vec<String> = s.closed_edges().iter().map(|e| e.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
            i,
            e.t_min,
            s.objective_value,
            s.load_shed_term,
            s.flow_term,
            s.switch_term,
            closed.join(" "),
            groups_text(run, &s.assignment),
            e.node_count,
            e.lp_iterations
        );
    }
    out
}

fn feeders(run: &RestorationRun) -> Vec<u32> {
    run.feeder_of
        .values()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Feeder load and available PV per step.
pub fn fig5_load_pv(run: &RestorationRun) -> String {
    let fs = feeders(run);
    let mut out = String::from("t_min");
    for f in &fs {
        let _ = write!(out, ",feeder{f}_load_kw,feeder{f}_pv_kw");
    }
    out.push('\n');
    let mut rows: BTreeMap<u32, BTreeMap<u32, (f64, f64)>> = BTreeMap::new();
    for s in &run.zone_steps {
        let e = rows
            .entry(s.t_min)
            .or_default()
            .entry(run.feeder_of[&s.zone])
            .or_insert((0.0, 0.0));
        e.0 += s.load_kw;
        e.1 += s.pv_available_kw;
    }
    for (t, per) in rows {
        let _ = write!(out, "{t}");
        for f in &fs {
            let (l, p) = per.get(f).copied().unwrap_or((0.0, 0.0));
            let _ = write!(out, ",{l:.6},{p:.6}");
        }
        out.push('\n');
    }
    out
}

/// Battery state of charge and remaining fuel per microgrid.
pub fn fig6_soc_fuel(run: &RestorationRun) -> String {
    let mut out = String::from("t_min,microgrid,soc_kwh,soc_percent,fuel_kwh\n");
    let cap: Vec<f64> = run
        .states
        .first()
        .map(|st| st.iter().map(|s| s.resource.battery_energy_kwh).collect())
        .unwrap_or_default();
    for d in &run.dispatch {
        let c = cap.get(d.microgrid_id).copied().unwrap_or(0.0);
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            d.t_min,
            d.microgrid_id + 1,
            d.soc_kwh,
            ratio_percent(d.soc_kwh, c),
            d.fuel_kwh
        );
    }
    out
}

/// Microgrid membership and service flag of every zone per step.
pub fn fig7_connectivity(run: &RestorationRun) -> String {
    let mut out = String::from("t_min");
    for z in &run.zones {
        let _ = write!(out, ",zone{z}_microgrid,zone{z}_served");
    }
    out.push('\n');
    let mut rows: BTreeMap<u32, BTreeMap<ZoneId, (Option<usize>, bool)>> = BTreeMap::new();
    for s in &run.zone_steps {
        let served = s.load_kw > 0.0 && s.served_kw >= s.load_kw - 1e-9;
        rows.entry(s.t_min).or_default().insert(s.zone, (s.microgrid, served));
    }
    for (t, per) in rows {
        let _ = write!(out, "{t}");
        for z in &run.zones {
            let (k, served) = per.get(z).copied().unwrap_or((None, false));
            let _ = write!(out, ",{},{}", opt(k), u8::from(served));
        }
        out.push('\n');
    }
    out
}

pub fn fig8_percent_served(summary: &MetricsSummary) -> String {
    let mut out = String::from("zone,critical,percent_served\n");
    for z in &summary.zones {
        let _ = writeln!(out, "{},{},{:.6}", z.zone, u8::from(z.critical), z.percent_served);
    }
    out
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<PathBuf, ReportError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes the run outputs into `dir` and returns the files written.
pub fn write_outputs(run: &RestorationRun, dir: &Path, emit_plots: bool) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.into(),
        source,
    })?;
    let summary = summarize(run);
    let mut written = vec![
        write_file(
            dir,
            "summary.json",
            &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
        )?,
        write_file(dir, "trace.csv", &trace_csv(run))?,
        write_file(dir, "microgrid_trace.csv", &microgrid_trace_csv(run))?,
        write_file(dir, "topology_changes.csv", &topology_changes_csv(run))?,
        write_file(dir, "formation_log.csv", &formation_log_csv(run))?,
    ];
    if emit_plots {
        written.push(write_file(dir, "fig5_load_pv.csv", &fig5_load_pv(run))?);
        written.push(write_file(dir, "fig6_soc_fuel.csv", &fig6_soc_fuel(run))?);
        written.push(write_file(dir, "fig7_connectivity.csv", &fig7_connectivity(run))?);
        written.push(write_file(
            dir,
            "fig8_percent_served.csv",
            &fig8_percent_served(&summary),
        )?);
    }
    Ok(written)
}

/// Reads `summary.json` from a run output directory.
pub fn read_summary(dir: &Path) -> Result<MetricsSummary, ReportError> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|source| ReportError::Io {
        path: path.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Parse {
        path,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_of_nothing() {
        assert_eq!(percent(0.0, 0.0), 100.0);
        assert_eq!(ratio_percent(0.0, 0.0), 0.0);
        assert_eq!(percent(5.0, 10.0), 50.0);
    }

    #[test]
    fn microgrids_print_from_one() {
        assert_eq!(opt(Some(0)), "1");
        assert_eq!(opt(None), "");
    }
}
