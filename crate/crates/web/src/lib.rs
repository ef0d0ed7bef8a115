//! Browser bindings for the two-feeder demo page in `www/`.
//!
//! Each exported function takes plain numbers, works on the built-in
//! fixture and returns a JSON string for the page to render.

use std::collections::BTreeSet;

use gridsplit_core::netmodel::EdgeId;
use gridsplit_core::report::{compare, summarize};
use gridsplit_core::solver::enumerate::enumerate_optimal;
use gridsplit_core::solver::SolverOptions;
use gridsplit_core::{fixture_two_feeder, run, solve_formation, FormationSnapshot, Mode, RunOptions, ZoneGraph};
use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;
use wasm_bindgen::JsValue;

fn snapshot(g: &ZoneGraph, load_scale: f64, pv_fraction: f64) -> Result<FormationSnapshot, String> {
    if !(load_scale.is_finite() && load_scale >= 0.0 && pv_fraction.is_finite() && pv_fraction >= 0.0) {
        return Err("scales must be finite and non-negative".into());
    }
    let sc = fixture_two_feeder();
    let load = g.nodes().iter().map(|n| n.peak_load_kw * load_scale).collect();
    let pv = (0..g.nodes().len())
        .map(|i| sc.pv.zone_series(i).fold(0.0, f64::max) * pv_fraction)
        .collect();
    Ok(FormationSnapshot::new(0, load, pv))
}

fn faulted(g: &ZoneGraph, faults: &str) -> Result<ZoneGraph, String> {
    let ids = faults
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<EdgeId>().map_err(|_| format!("bad switch id `{s}`")))
        .collect::<Result<BTreeSet<_>, _>>()?;
    g.with_faults(ids).map_err(|e| e.to_string())
}

/// Optimal microgrids for the fixture at a scaled load and PV level, with
/// the listed switches faulted open.
pub fn form_json(load_scale: f64, pv_fraction: f64, faults: &str) -> Result<String, String> {
    let sc = fixture_two_feeder();
    let g = faulted(&sc.graph, faults)?;
    let snap = snapshot(&g, load_scale, pv_fraction)?;
    let out = solve_formation(&g, &snap, &sc.weights, None, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let s = &out.solution;
    let doc = json!({
        "groups": s.groups(g.gfm_nodes().len()),
        "closed_edges": s.closed_edges(),
        "served_kw": s.served_load_kw,
        "injection_kw": s.gfm_injection_kw,
        "objective": s.objective_value,
        "nodes": out.report.node_count,
    });
    Ok(doc.to_string())
}

/// Same inputs as [`form_json`], solved by exhaustive enumeration and
/// checked against the MILP.
pub fn enumerate_json(load_scale: f64, pv_fraction: f64, faults: &str) -> Result<String, String> {
    let sc = fixture_two_feeder();
    let g = faulted(&sc.graph, faults)?;
    let snap = snapshot(&g, load_scale, pv_fraction)?;
    let oracle = enumerate_optimal(&g, &snap, &sc.weights, None).map_err(|e| e.to_string())?;
    let milp = solve_formation(&g, &snap, &sc.weights, None, &SolverOptions::default()).map_err(|e| e.to_string())?;
    let doc = json!({
        "candidates": oracle.candidates,
        "radial": oracle.radial_count,
        "feasible": oracle.feasible_count,
        "objective": oracle.objective,
        "milp_objective": milp.solution.objective_value,
        "groups": oracle.solution.groups(g.gfm_nodes().len()),
    });
    Ok(doc.to_string())
}

/// Runs the 48-hour fixture in both modes and returns the comparison rows.
pub fn restore_json() -> Result<String, String> {
    let sc = fixture_two_feeder();
    let opts = RunOptions::default();
    let fixed = run(&sc, Mode::Fixed, &opts).map_err(|e| e.to_string())?;
    let flexible = run(&sc, Mode::Flexible, &opts).map_err(|e| e.to_string())?;
    let c = compare(&summarize(&fixed), &summarize(&flexible)).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = c
        .rows
        .iter()
        .map(|r| json!({"item": r.item, "fixed": r.a, "flexible": r.b, "delta": r.delta}))
        .collect();
    Ok(Value::Array(rows).to_string())
}

#[wasm_bindgen]
pub fn form(load_scale: f64, pv_fraction: f64, faults: &str) -> Result<String, JsValue> {
    form_json(load_scale, pv_fraction, faults).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn enumerate(load_scale: f64, pv_fraction: f64, faults: &str) -> Result<String, JsValue> {
    enumerate_json(load_scale, pv_fraction, faults).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn restore() -> Result<String, JsValue> {
    restore_json().map_err(JsValue::from)
}
