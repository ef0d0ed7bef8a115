//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gridsplit_core::coordinator::RestorationRun;
use gridsplit_core::formation::{build_milp, solve_formation, FormationError, FormationSnapshot};
use gridsplit_core::netmodel::LateralPolicy;
use gridsplit_core::report::{self, summarize};
use gridsplit_core::scenario::{fixture_two_feeder, Scenario};
use gridsplit_core::solver::enumerate::{enumerate_optimal, exchangeable_zones};
use gridsplit_core::solver::SolverOptions;
use gridsplit_core::{diff_topologies, fixed_topology_solution, run, Mode, RunOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn flexible_run(sc: &Scenario) -> RestorationRun {
    run(sc, Mode::Flexible, &RunOptions::default()).expect("flexible run")
}

fn oracle_equivalence() -> Verdict {
    let sc = fixture_two_feeder();
    let g = &sc.graph;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut worst_rel: f64 = 0.0;
    let mut slowest = Duration::ZERO;
    let fixed = fixed_topology_solution(g).map_err(|e| e.to_string())?;
    for i in 0..50 {
        let load: Vec<f64> = g
            .nodes()
            .iter()
            .map(|n| n.peak_load_kw * rng.random_range(0.0..1.4))
            .collect();
        let pv: Vec<f64> = g.nodes().iter().map(|_| rng.random_range(0.0..900.0)).collect();
        let mut snap = FormationSnapshot::new(i, load, pv);
        if rng.random_bool(0.5) {
            let caps = g
                .resources()
                .iter()
                .map(|r| r.rated_injection_kw() * rng.random_range(0.05..1.0))
                .collect();
            snap = snap.with_caps(caps);
        }
        let prev = rng.random_bool(0.5).then_some(&fixed);
        let t0 = Instant::now();
        let milp = solve_formation(g, &snap, &sc.weights, prev, &SolverOptions::default())
            .map_err(|e| format!("snapshot {i}: {e}"))?;
        let brute = enumerate_optimal(g, &snap, &sc.weights, prev).map_err(|e| format!("snapshot {i}: {e}"))?;
        slowest = slowest.max(t0.elapsed());
        let (a, b) = (milp.solution.objective_value, brute.objective);
        worst_rel = worst_rel.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
        if !rel_close(a, b, 1e-6) {
            return Err(format!("snapshot {i}: branch-and-bound {a} vs enumeration {b}"));
        }
    }
    if slowest >= Duration::from_secs(5) {
        return Err(format!("slowest snapshot pair took {slowest:?}"));
    }
    Ok(format!(
        "50 snapshots, worst relative gap {worst_rel:.1e}, slowest pair {slowest:.2?}"
    ))
}

fn radiality_and_count(flex: &RestorationRun, sc: &Scenario) -> Verdict {
    let expected = sc.graph.radial_edge_count();
    if flex.events.len() != 16 {
        return Err(format!("{} formation events, expected 16", flex.events.len()));
    }
    for ev in &flex.events {
        let g = sc.graph_at(ev.t_min);
        let closed = ev.solution.closed_edges();
        let census = g.is_radial_forest(&closed);
        if !census.radial {
            return Err(format!("minute {}: not radial ({:?})", ev.t_min, census.reason));
        }
        if closed.len() != expected || expected != 8 {
            return Err(format!(
                "minute {}: {} closed switches, expected 8",
                ev.t_min,
                closed.len()
            ));
        }
    }
    Ok(format!("{} solves radial with 8 closed switches", flex.events.len()))
}

fn mccormick_exactness(flex: &RestorationRun, sc: &Scenario) -> Verdict {
    let mut prev = fixed_topology_solution(&sc.graph).map_err(|e| e.to_string())?;
    let mut pairs = 0usize;
    for ev in &flex.events {
        let g = sc.graph_at(ev.t_min);
        let snap = ev.snapshot.as_ref().ok_or("flexible event without a snapshot")?;
        let out = solve_formation(&g, snap, &sc.weights, Some(&prev), &SolverOptions::default())
            .map_err(|e| format!("minute {}: {e}", ev.t_min))?;
        if out.solution.assignment != ev.solution.assignment {
            return Err(format!("minute {}: re-solve disagrees with the run", ev.t_min));
        }
        let v = &out.report.values;
        let bit = |id: gridsplit_core::solver::VarId| v[id.0].round();
        let vars = &out.problem.vars;
        for (e, zs) in g.edges().iter().zip(&vars.z) {
            let Some(zs) = zs else { continue };
            let xf = vars.x[g.node_index(e.from).unwrap()].as_ref().unwrap();
            let xt = vars.x[g.node_index(e.to).unwrap()].as_ref().unwrap();
            for k in 0..vars.microgrids {
                pairs += 1;
                if bit(zs[k]) != bit(xf[k]) * bit(xt[k]) {
                    return Err(format!("minute {}: edge {} microgrid {k}", ev.t_min, e.id));
                }
            }
        }
        if ev.mccormick_gap != 0.0 {
            return Err(format!("minute {}: recorded gap {}", ev.t_min, ev.mccormick_gap));
        }
        prev = ev.solution.clone();
    }
    Ok(format!("{pairs} edge/microgrid products exact"))
}

fn leaf_exchange_for(sc: &Scenario, label: &str) -> Verdict {
    let flexible_set = exchangeable_zones(&sc.graph).map_err(|e| e.to_string())?;
    let flex = flexible_run(sc);
    let moved: BTreeSet<_> = diff_topologies(&flex).iter().map(|c| c.zone).collect();
    if !moved.is_subset(&flexible_set) {
        return Err(format!(
            "{label}: moved {moved:?} outside flexible set {flexible_set:?}"
        ));
    }
    Ok(format!("{label}: moved {moved:?} within {flexible_set:?}"))
}

fn leaf_exchange() -> Verdict {
    let base = fixture_two_feeder();
    let leaves = base.graph.leaf_nodes();
    if exchangeable_zones(&base.graph).map_err(|e| e.to_string())? != leaves {
        return Err(format!("fixture flexible set differs from leaf nodes {leaves:?}"));
    }
    let a = leaf_exchange_for(&base, "interior n_min=2")?;
    let mut file = base.to_file("load.csv", "pv.csv");
    file.network.lateral_policies.push(LateralPolicy {
        gfm_node_id: 1,
        edge_id: 1,
        min_downstream_nodes: 0,
        force_zero: true,
    });
    let zeroed = Scenario::from_parts(file, base.load.clone(), base.pv.clone()).map_err(|e| e.to_string())?;
    let b = leaf_exchange_for(&zeroed, "plus force_zero on 1-2")?;
    Ok(format!("{a}; {b}"))
}

fn direction_of_benefit(flex: &RestorationRun, sc: &Scenario) -> Verdict {
    let fixed = run(sc, Mode::Fixed, &RunOptions::default()).map_err(|e| e.to_string())?;
    let (a, b) = (summarize(flex), summarize(&fixed));
    let served = a.total_served_kwh - b.total_served_kwh;
    let pv = a.pv_utilization() - b.pv_utilization();
    let crit = a.critical_percent_sum() - b.critical_percent_sum();
    let msg = format!("served {served:+.1} kWh, PV utilization {pv:+.3} pt, critical percent sum {crit:+.3}");
    if served >= 0.0 && pv >= 0.0 && crit >= 0.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn conservation(flex: &RestorationRun, sc: &Scenario) -> Verdict {
    let steps = sc.timeline.steps();
    let h = flex.step_min as f64 / 60.0;
    let mut worst_balance: f64 = 0.0;
    for k in 0..flex.microgrids {
        let res = &sc.graph.resources()[k];
        let mine: Vec<_> = flex.dispatch.iter().filter(|d| d.microgrid_id == k).collect();
        if mine.len() != steps {
            return Err(format!(
                "microgrid {k}: {} dispatch steps, expected {steps}",
                mine.len()
            ));
        }
        let (mut soc, mut fuel) = flex.initial_resources[k];
        for d in mine {
            let pv: f64 = d.pv_used_kw.values().sum();
            let served: f64 = d.served_kw.values().sum();
            let residual = (served - pv - d.battery_kw - d.diesel_kw).abs();
            worst_balance = worst_balance.max(residual);
            if residual > 1e-6 {
                return Err(format!(
                    "microgrid {k} minute {}: balance off by {residual:e} kW",
                    d.t_min
                ));
            }
            if d.soc_kwh < 0.0 || d.soc_kwh > res.battery_energy_kwh {
                return Err(format!("microgrid {k} minute {}: SoC {}", d.t_min, d.soc_kwh));
            }
            if d.fuel_kwh > fuel {
                return Err(format!("microgrid {k} minute {}: fuel rose", d.t_min));
            }
            for (z, &used) in &d.pv_used_kw {
                if used > d.pv_available_kw[z] + 1e-9 {
                    return Err(format!("zone {z} minute {}: PV used above available", d.t_min));
                }
            }
            let expected_soc = if d.battery_kw >= 0.0 {
                soc - d.battery_kw * h
            } else {
                soc - d.battery_kw * res.battery_efficiency * h
            };
            if (expected_soc - d.soc_kwh).abs() > 1e-6 || (fuel - d.diesel_kw * h - d.fuel_kwh).abs() > 1e-6 {
                return Err(format!("microgrid {k} minute {}: storage audit mismatch", d.t_min));
            }
            (soc, fuel) = (d.soc_kwh, d.fuel_kwh);
        }
    }
    let summary = summarize(flex);
    let mut worst_audit: f64 = 0.0;
    for zm in &summary.zones {
        let (mut demand, mut served) = (0.0, 0.0);
        for s in flex.zone_steps.iter().filter(|s| s.zone == zm.zone) {
            demand += s.load_kw * h;
            served += s.served_kw * h;
        }
        let col = sc.load.zone_ids.iter().position(|&z| z == zm.zone).unwrap();
        let truth: f64 = sc.load.zone_series(col).map(|kw| kw * h).sum();
        let gap = (demand - truth)
            .abs()
            .max((served - zm.served_kwh).abs())
            .max((zm.demand_kwh - zm.served_kwh - zm.unserved_kwh).abs())
            .max((zm.demand_kwh - truth).abs());
        worst_audit = worst_audit.max(gap);
        if gap > 1e-3 {
            return Err(format!("zone {}: energy audit off by {gap:e} kWh", zm.zone));
        }
    }
    Ok(format!(
        "worst balance {worst_balance:.1e} kW, worst zone audit {worst_audit:.1e} kWh over {steps} steps"
    ))
}

fn determinism(sc: &Scenario) -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut written = Vec::new();
    for d in &dirs {
        let r = run(sc, Mode::Flexible, &RunOptions::default()).map_err(|e| e.to_string())?;
        written.push(report::write_outputs(&r, d.path(), true).map_err(|e| e.to_string())?);
    }
    let mut files = 0;
    for (a, b) in written[0].iter().zip(&written[1]) {
        let (x, y) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        if x != y {
            return Err(format!(
                "{} differs between runs",
                a.file_name().unwrap().to_string_lossy()
            ));
        }
        files += 1;
    }
    Ok(format!("{files} output files byte-identical"))
}

fn runtime(sc: &Scenario) -> Verdict {
    let t0 = Instant::now();
    let r = flexible_run(sc);
    let took = t0.elapsed();
    let binaries = r.events.first().map(|_| {
        let snap = FormationSnapshot::peak(&sc.graph);
        build_milp(&sc.graph, &snap, &sc.weights, None)
            .map(|p| p.model.num_integers())
            .unwrap_or(0)
    });
    let msg = format!(
        "{} formation MILPs ({} binaries), {} dispatch steps in {took:.2?}",
        r.events.len(),
        binaries.unwrap_or(0),
        sc.timeline.steps()
    );
    if took < Duration::from_secs(60) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn lateral_infeasibility() -> Verdict {
    let g = fixture_two_feeder().graph;
    let g = g
        .with_policies(vec![LateralPolicy {
            gfm_node_id: 1,
            edge_id: 2,
            min_downstream_nodes: 5,
            force_zero: false,
        }])
        .map_err(|e| e.to_string())?;
    let w = fixture_two_feeder().weights;
    match build_milp(&g, &FormationSnapshot::peak(&g), &w, None) {
        Err(FormationError::InfeasibleTopology { edge, reason }) => Ok(format!("edge {edge}: {reason}")),
        Err(e) => Err(format!("wrong error: {e}")),
        Ok(_) => Err("model was built".into()),
    }
}

fn main() -> ExitCode {
    let sc = fixture_two_feeder();
    let flex = flexible_run(&sc);
    let results: Vec<(&str, Verdict)> = vec![
        ("1 oracle equivalence", oracle_equivalence()),
        ("2 radiality and count", radiality_and_count(&flex, &sc)),
        ("3 McCormick exactness", mccormick_exactness(&flex, &sc)),
        ("4 leaf exchange", leaf_exchange()),
        ("5 direction of benefit", direction_of_benefit(&flex, &sc)),
        ("6 conservation", conservation(&flex, &sc)),
        ("7 determinism", determinism(&sc)),
        ("8 runtime", runtime(&sc)),
        ("9 lateral infeasibility", lateral_infeasibility()),
    ];
    let mut failed = 0;
    for (name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
