use gridsplit_core::report::{compare, read_summary, summarize, write_outputs, ReportError, COMPARISON_TOTAL_ROWS};
use gridsplit_core::scenario::fixture_two_feeder;
use gridsplit_core::{run, Mode, RunOptions, Scenario};

fn starved() -> Scenario {
    let base = fixture_two_feeder();
    let mut file = base.to_file("load.csv", "pv.csv");
    for r in &mut file.network.resources {
        r.battery_soc0 = 0.0;
        r.diesel_fuel_kwh = 0.0;
    }
    let mut pv = base.pv.clone();
    pv.values.iter_mut().flatten().for_each(|v| *v = 0.0);
    Scenario::from_parts(file, base.load.clone(), pv).unwrap()
}

#[test]
fn summary_is_consistent_with_the_trace() {
    let sc = fixture_two_feeder();
    let r = run(&sc, Mode::Flexible, &RunOptions::default()).unwrap();
    let s = summarize(&r);
    assert_eq!(s.zones.len(), 10);
    for z in &s.zones {
        assert!((0.0..=100.0).contains(&z.percent_served));
        assert!(z.served_kwh <= z.demand_kwh + 1e-9);
        assert!((z.served_kwh + z.unserved_kwh - z.demand_kwh).abs() < 1e-3);
    }
    let total_served: f64 = s.zones.iter().map(|z| z.served_kwh).sum();
    assert!((total_served - s.total_served_kwh).abs() < 1e-6);
    let total = s.pv.iter().find(|p| p.feeder.is_none()).unwrap();
    let by_feeder: f64 = s.pv.iter().filter(|p| p.feeder.is_some()).map(|p| p.used_kwh).sum();
    assert!((total.used_kwh - by_feeder).abs() < 1e-6);
    assert!(total.utilization > 0.0 && total.utilization <= 100.0);
    assert_eq!(s.formation_events, 16);
    // pure function of the trace
    assert_eq!(
        serde_json::to_string(&s).unwrap(),
        serde_json::to_string(&summarize(&r)).unwrap()
    );
}

#[test]
fn nothing_to_serve_with() {
    let r = run(&starved(), Mode::Fixed, &RunOptions::default()).unwrap();
    let s = summarize(&r);
    assert!(s.zones.iter().all(|z| z.percent_served == 0.0));
    assert_eq!(s.pv_utilization(), 0.0);
    assert_eq!(s.total_served_kwh, 0.0);
}

#[test]
fn comparing_a_run_with_itself_gives_zero_deltas() {
    let sc = fixture_two_feeder();
    let r = run(&sc, Mode::Fixed, &RunOptions::default()).unwrap();
    let s = summarize(&r);
    let c = compare(&s, &s).unwrap();
    assert_eq!(c.rows.len(), 10 + COMPARISON_TOTAL_ROWS.len());
    assert!(c.rows.iter().all(|row| row.delta == 0.0));
    let csv = c.to_csv();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + c.rows.len());
}

#[test]
fn flexible_does_not_lower_critical_service_on_the_fixture() {
    let sc = fixture_two_feeder();
    let fixed = summarize(&run(&sc, Mode::Fixed, &RunOptions::default()).unwrap());
    let flex = summarize(&run(&sc, Mode::Flexible, &RunOptions::default()).unwrap());
    let c = compare(&fixed, &flex).unwrap();
    assert_eq!((c.mode_a.as_str(), c.mode_b.as_str()), ("fixed", "flexible"));
    let served = c.rows.iter().find(|r| r.item == "total_served_kwh").unwrap();
    assert!(served.delta >= 0.0);
    assert!(flex.critical_percent_sum() >= fixed.critical_percent_sum());
}

#[test]
fn different_scenarios_do_not_compare() {
    let a = summarize(&run(&fixture_two_feeder(), Mode::Fixed, &RunOptions::default()).unwrap());
    let b = summarize(&run(&starved(), Mode::Fixed, &RunOptions::default()).unwrap());
    assert!(matches!(compare(&a, &b), Err(ReportError::ScenarioMismatch { .. })));
}

#[test]
fn outputs_are_written_and_read_back() {
    let sc = fixture_two_feeder();
    let r = run(&sc, Mode::Flexible, &RunOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(&r, dir.path(), false).unwrap();
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into())
        .collect();
    assert_eq!(
        names,
        [
            "summary.json",
            "trace.csv",
            "microgrid_trace.csv",
            "topology_changes.csv",
            "formation_log.csv"
        ]
    );
    assert!(!dir.path().join("fig5_load_pv.csv").exists());
    let back = read_summary(dir.path()).unwrap();
    assert_eq!(back, summarize(&r));

    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 576 * 10);

    let plots = tempfile::tempdir().unwrap();
    let files = write_outputs(&r, plots.path(), true).unwrap();
    assert_eq!(files.len(), 9);
    let fig8 = std::fs::read_to_string(plots.path().join("fig8_percent_served.csv")).unwrap();
    assert_eq!(fig8.lines().count(), 11);
}
