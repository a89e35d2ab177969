use std::sync::Arc;

use forge_core::collab::scenarios::{run_scenario, scenario_suite};
use forge_core::env::TaskSuite;

fn suite() -> Arc<TaskSuite> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tasks.toml");
    Arc::new(TaskSuite::load(path).unwrap())
}

#[test]
fn scripted_scenarios_behave() {
    let suite = suite();
    let scenarios = scenario_suite(&suite);
    assert!(scenarios.len() >= 10);
    let mut failed = Vec::new();
    for sc in &scenarios {
        let r = run_scenario(&suite, sc);
        let s = &r.outcome.stats;
        println!(
            "{:<40} local={} cloud={} switch={:?} success={} blocks={} {:?}",
            r.name, s.steps_local, s.steps_cloud, s.switch_step, r.outcome.verdict.success, s.privacy_blocks, r.failures
        );
        if !r.failures.is_empty() {
            failed.push(r.name);
        }
    }
    assert!(failed.is_empty(), "failing scenarios: {failed:?}");
}

#[test]
fn deviation_flips_verdict_at_first_check_after_it() {
    let suite = suite();
    let sc = scenario_suite(&suite).into_iter().find(|s| s.name == "deviation-at-step-3").unwrap();
    assert_eq!(sc.local.outputs.len(), 7);
    let r = run_scenario(&suite, &sc);
    let flags: Vec<(usize, bool)> = r.outcome.checks.iter().map(|c| (c.after_step, c.monitor.aligned)).collect();
    assert_eq!(flags, vec![(3, true), (6, false)]);
}

#[test]
fn local_fraction_is_reported() {
    let suite = suite();
    let (mut local, mut total, mut on_device) = (0, 0, 0);
    let scenarios = scenario_suite(&suite);
    for sc in &scenarios {
        let s = run_scenario(&suite, sc).outcome.stats;
        local += s.steps_local;
        total += s.steps_local + s.steps_cloud;
        on_device += usize::from(s.on_device_completion);
    }
    println!("local steps {local}/{total}, on-device completions {on_device}/{}", scenarios.len());
    assert!(local > 0 && local < total);
}
