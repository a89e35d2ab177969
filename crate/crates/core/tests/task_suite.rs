use std::sync::Arc;
use std::time::Instant;

use forge_core::env::solver::{execute_plan, solve};
use forge_core::env::{Environment, TaskSuite, ToyEnv};

const MAX_ENV_STEPS: usize = 50;

fn suite() -> TaskSuite {
    TaskSuite::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tasks.toml")).expect("shipped suite loads")
}

#[test]
fn shipped_suite_shape() {
    let s = suite();
    assert!(s.tasks().len() >= 20);
    let apps: std::collections::BTreeSet<_> = s.tasks().iter().map(|t| t.app.as_str()).collect();
    for app in ["contacts", "messaging", "files", "shop", "settings"] {
        assert!(apps.contains(app), "no task for {app}");
    }
}

#[test]
fn every_task_is_solvable_with_and_without_interrupts() {
    let s = suite();
    let noisy = Arc::new(s.with_interrupt_rate(0.3));
    for task in s.tasks() {
        let t0 = Instant::now();
        let sol = solve(&s, task, 12).unwrap_or_else(|| panic!("{} has no solution", task.task_id));
        eprintln!(
            "{}: {} actions, {} states, {:?}",
            task.task_id,
            sol.actions.len(),
            sol.states_explored,
            t0.elapsed()
        );
        let mut env = ToyEnv::new(Arc::new(s.clone()));
        let (_, verdict) = execute_plan(&mut env, &task.task_id, &sol.actions).unwrap();
        assert!(verdict.success, "{}: {}", task.task_id, verdict.detail);

        let mut env = ToyEnv::new(noisy.clone());
        let (executed, verdict) = execute_plan(&mut env, &task.task_id, &sol.actions).unwrap();
        assert!(verdict.success, "{} under interrupts: {}", task.task_id, verdict.detail);
        assert!(executed.len() <= MAX_ENV_STEPS);
        env.close().unwrap();
    }
}
