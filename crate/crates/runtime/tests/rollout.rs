mod common;

use std::sync::Arc;
use std::time::Duration;

use forge_core::action::{Action, Point};
use forge_core::env::solver::solve;
use forge_core::env::TaskSuite;
use forge_core::policy::{Policy, ScriptedPolicy, ToyPolicy};
use forge_core::trajectory::EnvStatus;
use forge_runtime::clock::SystemClock;
use forge_runtime::env_client::Connector;
use forge_runtime::env_service::serve_router;
use forge_runtime::manager::{ManagerConfig, ManagerHandle};
use forge_runtime::policy_client::{HttpPolicyClient, LocalPolicy, PolicyEndpoint};
use forge_runtime::rollout::{BatchSink, RolloutConfig, RolloutError, RolloutWorker, TrajectorySink};
use forge_runtime::sim::{FaultConfig, SimFarm};
use forge_runtime::policy_service;

const TASK: &str = "contacts-favorite";

struct Rig {
    farm: Arc<SimFarm>,
    manager: ManagerHandle,
    suite: Arc<TaskSuite>,
}

async fn rig(n: usize, fault: FaultConfig) -> Rig {
    let suite = Arc::new(common::suite().with_interrupt_rate(0.0));
    let clock = SystemClock::shared();
    let farm = Arc::new(SimFarm::new(suite.clone(), n, Duration::ZERO, fault, clock.clone()));
    let cfg = ManagerConfig {
        standby_floor: Some(0),
        ..ManagerConfig::default()
    };
    let manager = ManagerHandle::spawn(cfg, farm.clone() as Arc<dyn Connector>, clock);
    for e in farm.endpoints() {
        manager.register(e).await.unwrap();
    }
    Rig { farm, manager, suite }
}

fn worker(r: &Rig, policy: Arc<dyn PolicyEndpoint>, cfg: RolloutConfig) -> RolloutWorker {
    RolloutWorker::new(r.suite.clone(), Arc::new(r.manager.clone()), r.farm.clone(), policy, cfg).unwrap()
}

fn local(p: impl Policy + 'static) -> Arc<dyn PolicyEndpoint> {
    Arc::new(LocalPolicy::new(Arc::new(p)))
}

fn solution(suite: &TaskSuite, task: &str) -> Vec<Action> {
    let mut actions = solve(suite, suite.task(task).unwrap(), 12).unwrap().actions;
    actions.push(Action::terminate_success());
    actions
}

fn cfg(group_size: usize, image_scale: f64) -> RolloutConfig {
    RolloutConfig {
        group_size,
        image_scale,
        max_env_steps: 15,
        ..RolloutConfig::default()
    }
}

#[tokio::test]
async fn scripted_group_succeeds_in_full() {
    let r = rig(8, FaultConfig::default()).await;
    let script = ScriptedPolicy::from_actions(&solution(&r.suite, TASK));
    let w = worker(&r, local(script), cfg(4, 1.0));
    let run = w.run_group(TASK, 7).await.unwrap();
    assert_eq!(run.group.members.len(), 4);
    assert!(run.group.members.iter().all(|m| m.success && m.reward == 1.0));
    assert_eq!(run.restarts, 0);
    assert!(run.group.members.iter().all(|m| m.trajectory.validate().is_ok()));
}

#[tokio::test]
async fn actions_are_mapped_back_to_full_resolution() {
    let r = rig(4, FaultConfig::default()).await;
    let full = solution(&r.suite, TASK);
    let halved: Vec<Action> = full
        .iter()
        .map(|a| a.map_points(|p| Point { x: p.x / 2, y: p.y / 2 }))
        .collect();
    let w = worker(&r, local(ScriptedPolicy::from_actions(&halved)), cfg(2, 0.5));
    let run = w.run_group(TASK, 1).await.unwrap();
    let m = &run.group.members[0];
    assert!(m.success);
    for (step, original) in m.trajectory.steps.iter().zip(&full) {
        for (p, q) in step.action.points().iter().zip(original.points()) {
            assert!(p.x.abs_diff(q.x) <= 1 && p.y.abs_diff(q.y) <= 1, "{p:?} vs {q:?}");
        }
    }
}

#[tokio::test]
async fn malformed_output_becomes_a_failed_wait() {
    let r = rig(2, FaultConfig::default()).await;
    let garbage = ScriptedPolicy {
        outputs: vec![],
        fallback: "I refuse to use the format".into(),
    };
    let w = worker(&r, local(garbage), cfg(2, 0.5));
    let run = w.run_group(TASK, 3).await.unwrap();
    for m in &run.group.members {
        assert_eq!(m.trajectory.len(), 15, "the loop continues to the budget");
        assert!(m.trajectory.steps.iter().all(|s| s.action == Action::Wait && s.env_status == EnvStatus::ActionFailed));
        assert!(!m.success);
    }
}

#[tokio::test]
async fn groups_replay_bit_identically() {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let r = rig(6, FaultConfig::default()).await;
        let w = worker(&r, local(ToyPolicy::new(256, 1.0)), cfg(6, 0.5));
        runs.push(w.run_group("settings-dark-mode", 99).await.unwrap().group);
    }
    assert_eq!(runs[0], runs[1]);
    let trajs: Vec<_> = runs[0].members.iter().map(|m| &m.trajectory).collect();
    assert!(trajs.iter().any(|t| t != &trajs[0]), "members draw different samples");
}

#[tokio::test]
async fn dead_environments_restart_members_on_backup_leases() {
    // Every doomed lease dies on its first step; crashed instances come back.
    let fault = FaultConfig {
        fail_prob: 0.5,
        max_steps_before_crash: 1,
        restart_after: Some(Duration::from_millis(10)),
        seed: 11,
    };
    let r = rig(64, fault).await;
    let _sweeper = r.manager.spawn_sweeper(Duration::from_millis(20));
    let script = ScriptedPolicy::from_actions(&solution(&r.suite, TASK));
    let w = worker(
        &r,
        local(script),
        RolloutConfig {
            backup_sessions: 40,
            ..cfg(16, 1.0)
        },
    );
    let run = w.run_group(TASK, 5).await.unwrap();
    assert_eq!(run.group.members.len(), 16);
    assert!(run.restarts > 0);
    assert!(run.group.members.iter().all(|m| m.success));
    assert!(!r.farm.crashes().is_empty());
}

#[tokio::test]
async fn a_mostly_dead_group_aborts_but_the_batch_survives() {
    let fault = FaultConfig {
        fail_prob: 1.0,
        max_steps_before_crash: 1,
        ..FaultConfig::default()
    };
    let r = rig(64, fault).await;
    let w = worker(
        &r,
        local(ScriptedPolicy::from_actions(&solution(&r.suite, TASK))),
        RolloutConfig {
            backup_sessions: 0,
            ..cfg(2, 1.0)
        },
    );
    let out = w.run_batch(&[TASK.to_string(), "no-such-task".into()], 0, None).await;
    assert!(matches!(out[0], Err(RolloutError::GroupAborted { faulted: 2, .. })), "{:?}", out[0]);
    assert!(matches!(out[1], Err(RolloutError::UnknownTask(_))));
}

#[tokio::test]
async fn empty_batches_take_no_leases() {
    let r = rig(2, FaultConfig::default()).await;
    let w = worker(&r, local(ToyPolicy::new(64, 1.0)), cfg(2, 0.5));
    assert!(w.run_batch(&[], 0, None).await.is_empty());
    assert_eq!(r.manager.metrics().await.unwrap().grants, 0);
}

#[tokio::test]
async fn the_sink_streams_groups_and_rejects_stale_versions() {
    let r = rig(8, FaultConfig::default()).await;
    let w = worker(&r, local(ToyPolicy::new(64, 1.0)), cfg(2, 0.5));
    let tasks: Vec<String> = ["settings-dark-mode", "files-star", "shop-add-to-cart"].map(String::from).to_vec();
    let sink = Arc::new(BatchSink::new(Some(0)));
    let out = w.run_batch(&tasks, 4, Some(sink.clone() as Arc<dyn TrajectorySink>)).await;
    assert!(out.iter().all(Result::is_ok));
    let mut order = sink.completion_order();
    order.sort();
    assert_eq!(order, vec![0, 1, 2]);

    let stale = Arc::new(BatchSink::new(Some(1)));
    let out = w.run_batch(&tasks[..1], 4, Some(stale as Arc<dyn TrajectorySink>)).await;
    assert!(matches!(out[0], Err(RolloutError::Sink(_))));
}

#[tokio::test]
async fn remote_policy_matches_local_and_fails_over() {
    let policy = Arc::new(LocalPolicy::new(Arc::new(ToyPolicy::new(128, 1.0))));
    let svc = serve_router("127.0.0.1:0", policy_service::router(policy.clone())).await.unwrap();
    let dead = "http://127.0.0.1:9".to_string();
    let remote = Arc::new(HttpPolicyClient::new(vec![dead, svc.url()], Duration::from_secs(5), 1));

    let r = rig(4, FaultConfig::default()).await;
    let via_http = worker(&r, remote, cfg(2, 0.5)).run_group("files-star", 8).await.unwrap();
    let in_process = worker(&r, policy, cfg(2, 0.5)).run_group("files-star", 8).await.unwrap();
    assert_eq!(via_http.group, in_process.group);
    svc.stop().await;
}
