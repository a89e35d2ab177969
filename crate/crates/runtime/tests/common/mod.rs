#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use forge_core::env::TaskSuite;
use forge_runtime::clock::{SharedClock, SystemClock};
use forge_runtime::env_client::Connector;
use forge_runtime::manager::{ManagerConfig, ManagerHandle};
use forge_runtime::sim::{FaultConfig, SimFarm};

pub fn suite() -> Arc<TaskSuite> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/tasks.toml");
    Arc::new(TaskSuite::load(path).expect("shipped task suite loads"))
}

pub fn clock() -> SharedClock {
    SystemClock::shared()
}

/// A farm of `n` instances registered with a fresh manager.
pub async fn pool(n: usize, latency: Duration, fault: FaultConfig, cfg: ManagerConfig) -> (Arc<SimFarm>, ManagerHandle) {
    let clock = clock();
    let farm = Arc::new(SimFarm::new(suite(), n, latency, fault, clock.clone()));
    let manager = ManagerHandle::spawn(cfg, farm.clone() as Arc<dyn Connector>, clock);
    for e in farm.endpoints() {
        manager.register(e).await.expect("simulated endpoint registers");
    }
    (farm, manager)
}

/// A random next action that mostly hits widgets on the current screen.
pub fn random_action(obs: &forge_core::Observation, rng: &mut impl rand::Rng) -> forge_core::Action {
    use forge_core::action::{Action, Point, SwipeDirection, SystemButton};
    let roll = rng.random_range(0..100);
    let widget = (!obs.layout.is_empty()).then(|| obs.layout[rng.random_range(0..obs.layout.len())].bbox.center());
    match (roll, widget) {
        (0..=54, Some(p)) => Action::Click { point: p },
        (55..=59, Some(p)) => Action::LongPress { point: p },
        (60..=64, _) => Action::Click {
            point: Point {
                x: rng.random_range(0..obs.width()),
                y: rng.random_range(0..obs.height()),
            },
        },
        (65..=72, _) => Action::type_text(["Running late", "555-0199", "Frank Moss", "x"][rng.random_range(0..4)]),
        (73..=78, _) => Action::Swipe {
            direction: [SwipeDirection::Up, SwipeDirection::Down][rng.random_range(0..2)],
            point: None,
        },
        (79..=86, _) => Action::SystemButton {
            button: [SystemButton::Back, SystemButton::Home, SystemButton::Enter][rng.random_range(0..3)],
        },
        (87..=90, _) => Action::AskUser { text: "What is the phone?".into() },
        (91..=94, _) => Action::McpCall {
            tool: "directory.lookup".into(),
            args: [("name".to_string(), serde_json::Value::from("Eve Park"))].into(),
        },
        (95..=97, _) => Action::Wait,
        _ => Action::terminate_success(),
    }
}
