mod common;

use std::sync::Arc;
use std::time::Duration;

use forge_core::env::{Environment, ToyEnv};
use forge_core::trajectory::EnvStatus;
use forge_core::Action;
use forge_runtime::env_client::{EnvClient, EnvClientError, HttpEnvClient};
use forge_runtime::env_service::serve;
use forge_runtime::host::EnvHost;
use forge_runtime::protocol::codes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

async fn service() -> (forge_runtime::env_service::ServiceHandle, HttpEnvClient) {
    let host = Arc::new(EnvHost::new(common::suite(), common::clock(), "t"));
    let svc = serve("127.0.0.1:0", host).await.unwrap();
    let client = HttpEnvClient::new(svc.url(), reqwest::Client::builder().timeout(Duration::from_secs(5)).build().unwrap());
    (svc, client)
}

#[tokio::test]
async fn rest_and_direct_agree_on_random_scripts() {
    let (svc, remote) = service().await;
    let suite = common::suite();
    let ids = suite.task_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for script in 0..100 {
        let task = &ids[rng.random_range(0..ids.len())];
        let seed = rng.random_bool(0.5).then(|| rng.random::<u64>());
        let mut direct = ToyEnv::new(suite.clone());
        let mut obs = direct.reset(task, seed).unwrap();
        let opened = remote.reset(task, seed).await.unwrap();
        assert_eq!(opened.observation, obs, "script {script}: reset");
        let mut hashes = (vec![obs.hash().to_string()], vec![opened.observation.hash().to_string()]);
        for _ in 0..rng.random_range(1..30) {
            let action: Action = common::random_action(&obs, &mut rng);
            let local = direct.step(&action).unwrap();
            let wire = remote.step(&opened.session, &action).await.unwrap();
            assert_eq!((local.env_status, local.done), (wire.env_status, wire.done), "script {script}: {action:?}");
            hashes.0.push(local.observation.hash().to_string());
            hashes.1.push(wire.observation.hash().to_string());
            assert_eq!(local.observation, wire.observation);
            obs = local.observation;
            if local.done {
                break;
            }
        }
        assert_eq!(hashes.0, hashes.1);
        assert_eq!(direct.evaluate().unwrap(), remote.evaluate(&opened.session).await.unwrap());
        remote.close(&opened.session).await.unwrap();
    }
    svc.stop().await;
}

#[tokio::test]
async fn errors_carry_stable_codes() {
    let (svc, remote) = service().await;
    let code = |e: EnvClientError| e.code().to_string();
    assert_eq!(code(remote.reset("nope", None).await.unwrap_err()), codes::UNKNOWN_TASK);
    assert_eq!(code(remote.step("t-404", &Action::Wait).await.unwrap_err()), codes::UNKNOWN_SESSION);

    let s = remote.reset("settings-dark-mode", None).await.unwrap().session;
    let out = remote.step(&s, &Action::terminate_success()).await.unwrap();
    assert!(out.done);
    assert_eq!(out.env_status, EnvStatus::Ok);
    assert_eq!(code(remote.step(&s, &Action::Wait).await.unwrap_err()), codes::EPISODE_FINISHED);
    assert!(!remote.evaluate(&s).await.unwrap().success);
    remote.close(&s).await.unwrap();
    assert_eq!(code(remote.observation(&s).await.unwrap_err()), codes::UNKNOWN_SESSION);
    assert_eq!(remote.health().await.unwrap().active_episodes, 0);

    svc.stop().await;
    assert!(remote.health().await.unwrap_err().is_fault());
}
