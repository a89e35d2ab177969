use std::path::{Path, PathBuf};

use forge_runtime::train::{read_metrics, IterationMetrics, TrainConfig, TrainError, Trainer, CHECKPOINT_FILE, METRICS_FILE};

fn smoke() -> TrainConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let mut cfg = TrainConfig::load(&path).unwrap();
    cfg.iterations = 6;
    cfg.eval_every = 0;
    cfg.eval_episodes = 4;
    cfg.checkpoint_every = 3;
    cfg
}

/// Strips the fields that depend on wall-clock timing.
fn timeless(mut m: Vec<IterationMetrics>) -> Vec<IterationMetrics> {
    for x in &mut m {
        x.wall_ms = 0.0;
        x.lease_latency_ms = 0.0;
    }
    m
}

async fn train_to(cfg: TrainConfig, dir: &Path, stop: usize) -> Trainer {
    let mut t = Trainer::new(cfg, Some(dir.to_path_buf())).await.unwrap();
    while t.iteration() < stop {
        t.step().await.unwrap();
    }
    t
}

#[tokio::test(flavor = "multi_thread")]
async fn same_config_same_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ta = train_to(smoke(), a.path(), 4).await;
    let tb = train_to(smoke(), b.path(), 4).await;
    assert_eq!(ta.policy(), tb.policy());
    let ma = timeless(read_metrics(&a.path().join(METRICS_FILE)).unwrap());
    assert_eq!(ma, timeless(read_metrics(&b.path().join(METRICS_FILE)).unwrap()));
    assert_eq!(ma.len(), 4);
    assert!(ma.iter().all(|m| m.tasks.len() == 8 && m.tokens > 0));
    assert_eq!(ma.last().unwrap().policy_version, 4);
}

#[tokio::test(flavor = "multi_thread")]
async fn resume_continues_without_duplicate_iterations() {
    let straight = tempfile::tempdir().unwrap();
    let reference = train_to(smoke(), straight.path(), 6).await;

    // Crash after iteration 5: the last checkpoint covers three iterations.
    let dir = tempfile::tempdir().unwrap();
    drop(train_to(smoke(), dir.path(), 5).await);
    assert!(dir.path().join(CHECKPOINT_FILE).exists());
    assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap().len(), 5);

    let mut resumed = Trainer::resume(smoke(), dir.path().to_path_buf()).await.unwrap();
    assert_eq!(resumed.iteration(), 3);
    while resumed.iteration() < 6 {
        resumed.step().await.unwrap();
    }
    let ids: Vec<usize> = read_metrics(&dir.path().join(METRICS_FILE)).unwrap().iter().map(|m| m.iteration).collect();
    assert_eq!(ids, (0..6).collect::<Vec<_>>());
    assert_eq!(resumed.policy(), reference.policy(), "resuming is bit-identical to an uninterrupted run");
    assert_eq!(
        timeless(read_metrics(&dir.path().join(METRICS_FILE)).unwrap()),
        timeless(read_metrics(&straight.path().join(METRICS_FILE)).unwrap())
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn run_evaluates_before_and_after() {
    let mut cfg = smoke();
    cfg.iterations = 2;
    let mut t = Trainer::new(cfg, None).await.unwrap();
    let summary = t.run(None).await.unwrap();
    assert_eq!(summary.iterations, 2);
    let init = summary.initial_eval.unwrap();
    assert_eq!(init.policy_version, 0);
    assert_eq!(init.per_task.len(), 4);
    assert_eq!(summary.final_eval.policy_version, 2);
}

#[tokio::test]
async fn bad_configs_fail_before_any_work() {
    let mut cfg = smoke();
    cfg.learning_rate = 0.0;
    assert!(Trainer::new(cfg, None).await.err().unwrap().is_config());

    let mut cfg = smoke();
    cfg.tasks = vec!["no-such-task".into()];
    assert!(matches!(Trainer::new(cfg, None).await, Err(TrainError::Config(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.toml");
    std::fs::write(&path, "seed = 1\niterations = 1\nsuite = \"x.toml\"\ngroups_per_iteration = 1\nlearning_rate = 1.0\ntypo = 3\n").unwrap();
    assert!(TrainConfig::load(&path).is_err());
    std::fs::write(&path, "seed = 1\niterations = 1\nsuite = \"x.toml\"\ngroups_per_iteration = 1\nlearning_rate = 1.0\n").unwrap();
    assert_eq!(TrainConfig::load(&path).unwrap().suite, dir.path().join("x.toml"));
}
