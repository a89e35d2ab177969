use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::Args;
use forge_runtime::clock::SystemClock;
use forge_runtime::env_client::{Connector, HttpConnector};
use forge_runtime::env_service::{serve, serve_router, ServiceHandle};
use forge_runtime::host::EnvHost;
use forge_runtime::manager::{self, HttpManagerClient, LoggedEvent, ManagerConfig, ManagerHandle};
use forge_runtime::policy_client::HttpPolicyClient;
use forge_runtime::rollout::{BatchSink, RolloutConfig, RolloutWorker, TrajectorySink};
use serde::Deserialize;

use crate::serve::{load_suite, DEFAULT_SUITE};
use crate::{until_interrupted, Classify, Failure};

/// Pool file for `forge manager`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolFile {
    /// Already-running environment services.
    #[serde(default)]
    endpoints: Vec<String>,
    #[serde(default)]
    manager: ManagerConfig,
    /// Environment services started by the manager process itself.
    #[serde(default)]
    local: Option<LocalInstances>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocalInstances {
    instances: usize,
    /// Relative to the pool file.
    #[serde(default)]
    suite: Option<PathBuf>,
    #[serde(default)]
    interrupt_rate: Option<f64>,
}

#[derive(Args)]
pub struct ManagerArgs {
    #[arg(long)]
    pool_config: PathBuf,
    #[arg(long)]
    standby_floor: Option<usize>,
    #[arg(long)]
    sweep_period_s: Option<f64>,
    #[arg(long, default_value = "127.0.0.1:8900")]
    bind: String,
    /// Write the event log here on shutdown.
    #[arg(long)]
    event_log: Option<PathBuf>,
    /// Rebuild pool state from an event log instead of registering afresh.
    #[arg(long)]
    recover_from: Option<PathBuf>,
}

fn read_events(path: &Path) -> anyhow::Result<Vec<LoggedEvent>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?);
        }
    }
    Ok(out)
}

pub async fn manager(a: ManagerArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.pool_config)
        .with_context(|| format!("reading {}", a.pool_config.display()))
        .config()?;
    let mut file: PoolFile = toml::from_str(&text)
        .with_context(|| format!("parsing {}", a.pool_config.display()))
        .config()?;
    if let Some(n) = a.standby_floor {
        file.manager.standby_floor = Some(n);
    }
    if let Some(s) = a.sweep_period_s {
        file.manager.sweep_period_s = s;
    }
    file.manager.validate().map_err(|e| anyhow!(e)).config()?;

    let mut services: Vec<ServiceHandle> = Vec::new();
    let mut endpoints = file.endpoints.clone();
    if let Some(local) = &file.local {
        let base = a.pool_config.parent().unwrap_or(Path::new("."));
        let suite_path = local.suite.as_ref().map(|p| base.join(p)).unwrap_or_else(|| PathBuf::from(DEFAULT_SUITE));
        let suite = load_suite(&suite_path, local.interrupt_rate)?;
        for i in 0..local.instances {
            let host = EnvHost::new(suite.clone(), SystemClock::shared(), format!("e{i}"));
            let svc = serve("127.0.0.1:0", Arc::new(host)).await.runtime()?;
            endpoints.push(svc.url());
            services.push(svc);
        }
    }
    if endpoints.is_empty() && a.recover_from.is_none() {
        return Err(Failure::Config(anyhow!("the pool file lists no endpoints and no local instances")));
    }

    let connector: Arc<dyn Connector> = Arc::new(HttpConnector::default());
    let handle = match &a.recover_from {
        Some(path) => {
            let log = read_events(path).with_context(|| format!("reading {}", path.display())).config()?;
            ManagerHandle::recover(file.manager.clone(), connector, SystemClock::shared(), log)
                .map_err(|e| anyhow!("{e}"))
                .config()?
        }
        None => ManagerHandle::spawn(file.manager.clone(), connector, SystemClock::shared()),
    };
    for e in &endpoints {
        match handle.register(e.clone()).await {
            Ok(id) => log::info!("registered {e} as instance {id}"),
            Err(err) => log::warn!("cannot register {e}: {err}"),
        }
    }
    let sweeper = handle.spawn_sweeper(file.manager.sweep_period());
    let svc = serve_router(&a.bind, manager::server::router(handle.clone()))
        .await
        .with_context(|| format!("binding {}", a.bind))
        .runtime()?;
    let counts = handle.pool().await.runtime()?.counts;
    println!(
        "manager on {} ({} active, {} standby)",
        svc.url(),
        counts.active(),
        counts.standby
    );
    until_interrupted().await;

    sweeper.abort();
    svc.stop().await;
    if let Some(path) = &a.event_log {
        let events = handle.events(0).await.runtime()?;
        let mut w = BufWriter::new(File::create(path).runtime()?);
        for e in &events {
            serde_json::to_writer(&mut w, e).runtime()?;
            w.write_all(b"\n").runtime()?;
        }
        w.flush().runtime()?;
    }
    for s in services {
        s.stop().await;
    }
    Ok(())
}

#[derive(Args)]
pub struct RolloutArgs {
    /// Task ids, one per line (`#` starts a comment).
    #[arg(long)]
    tasks: PathBuf,
    /// Manager base URL.
    #[arg(long)]
    pool: String,
    /// Policy server URLs; repeat or separate with commas.
    #[arg(long, value_delimiter = ',', required = true)]
    policy: Vec<String>,
    #[arg(long, default_value = DEFAULT_SUITE)]
    suite: PathBuf,
    #[arg(long)]
    max_env_steps: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    image_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trajectory sink (JSON lines); stdout summary only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    timeout_s: f64,
}

fn read_task_list(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let tasks: Vec<String> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or_default().trim())
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if tasks.is_empty() {
        return Err(anyhow!("no task ids in {}", path.display()));
    }
    Ok(tasks)
}

pub async fn rollout(a: RolloutArgs) -> Result<(), Failure> {
    let suite = load_suite(&a.suite, None)?;
    let tasks = read_task_list(&a.tasks).config()?;
    let defaults = RolloutConfig::default();
    let cfg = RolloutConfig {
        max_env_steps: a.max_env_steps.unwrap_or(defaults.max_env_steps),
        group_size: a.group_size.unwrap_or(defaults.group_size),
        image_scale: a.image_scale.unwrap_or(defaults.image_scale),
        ..defaults
    };
    let timeout = Duration::from_secs_f64(a.timeout_s.max(0.001));
    let leases = Arc::new(HttpManagerClient::new(a.pool.clone(), timeout * 10));
    let policy = Arc::new(HttpPolicyClient::new(a.policy.clone(), timeout, a.policy.len()));
    let worker = RolloutWorker::new(suite, leases, Arc::new(HttpConnector::new(timeout)), policy, cfg).config()?;

    let mut sink = BatchSink::new(None);
    if let Some(path) = &a.out {
        let f = File::create(path).with_context(|| format!("creating {}", path.display())).runtime()?;
        sink = sink.with_writer(Box::new(BufWriter::new(f)));
    }
    let sink: Arc<dyn TrajectorySink> = Arc::new(sink);
    let runs = worker.run_batch(&tasks, a.seed, Some(sink.clone())).await;
    drop(sink);
    let mut failed = 0;
    for (task, run) in tasks.iter().zip(runs) {
        match run {
            Ok(r) => {
                let wins = r.group.members.iter().filter(|m| m.success).count();
                let mean = r.group.members.iter().map(|m| m.reward).sum::<f64>() / r.group.members.len() as f64;
                println!(
                    "{task}: {wins}/{} succeeded, mean reward {mean:.3}, {} env steps, {} restarts",
                    r.group.members.len(),
                    r.env_steps,
                    r.restarts
                );
            }
            Err(e) => {
                failed += 1;
                println!("{task}: failed: {e}");
            }
        }
    }
    if failed == tasks.len() {
        return Err(Failure::Runtime(anyhow!("every group failed")));
    }
    Ok(())
}
