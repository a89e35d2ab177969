use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use forge_core::env::TaskSuite;
use forge_core::policy::ToyPolicy;
use forge_runtime::clock::SystemClock;
use forge_runtime::env_service::{serve, serve_router};
use forge_runtime::host::EnvHost;
use forge_runtime::policy_client::LocalPolicy;
use forge_runtime::policy_service;

use crate::{until_interrupted, Classify, Failure};

pub const DEFAULT_SUITE: &str = "configs/tasks.toml";

pub fn load_suite(path: &PathBuf, interrupt_rate: Option<f64>) -> Result<Arc<TaskSuite>, Failure> {
    let suite = TaskSuite::load(path)
        .with_context(|| format!("loading task suite {}", path.display()))
        .config()?;
    Ok(Arc::new(match interrupt_rate {
        Some(r) if (0.0..=1.0).contains(&r) => suite.with_interrupt_rate(r),
        Some(r) => return Err(Failure::Config(anyhow::anyhow!("interrupt rate {r} is outside [0, 1]"))),
        None => suite,
    }))
}

#[derive(Args)]
pub struct ServeEnvArgs {
    #[arg(long, default_value = DEFAULT_SUITE)]
    suite: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8700")]
    bind: String,
    /// Close sessions idle for this long.
    #[arg(long, default_value_t = 600.0)]
    session_ttl_s: f64,
    /// Overrides every task's interrupt rate.
    #[arg(long)]
    interrupt_rate: Option<f64>,
}

pub async fn serve_env(a: ServeEnvArgs) -> Result<(), Failure> {
    let suite = load_suite(&a.suite, a.interrupt_rate)?;
    if !(a.session_ttl_s > 0.0) {
        return Err(Failure::Config(anyhow::anyhow!("--session-ttl-s must be positive")));
    }
    let host = EnvHost::new(suite, SystemClock::shared(), "s").with_ttl(Duration::from_secs_f64(a.session_ttl_s));
    let svc = serve(&a.bind, Arc::new(host)).await.with_context(|| format!("binding {}", a.bind)).runtime()?;
    println!("environment service on {}", svc.url());
    until_interrupted().await;
    svc.stop().await;
    Ok(())
}

#[derive(Args)]
pub struct ServePolicyArgs {
    /// Policy checkpoint (`policy.json` from training); a fresh policy when absent.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, default_value_t = forge_core::policy::toy::DEFAULT_FEATURE_DIM)]
    feature_dim: usize,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long, default_value = "127.0.0.1:8800")]
    bind: String,
}

pub fn load_policy(path: Option<&PathBuf>, dim: usize, temperature: Option<f64>) -> Result<ToyPolicy, Failure> {
    let mut p = match path {
        Some(p) => ToyPolicy::load(p).with_context(|| format!("loading policy {}", p.display())).config()?,
        None => ToyPolicy::new(dim, 1.0),
    };
    if let Some(t) = temperature {
        if !(t >= 0.0) {
            return Err(Failure::Config(anyhow::anyhow!("temperature must be non-negative")));
        }
        p.temperature = t;
    }
    Ok(p)
}

pub async fn serve_policy(a: ServePolicyArgs) -> Result<(), Failure> {
    let policy = load_policy(a.policy.as_ref(), a.feature_dim, a.temperature)?;
    let local = Arc::new(LocalPolicy::new(Arc::new(policy)));
    let svc = serve_router(&a.bind, policy_service::router(local))
        .await
        .with_context(|| format!("binding {}", a.bind))
        .runtime()?;
    println!("policy service on {}", svc.url());
    until_interrupted().await;
    svc.stop().await;
    Ok(())
}
