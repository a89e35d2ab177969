use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::Args;
use forge_core::collab::{run_collaborative, CollabConfig, PlannerPolicy, SummaryGuidedPolicy};
use forge_core::env::{TaskSuite, ToyEnv};
use forge_core::policy::{GenerateRequest, GenerateResponse, Policy, PolicyError};
use forge_runtime::policy_client::{HttpPolicyClient, PolicyEndpoint};
use tokio::runtime::Handle;

use crate::serve::{load_policy, load_suite, DEFAULT_SUITE};
use crate::{Classify, Failure};

#[derive(Args)]
pub struct CollabArgs {
    #[arg(long)]
    task: String,
    /// `http://host:port`, `toy` (untrained toy policy), or a policy checkpoint file.
    #[arg(long)]
    local: String,
    /// Same forms as `--local`, plus the simulator-backed `planner` and
    /// `summary-guided` agents; omit to run on device only.
    #[arg(long)]
    cloud: Option<String>,
    #[arg(long, default_value_t = CollabConfig::default().cadence)]
    cadence: usize,
    #[arg(long, default_value_t = CollabConfig::default().max_steps)]
    max_steps: usize,
    /// Do not forward the monitor's error summary on handoff.
    #[arg(long)]
    no_error_summary: bool,
    #[arg(long, default_value = DEFAULT_SUITE)]
    suite: PathBuf,
    /// Write the trajectory memory here as JSON lines.
    #[arg(long)]
    memory_out: Option<PathBuf>,
}

/// Blocking adapter over the HTTP client; used from a blocking thread.
struct Remote {
    client: HttpPolicyClient,
    rt: Handle,
}

impl Policy for Remote {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, PolicyError> {
        self.rt.block_on(self.client.generate(req))
    }
}

fn policy_from(spec: &str, suite: &Arc<TaskSuite>, cloud: bool) -> Result<Box<dyn Policy>, Failure> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Box::new(Remote {
            client: HttpPolicyClient::new(vec![spec.to_string()], Duration::from_secs(30), 0),
            rt: Handle::current(),
        }));
    }
    Ok(match spec {
        "toy" => Box::new(load_policy(None, forge_core::policy::toy::DEFAULT_FEATURE_DIM, None)?),
        // the planners read history in the cloud dialect
        "planner" | "summary-guided" if !cloud => {
            return Err(Failure::Config(anyhow!("`{spec}` can only serve as the cloud agent")))
        }
        "planner" => Box::new(PlannerPolicy::new(suite.clone())),
        "summary-guided" => Box::new(SummaryGuidedPolicy {
            planner: PlannerPolicy::new(suite.clone()),
        }),
        path => Box::new(load_policy(Some(&PathBuf::from(path)), 0, None)?),
    })
}

pub async fn collab(a: CollabArgs) -> Result<(), Failure> {
    let suite = load_suite(&a.suite, None)?;
    let task = suite
        .task(&a.task)
        .cloned()
        .ok_or_else(|| anyhow!("unknown task `{}`", a.task))
        .config()?;
    if a.cadence == 0 || a.max_steps == 0 {
        return Err(Failure::Config(anyhow!("--cadence and --max-steps must be positive")));
    }
    let cfg = CollabConfig {
        cadence: a.cadence,
        max_steps: a.max_steps,
        forward_error_summary: !a.no_error_summary,
        ..CollabConfig::default()
    };
    let local = policy_from(&a.local, &suite, false)?;
    let cloud = a.cloud.as_deref().map(|c| policy_from(c, &suite, true)).transpose()?;

    let run_suite = suite.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let mut env = ToyEnv::new(run_suite);
        run_collaborative(&mut env, &task, local.as_ref(), cloud.as_deref(), &cfg)
    })
    .await
    .runtime()?
    .runtime()?;

    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    let s = &outcome.stats;
    println!(
        "{}: success={} local_steps={} cloud_steps={} switch_step={} privacy_blocks={} local_fraction={:.3}",
        a.task,
        outcome.verdict.success,
        s.steps_local,
        s.steps_cloud,
        s.switch_step.map_or("-".to_string(), |k| k.to_string()),
        s.privacy_blocks,
        s.local_fraction()
    );
    let leaks = outcome.leaks();
    if !leaks.is_empty() {
        return Err(Failure::Runtime(anyhow!("sensitive values reached the cloud: {leaks:?}")));
    }
    if let Some(path) = &a.memory_out {
        let f = File::create(path).with_context(|| format!("creating {}", path.display())).runtime()?;
        outcome.memory.write_jsonl(BufWriter::new(f)).runtime()?;
    }
    Ok(())
}
