use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use forge_runtime::train::{TrainConfig, TrainError, Trainer, CHECKPOINT_FILE};

use crate::{Classify, Failure};

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory for metrics, checkpoints and the final policy.
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    resume: bool,
    /// Stop after this many completed iterations (the schedule still uses the configured total).
    #[arg(long)]
    stop_at: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    max_env_steps: Option<usize>,
    #[arg(long)]
    groups_per_iteration: Option<usize>,
    /// Use a running manager instead of in-process simulated phones.
    #[arg(long)]
    manager_url: Option<String>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($flag:ident => $($field:ident).+) => {
                if let Some(v) = self.$flag.clone() {
                    cfg.$($field).+ = v;
                }
            };
        }
        set!(seed => seed);
        set!(iterations => iterations);
        set!(learning_rate => learning_rate);
        set!(group_size => rollout.group_size);
        set!(max_env_steps => rollout.max_env_steps);
        set!(groups_per_iteration => groups_per_iteration);
        if let Some(url) = &self.manager_url {
            cfg.pool.manager_url = Some(url.clone());
        }
    }
}

fn classify(e: TrainError) -> Failure {
    if e.is_config() {
        Failure::Config(e.into())
    } else {
        Failure::Runtime(e.into())
    }
}

pub async fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = TrainConfig::load(&a.config).config()?;
    a.apply(&mut cfg);
    cfg.validate().config()?;

    let mut trainer = if a.resume {
        if !a.out.join(CHECKPOINT_FILE).exists() {
            return Err(Failure::Config(anyhow!("no checkpoint in {}", a.out.display())));
        }
        Trainer::resume(cfg, a.out.clone()).await.map_err(classify)?
    } else {
        Trainer::new(cfg, Some(a.out.clone())).await.map_err(classify)?
    };
    let start = trainer.iteration();
    let summary = trainer.run(a.stop_at).await.map_err(classify)?;
    if let Some(init) = &summary.initial_eval {
        println!("initial success rate {:.3}", init.success_rate);
    }
    println!(
        "iterations {}..{}: final success rate {:.3} (policy version {})",
        start, summary.iterations, summary.final_eval.success_rate, summary.final_eval.policy_version
    );
    for (task, sr) in &summary.final_eval.per_task {
        println!("  {task:<28} {sr:.3}");
    }
    let report = serde_json::to_vec_pretty(&summary).runtime()?;
    std::fs::write(a.out.join("summary.json"), report).runtime()?;
    Ok(())
}
