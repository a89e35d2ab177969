use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use forge_core::grounding::{evaluate_grounding, GroundingGold, GroundingPrediction};
use serde::de::DeserializeOwned;

use crate::{Classify, Failure};

#[derive(Args)]
pub struct GroundEvalArgs {
    /// Predictions, one JSON object per line.
    #[arg(long)]
    pred: PathBuf,
    /// Gold boxes, one JSON object per line.
    #[arg(long)]
    gold: PathBuf,
    /// Remap refined points through the zoom-in window.
    #[arg(long)]
    zoom: bool,
    /// Also write the report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn ground_eval(a: GroundEvalArgs) -> Result<(), Failure> {
    let gold: Vec<GroundingGold> = read_jsonl(&a.gold).config()?;
    let preds: Vec<GroundingPrediction> = read_jsonl(&a.pred).config()?;
    let report = evaluate_grounding(&gold, &preds, a.zoom);

    println!("{:<24} {:>7} {:>7} {:>9} {:>9}", "category", "total", "hits", "format", "accuracy");
    for row in &report {
        println!(
            "{:<24} {:>7} {:>7} {:>9} {:>8.1}%",
            row.category,
            row.total,
            row.hits,
            row.format_ok,
            100.0 * row.accuracy()
        );
    }
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_path(path).runtime()?;
        w.write_record(["category", "total", "hits", "format_ok", "accuracy"]).runtime()?;
        for row in &report {
            w.write_record([
                row.category.clone(),
                row.total.to_string(),
                row.hits.to_string(),
                row.format_ok.to_string(),
                format!("{:.6}", row.accuracy()),
            ])
            .runtime()?;
        }
        w.flush().runtime()?;
    }
    Ok(())
}
