//! Metrics rendering. Charts carry no text (the bitmap backend is built
//! without fonts); the CSV holds the plotted numbers.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;
use forge_runtime::train::{read_metrics, IterationMetrics};
use plotters::prelude::*;

use crate::{Classify, Failure};

#[derive(Args)]
pub struct PlotArgs {
    /// `metrics.jsonl` written by `forge train`.
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Moving-average window for the reward curve.
    #[arg(long, default_value_t = 50)]
    window: usize,
    /// CSV with `pool_size,steps_per_s` rows; adds a throughput chart.
    #[arg(long)]
    throughput: Option<PathBuf>,
}

const SIZE: (u32, u32) = (960, 540);

pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= w {
            sum -= xs[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

fn write_csv(path: &Path, rows: &[IterationMetrics], ma: &[f64]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iteration",
        "mean_reward",
        "reward_ma",
        "success_rate",
        "eval_success",
        "clip_fraction",
        "replay_rate",
        "frontier",
        "exploration",
        "near_mastery",
        "exploitation",
        "lease_latency_ms",
        "env_steps",
        "wall_ms",
    ])?;
    for (m, avg) in rows.iter().zip(ma) {
        let mix = m.stratum_mix.map(|x| format!("{x:.6}"));
        w.write_record([
            m.iteration.to_string(),
            format!("{:.6}", m.mean_reward),
            format!("{avg:.6}"),
            format!("{:.6}", m.success_rate),
            m.eval_success.map(|e| format!("{e:.6}")).unwrap_or_default(),
            format!("{:.6}", m.clip_fraction),
            format!("{:.6}", m.replay_rate),
            mix[0].clone(),
            mix[1].clone(),
            mix[2].clone(),
            mix[3].clone(),
            format!("{:.3}", m.lease_latency_ms),
            m.env_steps.to_string(),
            format!("{:.3}", m.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

type Chart<'a> = ChartContext<'a, BitMapBackend<'a>, Cartesian2d<plotters::coord::types::RangedCoordf64, plotters::coord::types::RangedCoordf64>>;

/// Unlabelled grid: ten divisions per axis.
fn grid(chart: &mut Chart<'_>) -> anyhow::Result<()> {
    chart
        .configure_mesh()
        .x_labels(10)
        .y_labels(10)
        .x_label_formatter(&|_| String::new())
        .y_label_formatter(&|_| String::new())
        .light_line_style(WHITE)
        .bold_line_style(RGBColor(225, 225, 225))
        .draw()
        .map_err(|e| anyhow!("{e}"))
}

fn line_chart(path: &Path, series: &[(Vec<(f64, f64)>, RGBColor)], y: std::ops::Range<f64>) -> anyhow::Result<()> {
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let x_max = series.iter().flat_map(|(s, _)| s.iter().map(|p| p.0)).fold(1.0, f64::max);
    let x_min = series.iter().flat_map(|(s, _)| s.iter().map(|p| p.0)).fold(x_max, f64::min);
    let mut chart = ChartBuilder::on(&root)
        .margin(24)
        .build_cartesian_2d(x_min..x_max.max(x_min + 1.0), y)
        .map_err(|e| anyhow!("{e}"))?;
    grid(&mut chart)?;
    for (points, color) in series {
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(|e| anyhow!("{e}"))?;
    }
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

fn throughput_chart(src: &Path, out: &Path) -> anyhow::Result<()> {
    let mut rdr = csv::Reader::from_path(src)?;
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let n: f64 = rec.get(0).context("pool_size column")?.trim().parse()?;
        let tput: f64 = rec.get(1).context("steps_per_s column")?.trim().parse()?;
        pts.push((n.log2(), tput));
    }
    if pts.is_empty() {
        return Err(anyhow!("no rows in {}", src.display()));
    }
    let top = pts.iter().map(|p| p.1).fold(0.0, f64::max) * 1.1;
    let root = BitMapBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let (lo, hi) = (pts[0].0.min(pts[pts.len() - 1].0), pts[0].0.max(pts[pts.len() - 1].0));
    let mut chart = ChartBuilder::on(&root)
        .margin(24)
        .build_cartesian_2d((lo - 0.5)..(hi + 0.5), 0.0..top.max(1.0))
        .map_err(|e| anyhow!("{e}"))?;
    grid(&mut chart)?;
    chart
        .draw_series(LineSeries::new(pts.iter().copied(), BLUE.stroke_width(2)))
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .draw_series(pts.iter().map(|p| Circle::new(*p, 5, BLUE.filled())))
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

pub fn plot(a: PlotArgs) -> Result<(), Failure> {
    let rows = read_metrics(&a.metrics)
        .with_context(|| format!("reading {}", a.metrics.display()))
        .config()?;
    if rows.is_empty() {
        return Err(Failure::Config(anyhow!("EmptyMetrics: {} has no iterations", a.metrics.display())));
    }
    std::fs::create_dir_all(&a.out_dir).runtime()?;
    let rewards: Vec<f64> = rows.iter().map(|m| m.mean_reward).collect();
    let ma = moving_average(&rewards, a.window);
    let csv_path = a.out_dir.join("metrics.csv");
    write_csv(&csv_path, &rows, &ma).runtime()?;

    let x = |i: usize| rows[i].iteration as f64;
    let raw: Vec<(f64, f64)> = rewards.iter().enumerate().map(|(i, r)| (x(i), *r)).collect();
    let avg: Vec<(f64, f64)> = ma.iter().enumerate().map(|(i, r)| (x(i), *r)).collect();
    let evals: Vec<(f64, f64)> = rows.iter().filter_map(|m| m.eval_success.map(|e| (m.iteration as f64, e))).collect();
    let lo = rewards.iter().copied().fold(0.0, f64::min);
    let reward_png = a.out_dir.join("reward.png");
    line_chart(
        &reward_png,
        &[(raw, RGBColor(180, 200, 230)), (avg, BLUE), (evals, RED)],
        lo..1.05,
    )
    .runtime()?;
    println!("wrote {} and {}", reward_png.display(), csv_path.display());

    if let Some(src) = &a.throughput {
        let out = a.out_dir.join("throughput.png");
        throughput_chart(src, &out).config()?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::moving_average;

    #[test]
    fn moving_average_uses_partial_windows_at_the_start() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(moving_average(&[], 5), Vec::<f64>::new());
    }
}
