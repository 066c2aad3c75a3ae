//! Training-curve plots: frames on the x axis, mean episode-4 return on the
//! y axis, one curve per run directory with a min–max band across seeds.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use plotters::prelude::*;

use crate::metrics;

const GRID_POINTS: usize = 256;

struct RunSeries {
    label: String,
    /// Per seed: (frames, episode-4 return) in iteration order.
    seeds: Vec<Vec<(f64, f64)>>,
}

fn load_run(dir: &Path) -> Result<RunSeries> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read run directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().is_some_and(|n| {
                let n = n.to_string_lossy();
                n.starts_with("metrics") && n.ends_with(".jsonl")
            })
        })
        .collect();
    files.sort();
    let mut seeds = Vec::new();
    for f in &files {
        let recs = metrics::read_all(f)?;
        if !recs.is_empty() {
            seeds.push(
                recs.iter()
                    .map(|r| (r.frames as f64, r.episode_returns[3]))
                    .collect(),
            );
        }
    }
    if seeds.is_empty() {
        bail!("no metrics records found in {}", dir.display());
    }
    let label = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(RunSeries { label, seeds })
}

/// Piecewise-linear resampling onto `grid`, clamped at the ends.
fn resample(series: &[(f64, f64)], grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .map(|&x| {
            if x <= series[0].0 {
                return series[0].1;
            }
            match series.windows(2).find(|w| w[0].0 <= x && x <= w[1].0) {
                Some(w) => {
                    let (x0, y0) = w[0];
                    let (x1, y1) = w[1];
                    if x1 > x0 {
                        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
                    } else {
                        y0
                    }
                }
                None => series.last().unwrap().1,
            }
        })
        .collect()
}

pub fn plot_runs(run_dirs: &[PathBuf], out: &Path) -> Result<()> {
    if run_dirs.is_empty() {
        bail!("no run directories given");
    }
    let runs: Vec<RunSeries> = run_dirs
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<_>>()?;

    let x_max = runs
        .iter()
        .flat_map(|r| r.seeds.iter())
        .filter_map(|s| s.last())
        .map(|p| p.0)
        .fold(1.0f64, f64::max);
    let (mut y_lo, mut y_hi) = (0.0f64, 1.0f64);
    for r in &runs {
        for s in &r.seeds {
            for &(_, y) in s {
                y_lo = y_lo.min(y);
                y_hi = y_hi.max(y);
            }
        }
    }
    let pad = 0.05 * (y_hi - y_lo);

    let root = SVGBackend::new(out, (900, 540)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(52)
        .build_cartesian_2d(0.0..x_max, (y_lo - pad)..(y_hi + pad))?;
    chart
        .configure_mesh()
        .x_desc("frames")
        .y_desc("mean return, episode 4")
        .draw()?;

    for (i, run) in runs.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        // common support across this run's seeds
        let run_max = run
            .seeds
            .iter()
            .filter_map(|s| s.last())
            .map(|p| p.0)
            .fold(f64::INFINITY, f64::min);
        let grid: Vec<f64> = (0..GRID_POINTS)
            .map(|k| run_max * k as f64 / (GRID_POINTS - 1) as f64)
            .collect();
        let sampled: Vec<Vec<f64>> = run.seeds.iter().map(|s| resample(s, &grid)).collect();
        let mean: Vec<(f64, f64)> = grid
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                (
                    x,
                    sampled.iter().map(|s| s[k]).sum::<f64>() / sampled.len() as f64,
                )
            })
            .collect();

        if run.seeds.len() > 1 {
            let mut band: Vec<(f64, f64)> = grid
                .iter()
                .enumerate()
                .map(|(k, &x)| (x, sampled.iter().map(|s| s[k]).fold(f64::INFINITY, f64::min)))
                .collect();
            let upper: Vec<(f64, f64)> = grid
                .iter()
                .enumerate()
                .map(|(k, &x)| {
                    (x, sampled.iter().map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max))
                })
                .rev()
                .collect();
            band.extend(upper);
            chart.draw_series(std::iter::once(Polygon::new(band, color.mix(0.18))))?;
        }

        chart
            .draw_series(LineSeries::new(mean, color.stroke_width(2)))?
            .label(run.label.clone())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
    }

    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}
