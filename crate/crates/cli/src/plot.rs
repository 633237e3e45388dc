//! `plot`: fitness and cumulative-evaluation charts from run logs.
//!
//! With several runs, lines are the mean across runs and the shaded band is
//! one standard deviation. Runs are truncated to the shortest log.

use std::path::{Path, PathBuf};

use glasspipe::coevo::GenerationRecord;
use glasspipe::stats::{mean, sample_std};
use plotters::prelude::*;

use crate::train::{read_log, RunLayout};
use crate::{usage, Error, Result};

pub const FITNESS_CHART: &str = "fitness.svg";
pub const EVALUATIONS_CHART: &str = "evaluations.svg";

const SIZE: (u32, u32) = (800, 500);

/// Mean and standard deviation per generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn band(series: &[Vec<f64>]) -> Band {
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    let column = |g: usize| series.iter().map(|s| s[g]).collect::<Vec<_>>();
    Band {
        mean: (0..len).map(|g| mean(&column(g))).collect(),
        std: (0..len).map(|g| sample_std(&column(g))).collect(),
    }
}

fn cumulative(xs: impl Iterator<Item = u64>) -> Vec<f64> {
    xs.scan(0u64, |acc, x| {
        *acc += x;
        Some(*acc as f64)
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub generations: Vec<u64>,
    pub best_so_far: Band,
    pub generation_best: Band,
    pub actual_cumulative: Band,
    /// Cumulative `p_c · p_g · e`, the cost without clustering.
    pub theoretical_cumulative: Vec<f64>,
}

pub fn plot_data(logs: &[Vec<GenerationRecord>]) -> Result<PlotData> {
    let len = logs.iter().map(Vec::len).min().unwrap_or(0);
    if len == 0 {
        return Err(usage("no generations to plot"));
    }
    let series = |f: &dyn Fn(&GenerationRecord) -> f64| -> Vec<Vec<f64>> {
        logs.iter().map(|l| l[..len].iter().map(f).collect()).collect()
    };
    let actual: Vec<Vec<f64>> = logs
        .iter()
        .map(|l| cumulative(l[..len].iter().map(|r| r.actual_evaluations)))
        .collect();
    Ok(PlotData {
        generations: logs[0][..len].iter().map(|r| r.generation).collect(),
        best_so_far: band(&series(&|r| r.best_so_far)),
        generation_best: band(&series(&|r| r.best_fitness)),
        actual_cumulative: band(&actual),
        theoretical_cumulative: cumulative(logs[0][..len].iter().map(|r| r.theoretical_evaluations)),
    })
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn draw_band(
    chart: &mut ChartContext<'_, SVGBackend<'_>, Cartesian2d<plotters::coord::types::RangedCoordf64, plotters::coord::types::RangedCoordf64>>,
    xs: &[f64],
    b: &Band,
    color: RGBColor,
    label: &str,
) -> Result<()> {
    if b.std.iter().any(|&s| s > 0.0) {
        let upper = xs.iter().zip(b.mean.iter().zip(&b.std)).map(|(&x, (m, s))| (x, m + s));
        let lower = xs.iter().zip(b.mean.iter().zip(&b.std)).rev().map(|(&x, (m, s))| (x, m - s));
        let outline: Vec<(f64, f64)> = upper.chain(lower).collect();
        chart
            .draw_series(std::iter::once(Polygon::new(outline, color.mix(0.2).filled())))
            .map_err(plot_err)?;
    }
    chart
        .draw_series(LineSeries::new(xs.iter().copied().zip(b.mean.iter().copied()), color.stroke_width(2)))
        .map_err(plot_err)?
        .label(label)
        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    Ok(())
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let pad = ((hi - lo) * 0.05).max(0.5);
    (lo - pad, hi + pad)
}

fn fitness_chart(path: &Path, d: &PlotData) -> Result<()> {
    let xs: Vec<f64> = d.generations.iter().map(|&g| g as f64).collect();
    let bands = [&d.best_so_far, &d.generation_best];
    let (lo, hi) = range(
        bands
            .iter()
            .flat_map(|b| b.mean.iter().zip(&b.std).flat_map(|(m, s)| [m - s, m + s])),
    );
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Fitness", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(xs[0]..xs[xs.len() - 1].max(xs[0] + 1.0), lo..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("generation")
        .y_desc("score")
        .draw()
        .map_err(plot_err)?;
    draw_band(&mut chart, &xs, &d.best_so_far, BLUE, "best so far")?;
    draw_band(&mut chart, &xs, &d.generation_best, RED, "generation best")?;
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn evaluations_chart(path: &Path, d: &PlotData) -> Result<()> {
    let xs: Vec<f64> = d.generations.iter().map(|&g| g as f64).collect();
    let top = d
        .theoretical_cumulative
        .iter()
        .chain(d.actual_cumulative.mean.iter().zip(&d.actual_cumulative.std).map(|(m, s)| m + s).collect::<Vec<_>>().iter())
        .copied()
        .fold(1.0, f64::max);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Evaluations", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(xs[0]..xs[xs.len() - 1].max(xs[0] + 1.0), 0.0..top * 1.05)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("generation")
        .y_desc("cumulative episodes")
        .draw()
        .map_err(plot_err)?;
    draw_band(&mut chart, &xs, &d.actual_cumulative, BLUE, "with clustering")?;
    chart
        .draw_series(DashedLineSeries::new(
            xs.iter().copied().zip(d.theoretical_cumulative.iter().copied()),
            8,
            6,
            BLACK.stroke_width(2),
        ))
        .map_err(plot_err)?
        .label("without clustering")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK.stroke_width(2)));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperLeft)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Writes both charts into `out` (default: the first run's `plots/`) and
/// returns their paths.
pub fn plot(run_dirs: &[PathBuf], out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let first = run_dirs.first().ok_or_else(|| usage("plot needs at least one run directory"))?;
    let logs = run_dirs
        .iter()
        .map(|d| {
            let path = RunLayout::new(d).log();
            let log = read_log(&path)?;
            if log.is_empty() {
                return Err(usage(format!("{} has no generations", path.display())));
            }
            Ok(log)
        })
        .collect::<Result<Vec<_>>>()?;
    let data = plot_data(&logs)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| RunLayout::new(first).plots());
    std::fs::create_dir_all(&out).map_err(|source| Error::File { path: out.clone(), source })?;
    let fitness = out.join(FITNESS_CHART);
    let evaluations = out.join(EVALUATIONS_CHART);
    fitness_chart(&fitness, &data)?;
    evaluations_chart(&evaluations, &data)?;
    Ok(vec![fitness, evaluations])
}
