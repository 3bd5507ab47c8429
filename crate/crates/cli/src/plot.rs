use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use lingo_core::evaluation::{reward_curve, EvalReport};
use lingo_core::Error;
use plotters::prelude::*;

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Metrics logs drawn as smoothed reward curves; `LABEL=PATH` or `PATH`
    /// (labelled by file stem).
    #[arg(long)]
    pub metrics: Vec<String>,
    /// Moving-average window in sessions.
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    /// Evaluation reports (JSON) drawn as an accuracy bar chart; same syntax.
    #[arg(long)]
    pub reports: Vec<String>,
    #[arg(long, default_value = "plots")]
    pub out_dir: PathBuf,
}

/// Splits `LABEL=PATH`; a bare path is labelled by its file stem.
pub fn labelled(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| arg.to_string());
            (label, path)
        }
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow::anyhow!("plotting failed: {e}")
}

pub fn reward_plot(curves: &[(String, Vec<(u64, f64)>)], window: usize, out: &Path) -> Result<()> {
    let max_step = curves.iter().flat_map(|(_, c)| c.iter().map(|p| p.0)).max().unwrap_or(1).max(1) as f64;
    let root = SVGBackend::new(out, (900, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("training reward ({window}-session moving average)"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..max_step, -1.05f64..1.05)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("session").y_desc("reward").draw().map_err(plot_err)?;
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(curve.iter().map(|&(s, r)| (s as f64, r)), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

pub fn accuracy_plot(bars: &[(String, f64)], out: &Path) -> Result<()> {
    let n = bars.len().max(1);
    let root = SVGBackend::new(out, (900, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption("test accuracy", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..n as f64, 0f64..1.0)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n * 2 + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 1e-6 {
                labels.get(i).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("accuracy")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, (_, acc))| {
            Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, *acc)], Palette99::pick(i).filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

pub fn run(args: &PlotArgs) -> Result<()> {
    if args.metrics.is_empty() && args.reports.is_empty() {
        return Err(Error::Config("plot needs at least one --metrics or --reports input".into()).into());
    }
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    if !args.metrics.is_empty() {
        let curves = args
            .metrics
            .iter()
            .map(|m| {
                let (label, path) = labelled(m);
                let c = reward_curve(&path, args.window).with_context(|| format!("reading {}", path.display()))?;
                Ok((label, c))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = args.out_dir.join("reward.svg");
        reward_plot(&curves, args.window, &out)?;
        println!("{}", out.display());
    }
    if !args.reports.is_empty() {
        let bars = args
            .reports
            .iter()
            .map(|r| {
                let (label, path) = labelled(r);
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let report: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                Ok((label, report.accuracy))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = args.out_dir.join("accuracy.svg");
        accuracy_plot(&bars, &out)?;
        println!("{}", out.display());
    }
    Ok(())
}
