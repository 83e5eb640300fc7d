//! SVG line charts rendered from CSV files already on disk.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone)]
pub struct LineChart<'a> {
    pub title: &'a str,
    pub caption: Option<&'a str>,
    pub x: &'a str,
    pub y: &'a str,
    /// Column whose values split rows into series.
    pub series: &'a str,
    pub log_log: bool,
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn read_series(csv_path: &Path, chart: &LineChart) -> Result<Series> {
    let mut reader = csv::Reader::from_path(csv_path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| BenchError::Plot(format!("{} has no column {name:?}", csv_path.display())))
    };
    let (xi, yi, si) = (col(chart.x)?, col(chart.y)?, col(chart.series)?);
    let mut out = Series::new();
    for rec in reader.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| BenchError::Plot(format!("non-numeric value {:?} in {}", &rec[i], csv_path.display())))
        };
        let (mut x, mut y) = (num(xi)?, num(yi)?);
        if chart.log_log {
            x = x.log10();
            y = y.log10();
        }
        if x.is_finite() && y.is_finite() {
            out.entry(rec[si].to_string()).or_default().push((x, y));
        }
    }
    for pts in out.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(out)
}

fn padded(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad)..(hi + pad)
}

/// Renders one line per distinct value of `chart.series`.
pub fn line_chart(csv_path: &Path, svg_path: &Path, chart: &LineChart) -> Result<()> {
    let series = read_series(csv_path, chart)?;
    let all: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    if all.is_empty() {
        return Err(BenchError::Plot(format!("{} has no plottable rows", csv_path.display())));
    }
    let fold = |f: fn(&(f64, f64)) -> f64| {
        all.iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = fold(|p| p.0);
    let (y0, y1) = fold(|p| p.1);
    let (xl, yl) = if chart.log_log {
        (format!("log10 {}", chart.x), format!("log10 {}", chart.y))
    } else {
        (chart.x.to_string(), chart.y.to_string())
    };

    let plot_err = |e: &dyn std::fmt::Display| BenchError::Plot(e.to_string());
    let root = SVGBackend::new(svg_path, (800, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let area = match chart.caption {
        Some(c) => {
            let (top, bottom) = root.split_vertically(490);
            bottom
                .draw(&Text::new(c.to_string(), (10, 8), ("sans-serif", 14)))
                .map_err(|e| plot_err(&e))?;
            top
        }
        None => root.clone(),
    };
    let mut ctx = ChartBuilder::on(&area)
        .caption(chart.title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(padded(x0, x1), padded(y0, y1))
        .map_err(|e| plot_err(&e))?;
    ctx.configure_mesh()
        .x_desc(xl)
        .y_desc(yl)
        .draw()
        .map_err(|e| plot_err(&e))?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        ctx.draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        ctx.draw_series(pts.iter().map(|p| Circle::new(*p, 3, color.filled())))
            .map_err(|e| plot_err(&e))?;
    }
    ctx.configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}
