//! Static SVG line plots of pipeline CSVs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use plotters::prelude::*;

/// Known layouts: `(x column, y columns, title)`.
const LAYOUTS: &[(&str, &[&str], &str)] = &[
    ("env_steps", &["mean_return"], "Mean return vs. environment steps"),
    ("epoch", &["train_loss", "val_mse"], "Distillation loss"),
    ("t", &["v_lin", "v_ang"], "Actions over time"),
];

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        // Non-numeric cells (and NaN before the first episode) become gaps.
        rows.push(rec?.iter().map(|s| s.parse::<f64>().unwrap_or(f64::NAN)).collect());
    }
    Ok(Table { headers, rows })
}

pub fn plot_csv(csv: &Path, out: &Path) -> Result<()> {
    let table = read_table(csv)?;
    let col = |name: &str| table.headers.iter().position(|h| h == name);
    let Some(&(x_name, y_names, title)) = LAYOUTS.iter().find(|(x, ys, _)| col(x).is_some() && ys.iter().all(|y| col(y).is_some())) else {
        bail!("{}: unrecognized columns {:?}", csv.display(), table.headers);
    };
    let xi = col(x_name).unwrap();
    let series: Vec<(&str, Vec<(f64, f64)>)> = y_names
        .iter()
        .map(|&y| {
            let yi = col(y).unwrap();
            let pts = table.rows.iter().map(|r| (r[xi], r[yi])).filter(|(a, b)| a.is_finite() && b.is_finite()).collect();
            (y, pts)
        })
        .collect();
    let all: Vec<&(f64, f64)> = series.iter().flat_map(|(_, p)| p).collect();
    if all.is_empty() {
        bail!("{}: no finite points to plot", csv.display());
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &&(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    let root = SVGBackend::new(out, (900, 540)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))?;
    chart.configure_mesh().x_desc(x_name).draw()?;
    for (i, (name, pts)) in series.into_iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present().with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
