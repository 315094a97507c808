//! `csne plot` — render an interchange CSV as a standalone SVG.
//!
//! - `scatter2d`: a 2-column embedding CSV, one marker per row, colored by
//!   label when the file carries one.
//! - `line`: a training-log CSV; loss, alignment, and uniformity curves
//!   over epochs, each min-max normalized to share the stage.
//! - `heatmap`: a bare numeric-grid CSV; colored cells with numeric
//!   annotations.

use std::path::Path;

use csne_core::csvio::{read_embedding_csv, read_matrix_csv, read_training_log_csv};

use crate::config::{self, FileConfig, PlotKind};
use crate::svg::{diverging_color, AxisMap, Svg, HEIGHT, MARGIN, PALETTE, WIDTH};
use crate::CliError;

pub fn run(cfg: &FileConfig) -> Result<(), CliError> {
    let plot = cfg
        .plot
        .as_ref()
        .ok_or_else(|| CliError::usage("plot needs a [plot] section"))?;
    let out_name = plot
        .out
        .as_deref()
        .ok_or_else(|| CliError::usage("plot needs an output path (plot.out or --out)"))?;
    let dir = config::out_dir(cfg)?;
    let input = config::out_path(&dir, &plot.input);
    let out = config::out_path(&dir, out_name);

    // Render fully before touching the output path: a bad input must not
    // leave a file behind.
    let svg = match plot.kind {
        PlotKind::Scatter2d => scatter2d(&input)?,
        PlotKind::Line => line(&input)?,
        PlotKind::Heatmap => heatmap(&input)?,
    };
    std::fs::write(&out, svg)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", out.display())))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn scatter2d(input: &Path) -> Result<String, CliError> {
    let (z, labels) = read_embedding_csv(input)?;
    if z.rows() == 0 {
        return Err(CliError::config(format!("{}: no data rows", input.display())));
    }
    if z.cols() != 2 {
        return Err(CliError::config(format!(
            "{}: scatter2d needs 2 feature columns, found {}",
            input.display(),
            z.cols()
        )));
    }
    let span = |c: usize| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..z.rows() {
            lo = lo.min(z.get(i, c));
            hi = hi.max(z.get(i, c));
        }
        pad_span(lo, hi)
    };
    let (xs, ys) = (span(0), span(1));
    let xm = AxisMap::x(xs);
    let ym = AxisMap::y(ys);

    let mut svg = Svg::new();
    svg.frame();
    svg.axis_labels(xs, ys);
    for i in 0..z.rows() {
        let color = match &labels {
            Some(l) => PALETTE[l[i] % PALETTE.len()],
            None => PALETTE[0],
        };
        svg.circle(xm.map(z.get(i, 0)), ym.map(z.get(i, 1)), 3.0, color);
    }
    Ok(svg.finish())
}

fn line(input: &Path) -> Result<String, CliError> {
    let log = read_training_log_csv(input)?;
    if log.is_empty() {
        return Err(CliError::config(format!("{}: no data rows", input.display())));
    }
    let series: [(&str, &str, Vec<f64>); 3] = [
        ("loss", PALETTE[0], log.iter().map(|s| s.loss).collect()),
        ("align", PALETTE[1], log.iter().map(|s| s.align_metric).collect()),
        ("uniform", PALETTE[2], log.iter().map(|s| s.uniform_metric).collect()),
    ];
    let epochs: Vec<f64> = log.iter().map(|s| s.epoch as f64).collect();
    let xs = pad_span(epochs[0], epochs[epochs.len() - 1]);
    let xm = AxisMap::x(xs);
    let ym = AxisMap::y((0.0, 1.0));

    let mut svg = Svg::new();
    svg.frame();
    svg.axis_labels(xs, (0.0, 1.0));
    svg.text(
        WIDTH / 2.0,
        HEIGHT - MARGIN / 4.0,
        12.0,
        "middle",
        "#333",
        "epoch (curves min-max normalized)",
    );
    for (i, (name, color, values)) in series.iter().enumerate() {
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo { hi - lo } else { 1.0 };
        let pts: Vec<(f64, f64)> = epochs
            .iter()
            .zip(values)
            .map(|(e, v)| (xm.map(*e), ym.map((v - lo) / scale)))
            .collect();
        svg.polyline(&pts, color);
        svg.text(
            WIDTH - MARGIN + 6.0,
            MARGIN + 16.0 * i as f64 + 12.0,
            12.0,
            "start",
            color,
            &format!("{name} [{lo:.3}, {hi:.3}]"),
        );
    }
    Ok(svg.finish())
}

fn heatmap(input: &Path) -> Result<String, CliError> {
    let m = read_matrix_csv(input)?;
    if m.rows() == 0 || m.cols() == 0 {
        return Err(CliError::config(format!("{}: empty grid", input.display())));
    }
    let cell_w = (WIDTH - 2.0 * MARGIN) / m.cols() as f64;
    let cell_h = (HEIGHT - 2.0 * MARGIN) / m.rows() as f64;

    let mut svg = Svg::new();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let v = m.get(i, j);
            let x = MARGIN + j as f64 * cell_w;
            let y = MARGIN + i as f64 * cell_h;
            svg.rect(x, y, cell_w, cell_h, &diverging_color(v));
            let ink = if v.abs() > 0.6 { "#fff" } else { "#111" };
            svg.text(
                x + cell_w / 2.0,
                y + cell_h / 2.0 + 4.0,
                12.0,
                "middle",
                ink,
                &format!("{v:.2}"),
            );
        }
    }
    svg.frame();
    Ok(svg.finish())
}

fn pad_span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}
