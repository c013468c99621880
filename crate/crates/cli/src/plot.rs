//! SVG line charts with optional shaded bands.

use std::path::Path;

use plotters::prelude::*;

use crate::artifacts::write_text;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Lower and upper edge, drawn as a translucent region.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
}

impl Series {
    pub fn line(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            x,
            y,
            band: None,
        }
    }

    pub fn with_band(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.band = Some((lo, hi));
        self
    }
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub x_desc: String,
    pub y_desc: String,
    pub series: Vec<Series>,
    /// Vertical markers, e.g. the end of the training horizon.
    pub markers: Vec<f64>,
}

/// Data range padded by 5%; a flat range is widened so the axis stays
/// readable.
pub fn axis_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return (0.0, 1.0);
    }
    let width = hi - lo;
    if width <= 1e-12 * hi.abs().max(1.0) {
        let pad = (0.05 * hi.abs()).max(1e-3);
        return (lo - pad, hi + pad);
    }
    (lo - 0.05 * width, hi + 0.05 * width)
}

fn plot_err(path: &Path) -> impl Fn(String) -> CliError + '_ {
    move |msg| CliError::Plot {
        path: path.to_path_buf(),
        msg,
    }
}

/// Renders `panels` on a grid with `cols` columns and writes the SVG.
pub fn render(path: &Path, title: &str, panels: &[Panel], cols: usize) -> Result<()> {
    let err = plot_err(path);
    if panels.is_empty() {
        return Err(err("nothing to plot".into()));
    }
    let cols = cols.clamp(1, panels.len());
    let rows = panels.len().div_ceil(cols);
    let size = (520 * cols as u32, 360 * rows as u32 + 40);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, size).into_drawing_area();
        root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
        let root = root
            .titled(title, ("sans-serif", 22))
            .map_err(|e| err(e.to_string()))?;
        for (area, panel) in root.split_evenly((rows, cols)).iter().zip(panels) {
            draw_panel(area, panel).map_err(&err)?;
        }
        root.present().map_err(|e| err(e.to_string()))?;
    }
    write_text(path, &svg)
}

fn draw_panel<DB: DrawingBackend>(area: &DrawingArea<DB, plotters::coord::Shift>, panel: &Panel) -> std::result::Result<(), String> {
    let xs = axis_range(panel.series.iter().flat_map(|s| s.x.iter().copied()).chain(panel.markers.iter().copied()));
    let ys = axis_range(panel.series.iter().flat_map(|s| {
        let band = s.band.iter().flat_map(|(lo, hi)| lo.iter().chain(hi)).copied();
        s.y.iter().copied().chain(band)
    }));
    let mut chart = ChartBuilder::on(area)
        .caption(&panel.title, ("sans-serif", 16))
        .margin(8)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .x_desc(panel.x_desc.as_str())
        .y_desc(panel.y_desc.as_str())
        .draw()
        .map_err(|e| e.to_string())?;
    for (k, s) in panel.series.iter().enumerate() {
        let color = Palette99::pick(k).to_rgba();
        if let Some((lo, hi)) = &s.band {
            let mut pts: Vec<(f64, f64)> = s.x.iter().copied().zip(hi.iter().copied()).collect();
            pts.extend(s.x.iter().copied().zip(lo.iter().copied()).rev());
            chart
                .draw_series(std::iter::once(Polygon::new(pts, color.mix(0.2).filled())))
                .map_err(|e| e.to_string())?;
        }
        let line = LineSeries::new(s.x.iter().copied().zip(s.y.iter().copied()), color.stroke_width(2));
        let anno = chart.draw_series(line).map_err(|e| e.to_string())?;
        if !s.label.is_empty() {
            anno.label(s.label.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        }
    }
    for &m in &panel.markers {
        chart
            .draw_series(LineSeries::new([(m, ys.0), (m, ys.1)], BLACK.mix(0.5)))
            .map_err(|e| e.to_string())?;
    }
    if panel.series.iter().any(|s| !s.label.is_empty()) {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Mean and population standard deviation across runs, per position.
pub fn mean_std(runs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let n = runs.len() as f64;
    (0..len)
        .map(|i| {
            let m = runs.iter().map(|r| r[i]).sum::<f64>() / n;
            let v = runs.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / n;
            (m, v.sqrt())
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_data_gets_a_nonempty_axis() {
        let (lo, hi) = axis_range([3.0, 3.0, 3.0]);
        assert!(lo < 3.0 && hi > 3.0);
        assert_eq!(axis_range([]), (0.0, 1.0));
        let (lo, hi) = axis_range([0.0, 10.0]);
        assert!((lo + 0.5).abs() < 1e-12 && (hi - 10.5).abs() < 1e-12);
    }

    #[test]
    fn single_run_band_collapses() {
        let (m, s) = mean_std(&[vec![1.0, 2.0]]);
        assert_eq!(m, vec![1.0, 2.0]);
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn renders_svg_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.svg");
        let s = Series::line("flat", vec![0.0, 1.0, 2.0], vec![5.0; 3]).with_band(vec![5.0; 3], vec![5.0; 3]);
        let panel = Panel {
            title: "constant".into(),
            x_desc: "step".into(),
            y_desc: "value".into(),
            series: vec![s],
            markers: vec![1.0],
        };
        render(&p, "test", &[panel.clone(), panel], 2).unwrap();
        let svg = std::fs::read_to_string(&p).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("flat") && svg.contains("constant"));
    }
}
