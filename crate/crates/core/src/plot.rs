//! SVG line and bar charts.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Score-vs-epoch chart with an optional dashed horizontal reference line.
pub fn line_chart(
    path: &Path,
    title: &str,
    y_desc: &str,
    series: &[Series],
    reference: Option<f64>,
) -> Result<()> {
    ensure_parent(path)?;
    let all = series.iter().flat_map(|s| s.points.iter());
    let x_max = all.clone().map(|p| p.0).fold(1.0, f64::max);
    let (mut y_lo, mut y_hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.1), hi.max(p.1))
    });
    if let Some(r) = reference {
        y_lo = y_lo.min(r);
        y_hi = y_hi.max(r);
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 100.0);
    }
    let pad = ((y_hi - y_lo) * 0.1).max(1.0);

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(0f64..x_max, (y_lo - pad)..(y_hi + pad))?;
        chart
            .configure_mesh()
            .x_desc("epoch")
            .y_desc(y_desc)
            .draw()?;
        if let Some(r) = reference {
            chart.draw_series(DashedLineSeries::new(
                vec![(0.0, r), (x_max, r)],
                6,
                4,
                BLACK.into(),
            ))?;
        }
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(s.points.clone(), color.stroke_width(2)))?
                .label(s.name)
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2))
                });
            chart.draw_series(s.points.iter().map(|&p| Circle::new(p, 3, color.filled())))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| plot_err(path, e))
}

/// Frequency chart over integer bins.
pub fn bar_chart(path: &Path, title: &str, x_desc: &str, bins: &[(usize, usize)]) -> Result<()> {
    ensure_parent(path)?;
    let x_max = bins.iter().map(|b| b.0).max().unwrap_or(0).max(20) as u32;
    let y_max = bins.iter().map(|b| b.1).max().unwrap_or(0).max(1) as u32;
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d((0u32..x_max).into_segmented(), 0u32..y_max + y_max / 10 + 1)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_desc(x_desc)
            .y_desc("contexts")
            .draw()?;
        chart.draw_series(
            Histogram::vertical(&chart)
                .style(PALETTE[0].filled())
                .margin(2)
                .data(bins.iter().map(|&(x, n)| (x as u32, n as u32))),
        )?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| plot_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_svg_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ss.svg");
        let s = [Series {
            name: "vanilla",
            points: vec![(0.0, 60.0), (1.0, 55.0)],
        }];
        line_chart(&p, "SS", "score", &s, Some(50.0)).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("<svg"));
        let b = dir.path().join("sub/h.svg");
        bar_chart(&b, "male", "count", &[(7, 1)]).unwrap();
        assert!(b.exists());
    }
}
