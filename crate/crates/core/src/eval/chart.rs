use std::path::Path;

use plotters::prelude::*;

use super::sweep::{format_value, SweepPoint};
use super::EvalError;

/// Line chart of accuracy, precision and recall means across a sweep.
///
/// Axis values are placed at evenly spaced positions so that `inf` can be shown.
pub fn render_sweep_chart(points: &[SweepPoint], path: impl AsRef<Path>) -> Result<(), EvalError> {
    if points.is_empty() {
        return Err(EvalError::EmptySweep);
    }
    let chart_err = |e: &dyn std::fmt::Display| EvalError::Chart(e.to_string());
    let root = SVGBackend::new(path.as_ref(), (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| chart_err(&e))?;
    let n = points.len();
    let labels: Vec<String> = points.iter().map(|p| format_value(p.value)).collect();
    let mut chart = ChartBuilder::on(&root)
        .margin(16)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .caption(format!("sweep over {}", points[0].axis.as_str()), ("sans-serif", 18))
        .build_cartesian_2d(-0.5f64..(n as f64 - 0.5), 0f64..1.05f64)
        .map_err(|e| chart_err(&e))?;
    chart
        .configure_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < labels.len() {
                labels[i as usize].clone()
            } else {
                String::new()
            }
        })
        .x_desc(points[0].axis.as_str())
        .y_desc("mean")
        .draw()
        .map_err(|e| chart_err(&e))?;

    type Getter = fn(&SweepPoint) -> f64;
    let series: [(&str, RGBColor, Getter); 3] = [
        ("accuracy", BLUE, |p| p.report.accuracy.mean),
        ("precision", RED, |p| p.report.precision.mean),
        ("recall", GREEN, |p| p.report.recall.mean),
    ];
    for (name, color, get) in series {
        let data: Vec<(f64, f64)> = points.iter().enumerate().map(|(i, p)| (i as f64, get(p))).collect();
        chart
            .draw_series(LineSeries::new(data.clone(), color.stroke_width(2)))
            .map_err(|e| chart_err(&e))?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(data.into_iter().map(|xy| Circle::new(xy, 3, color.filled())))
            .map_err(|e| chart_err(&e))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| chart_err(&e))?;
    root.present().map_err(|e| chart_err(&e))?;
    Ok(())
}
