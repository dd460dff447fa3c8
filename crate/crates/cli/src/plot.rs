//! SVG charts for the CSV reports, recognised by their header row.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use plotters::prelude::*;

type Series = (String, Vec<(f64, f64)>);

const SIZE: (u32, u32) = (800, 500);

fn read(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("plot: reading {}", path.display()))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok((header, rows))
}

fn num(s: &str, what: &str) -> Result<f64> {
    s.trim().parse().with_context(|| format!("plot: bad {what} '{s}'"))
}

fn col(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .with_context(|| format!("plot: missing column '{name}'"))
}

fn line_chart(out: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let pts = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        bail!("plot: nothing to draw for {title}");
    }
    let pad = |lo: f64, hi: f64| {
        let d = ((hi - lo) * 0.05).max(1e-3);
        (lo - d, hi + d)
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw()?;
    for (i, (name, data)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(data.iter().copied(), color.stroke_width(2)))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart.draw_series(data.iter().map(|&p| Circle::new(p, 3, color.filled())))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

fn recall_curves(header: &[String], rows: &[Vec<String>], out: &Path) -> Result<()> {
    let re: Vec<(usize, f64)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("re_").and_then(|b| b.parse::<f64>().ok()).map(|b| (i, b / 100.0)))
        .collect();
    let (cat, model, view) = (col(header, "category")?, col(header, "model")?, col(header, "view")?);
    let ds = col(header, "dataset")?;
    let series = rows
        .iter()
        .map(|r| {
            let name = format!("{} {}/{} ({})", r[model], r[ds], r[cat], r[view]);
            let pts = re.iter().map(|&(i, b)| Ok((b, num(&r[i], "recall")?))).collect::<Result<_>>()?;
            Ok((name, pts))
        })
        .collect::<Result<Vec<Series>>>()?;
    line_chart(out, "Recall at IoU threshold", "IoU threshold", "recall", &series)
}

fn grid_curves(header: &[String], rows: &[Vec<String>], out: &Path) -> Result<()> {
    let alphas = header[1..].iter().map(|h| num(h, "alpha")).collect::<Result<Vec<_>>>()?;
    let series = rows
        .iter()
        .map(|r| {
            let pts = alphas
                .iter()
                .zip(&r[1..])
                .filter(|(_, v)| !v.is_empty())
                .map(|(&a, v)| Ok((a, num(v, "mAR")?)))
                .collect::<Result<_>>()?;
            Ok((r[0].clone(), pts))
        })
        .collect::<Result<Vec<Series>>>()?;
    line_chart(out, "mAR under mismatched measurement noise", "test alpha_p", "mAR", &series)
}

fn training_curves(header: &[String], rows: &[Vec<String>], out: &Path) -> Result<()> {
    let (e, l, v) = (col(header, "epoch")?, col(header, "loss")?, col(header, "val_m_ar")?);
    let loss = rows.iter().map(|r| Ok((num(&r[e], "epoch")?, num(&r[l], "loss")?))).collect::<Result<_>>()?;
    let val: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| !r[v].is_empty())
        .map(|r| Ok((num(&r[e], "epoch")?, num(&r[v], "val mAR")?)))
        .collect::<Result<_>>()?;
    line_chart(out, "Training loss", "epoch", "loss", &[("train loss".into(), loss)])?;
    if !val.is_empty() {
        let vpath = out.with_file_name(format!(
            "{}_val.svg",
            out.file_stem().unwrap_or_default().to_string_lossy()
        ));
        line_chart(&vpath, "Validation mAR", "epoch", "mAR", &[("val mAR".into(), val)])?;
    }
    Ok(())
}

fn aiou_bars(header: &[String], rows: &[Vec<String>], out: &Path) -> Result<()> {
    let (d, c, a) = (col(header, "dataset")?, col(header, "category")?, col(header, "aiou")?);
    let bars: Vec<(String, f64)> = rows
        .iter()
        .map(|r| Ok((format!("{}/{}", r[d], r[c]), num(&r[a], "aiou")?)))
        .collect::<Result<_>>()?;
    if bars.is_empty() {
        bail!("plot: empty AIoU report");
    }
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption("Adjacent-frame AIoU", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d((0..bars.len()).into_segmented(), 0.0..1.0)?;
    chart
        .configure_mesh()
        .y_desc("AIoU")
        .x_label_formatter(&|x| match x {
            SegmentValue::CenterOf(i) => labels.get(*i).cloned().unwrap_or_default(),
            _ => String::new(),
        })
        .draw()?;
    chart.draw_series(bars.iter().enumerate().map(|(i, (_, v))| {
        Rectangle::new(
            [(SegmentValue::Exact(i), 0.0), (SegmentValue::Exact(i + 1), *v)],
            Palette99::pick(i).filled(),
        )
    }))?;
    root.present()?;
    Ok(())
}

/// Writes `<out>/<input stem>.svg` for every input.
pub fn plot_all(inputs: &[PathBuf], out: &Path) -> Result<()> {
    for input in inputs {
        let (header, rows) = read(input)?;
        let stem = input.file_stem().unwrap_or_default().to_string_lossy();
        let target = out.join(format!("{stem}.svg"));
        let has = |n: &str| header.iter().any(|h| h == n);
        if has("re_50") {
            recall_curves(&header, &rows, &target)?;
        } else if has("epoch") {
            training_curves(&header, &rows, &target)?;
        } else if has("aiou") {
            aiou_bars(&header, &rows, &target)?;
        } else if header.first().is_some_and(|h| h == "model") {
            grid_curves(&header, &rows, &target)?;
        } else {
            bail!("plot: unrecognised report {}", input.display());
        }
        log::info!("wrote {}", target.display());
    }
    Ok(())
}
