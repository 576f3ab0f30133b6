//! Static SVG figures for forecast records, each with a CSV sidecar of the
//! plotted values.
//!
//! Every plot area maps data to pixels linearly:
//! `px = LEFT + (x - x_min) / (x_max - x_min) * PLOT_W` and
//! `py = TOP + (y_max - y) / (y_max - y_min) * PLOT_H`; the bounds are
//! written on each `<polyline>` as `data-x-min` (etc.) attributes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::record::ForecastRecord;
use crate::report::load_record_sets;
use crate::tree::median_in_place;

pub const WIDTH: f64 = 720.0;
pub const HEIGHT: f64 = 360.0;
pub const LEFT: f64 = 60.0;
pub const TOP: f64 = 30.0;
pub const PLOT_W: f64 = WIDTH - LEFT - 20.0;
pub const PLOT_H: f64 = HEIGHT - TOP - 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Frame {
    /// Bounds over the points, padded so flat series still have height.
    pub fn fit(xs: &[f64], ys: &[f64]) -> Self {
        let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut x_min, mut x_max) = (lo(xs), hi(xs));
        if x_max <= x_min {
            x_min -= 0.5;
            x_max += 0.5;
        }
        let (mut y_min, mut y_max) = (lo(ys), hi(ys));
        let pad = if y_max > y_min { 0.05 * (y_max - y_min) } else { 0.5f64.max(y_max.abs() * 0.05) };
        y_min -= pad;
        y_max += pad;
        Self { x_min, x_max, y_min, y_max }
    }

    pub fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_min) / (self.x_max - self.x_min) * PLOT_W
    }

    pub fn py(&self, y: f64) -> f64 {
        TOP + (self.y_max - y) / (self.y_max - self.y_min) * PLOT_H
    }

    fn attrs(&self) -> String {
        format!(
            "data-x-min=\"{}\" data-x-max=\"{}\" data-y-min=\"{}\" data-y-max=\"{}\"",
            self.x_min, self.x_max, self.y_min, self.y_max
        )
    }
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, f: &Frame, y_label: &str) {
    let (x0, x1, y0, y1) = (LEFT, LEFT + PLOT_W, TOP, TOP + PLOT_H);
    let _ = writeln!(
        s,
        "<path d=\"M{x0} {y0} L{x0} {y1} L{x1} {y1}\" stroke=\"black\" fill=\"none\"/>"
    );
    for (v, label) in [(f.y_min, f.y_min), (f.y_max, f.y_max)] {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>",
            x0 - 4.0,
            f.py(v) + 3.0,
            label
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>",
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0,
        escape(y_label)
    );
}

fn polyline(s: &mut String, f: &Frame, xs: &[f64], ys: &[f64], class: &str, color: &str) {
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| format!("{:.2},{:.2}", f.px(*x), f.py(*y)))
        .collect();
    let _ = writeln!(
        s,
        "<polyline class=\"{class}\" {} points=\"{}\" stroke=\"{color}\" fill=\"none\" stroke-width=\"1.5\"/>",
        f.attrs(),
        pts.join(" ")
    );
}

/// Parses the `points` of the polyline with the given class.
pub fn polyline_points(svg: &str, class: &str) -> Option<Vec<(f64, f64)>> {
    let tag = svg
        .lines()
        .find(|l| l.starts_with("<polyline") && l.contains(&format!("class=\"{class}\"")))?;
    let start = tag.find("points=\"")? + 8;
    let end = start + tag[start..].find('"')?;
    tag[start..end]
        .split_whitespace()
        .map(|p| {
            let (x, y) = p.split_once(',')?;
            Some((x.parse().ok()?, y.parse().ok()?))
        })
        .collect()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Residual = actual minus predicted log-diff.
fn residuals(recs: &[ForecastRecord]) -> Vec<f64> {
    recs.iter().map(|r| r.actual_logdiff - r.pred_logdiff).collect()
}

pub fn residual_svg(recs: &[ForecastRecord], title: &str) -> String {
    let xs: Vec<f64> = (0..recs.len()).map(|i| i as f64).collect();
    let ys = residuals(recs);
    let f = Frame::fit(&xs, &[ys.as_slice(), &[0.0]].concat());
    let mut s = open(title);
    axes(&mut s, &f, "residual (log-diff)");
    let _ = writeln!(
        s,
        "<line x1=\"{LEFT}\" x2=\"{}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
        LEFT + PLOT_W,
        f.py(0.0),
        f.py(0.0)
    );
    polyline(&mut s, &f, &xs, &ys, "residual", "#1f77b4");
    for (x, y) in xs.iter().zip(&ys) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"#1f77b4\"/>",
            f.px(*x),
            f.py(*y)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn levels_svg(recs: &[ForecastRecord], title: &str) -> String {
    let xs: Vec<f64> = (0..recs.len()).map(|i| i as f64).collect();
    let actual: Vec<f64> = recs.iter().map(|r| r.actual_level).collect();
    let pred: Vec<f64> = recs.iter().map(|r| r.pred_level).collect();
    let f = Frame::fit(&xs, &[actual.as_slice(), &pred].concat());
    let mut s = open(title);
    axes(&mut s, &f, "index level");
    polyline(&mut s, &f, &xs, &actual, "actual", "black");
    polyline(&mut s, &f, &xs, &pred, "predicted", "#d62728");
    s.push_str("</svg>\n");
    s
}

/// Quartiles (min, q1, median, q3, max) by linear interpolation.
pub fn quartiles(values: &[f64]) -> [f64; 5] {
    let mut v = values.to_vec();
    median_in_place(&mut v);
    let q = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)]
}

pub fn dispersion_svg(recs: &[ForecastRecord], title: &str) -> String {
    let ys = residuals(recs);
    let qs = quartiles(&ys);
    let f = Frame::fit(&[0.0, 2.0], &ys);
    let mut s = open(title);
    axes(&mut s, &f, "residual (log-diff)");
    let (bx0, bx1) = (f.px(0.6), f.px(1.4));
    let _ = writeln!(
        s,
        "<rect class=\"box\" x=\"{bx0:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#aec7e8\" stroke=\"black\"/>",
        f.py(qs[3]),
        bx1 - bx0,
        f.py(qs[1]) - f.py(qs[3])
    );
    let cx = f.px(1.0);
    for (a, b) in [(qs[0], qs[1]), (qs[3], qs[4])] {
        let _ = writeln!(
            s,
            "<line x1=\"{cx:.2}\" x2=\"{cx:.2}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            f.py(a),
            f.py(b)
        );
    }
    let _ = writeln!(
        s,
        "<line class=\"median\" x1=\"{bx0:.2}\" x2=\"{bx1:.2}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>",
        f.py(qs[2]),
        f.py(qs[2])
    );
    // points spread across the right half in record order
    let n = ys.len().max(2) as f64;
    for (i, y) in ys.iter().enumerate() {
        let x = 1.5 + 0.4 * i as f64 / (n - 1.0);
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"#ff7f0e\" fill-opacity=\"0.7\"/>",
            f.px(x),
            f.py(*y)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotSummary {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Writes the three figures and their sidecars for one record set.
pub fn plot_records(out_dir: &Path, stem: &str, recs: &[ForecastRecord]) -> Result<Vec<PathBuf>> {
    if recs.is_empty() {
        return Err(Error::Report(format!("{stem}: no records to plot")));
    }
    let title = format!("{} (W = {})", recs[0].model, recs[0].window);
    let mut files = Vec::new();
    let mut emit = |name: String, text: String| -> Result<()> {
        let path = out_dir.join(name);
        write_text(&path, &text)?;
        files.push(path);
        Ok(())
    };
    emit(format!("{stem}_residuals.svg"), residual_svg(recs, &format!("Residuals: {title}")))?;
    emit(format!("{stem}_levels.svg"), levels_svg(recs, &format!("Predicted vs actual: {title}")))?;
    emit(format!("{stem}_dispersion.svg"), dispersion_svg(recs, &format!("Error dispersion: {title}")))?;

    let res = residuals(recs);
    let path = out_dir.join(format!("{stem}_residuals.csv"));
    write_csv(
        &path,
        &["index", "date", "residual"],
        recs.iter()
            .zip(&res)
            .enumerate()
            .map(|(i, (r, e))| vec![i.to_string(), r.date.to_string(), e.to_string()])
            .collect(),
    )?;
    files.push(path);
    let path = out_dir.join(format!("{stem}_levels.csv"));
    write_csv(
        &path,
        &["index", "date", "actual_level", "pred_level"],
        recs.iter()
            .enumerate()
            .map(|(i, r)| {
                vec![i.to_string(), r.date.to_string(), r.actual_level.to_string(), r.pred_level.to_string()]
            })
            .collect(),
    )?;
    files.push(path);
    let path = out_dir.join(format!("{stem}_dispersion.csv"));
    let names = ["min", "q1", "median", "q3", "max"];
    write_csv(
        &path,
        &["stat", "value"],
        names
            .iter()
            .zip(quartiles(&res))
            .map(|(n, v)| vec![n.to_string(), v.to_string()])
            .collect(),
    )?;
    files.push(path);
    Ok(files)
}

/// Figures for every record file under `dir`, written to `dir/plots`.
pub fn plot_dir(dir: &Path) -> Result<PlotSummary> {
    let sets = load_record_sets(dir, &[])?;
    let out = dir.join("plots");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut summary = PlotSummary::default();
    for (name, recs) in &sets {
        let stem = name.trim_end_matches(".csv");
        if let Some(r) = recs.iter().find(|r| !(r.actual_level > 0.0 && r.pred_level > 0.0)) {
            summary
                .warnings
                .push(format!("{name}: non-positive level on {}, plots skipped", r.date));
            continue;
        }
        summary.files.extend(plot_records(&out, stem, recs)?);
    }
    Ok(summary)
}
