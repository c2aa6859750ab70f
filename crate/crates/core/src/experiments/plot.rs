//! Minimal static SVG line charts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::ExperimentKind;
use super::metrics::{CsvTable, Manifest, MetricsSummary};
use crate::error::{Error, Result};
use crate::online_adapt::ControllerKind;
use crate::trace::RolloutTrace;

const PANEL_W: f64 = 480.0;
const PANEL_H: f64 = 300.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 42.0;

/// A polyline; NaN points break the line.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
    /// `(x, lo, hi)` shaded behind the line
    pub band: Vec<(f64, f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn line(label: &str, color: &'static str, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.to_string(),
            color,
            points,
            band: Vec::new(),
            dashed: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub equal_aspect: bool,
}

impl Panel {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            equal_aspect: false,
        }
    }
}

pub fn kind_color(kind: ControllerKind) -> &'static str {
    match kind {
        ControllerKind::Nominal => "#d62728",
        ControllerKind::ResidualMlp => "#1f77b4",
        ControllerKind::MetaMlp => "#2ca02c",
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn render_panel(out: &mut String, p: &Panel, ox: f64, oy: f64) {
    let xs = p
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|q| q.0).chain(s.band.iter().map(|b| b.0)));
    let (mut x0, mut x1) = range(xs);
    let ys = p.series.iter().flat_map(|s| {
        s.points
            .iter()
            .map(|q| q.1)
            .chain(s.band.iter().flat_map(|b| [b.1, b.2]))
    });
    let (mut y0, mut y1) = range(ys);
    let (pw, ph) = (PANEL_W - LEFT - RIGHT, PANEL_H - TOP - BOTTOM);
    if p.equal_aspect {
        let sx = (x1 - x0) / pw;
        let sy = (y1 - y0) / ph;
        let s = sx.max(sy);
        let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        x0 = cx - s * pw / 2.0;
        x1 = cx + s * pw / 2.0;
        y0 = cy - s * ph / 2.0;
        y1 = cy + s * ph / 2.0;
    }
    let px = |x: f64| ox + LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| oy + TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let _ = writeln!(
        out,
        r##"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        num(ox + LEFT),
        num(oy + TOP),
        num(pw),
        num(ph)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
        num(ox + LEFT + pw / 2.0),
        num(oy + 18.0),
        escape(&p.title)
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            num(px(xv)),
            num(oy + TOP + ph + 14.0),
            tick_label(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{}</text>"#,
            num(ox + LEFT - 4.0),
            num(py(yv) + 3.0),
            tick_label(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
        num(ox + LEFT + pw / 2.0),
        num(oy + PANEL_H - 8.0),
        escape(&p.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" transform="rotate(-90 {} {})" text-anchor="middle">{}</text>"#,
        num(ox + 14.0),
        num(oy + TOP + ph / 2.0),
        num(ox + 14.0),
        num(oy + TOP + ph / 2.0),
        escape(&p.y_label)
    );

    for s in &p.series {
        let band: Vec<_> = s.band.iter().filter(|b| b.1.is_finite() && b.2.is_finite()).collect();
        if !band.is_empty() {
            let mut d = String::new();
            for (i, b) in band.iter().enumerate() {
                let _ = write!(d, "{}{},{} ", if i == 0 { "M" } else { "L" }, num(px(b.0)), num(py(b.2)));
            }
            for b in band.iter().rev() {
                let _ = write!(d, "L{},{} ", num(px(b.0)), num(py(b.1)));
            }
            let _ = writeln!(
                out,
                r#"<path d="{}Z" fill="{}" fill-opacity="0.18" stroke="none"/>"#,
                d,
                s.color
            );
        }
        let mut d = String::new();
        let mut pen_down = false;
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite()) {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{},{} ", if pen_down { "L" } else { "M" }, num(px(x)), num(py(y)));
            pen_down = true;
        }
        if !d.is_empty() {
            let dash = if s.dashed { r#" stroke-dasharray="5,4""# } else { "" };
            let _ = writeln!(
                out,
                r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.3"{}/>"#,
                d.trim_end(),
                s.color,
                dash
            );
        }
    }
    let mut ly = oy + TOP + 14.0;
    let mut seen: Vec<&str> = Vec::new();
    for s in &p.series {
        if s.label.is_empty() || seen.contains(&s.label.as_str()) {
            continue;
        }
        seen.push(&s.label);
        let lx = ox + PANEL_W - RIGHT - 110.0;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"/>"#,
            num(lx),
            num(ly - 4.0),
            num(lx + 16.0),
            num(ly - 4.0),
            s.color
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10">{}</text>"#,
            num(lx + 20.0),
            num(ly),
            escape(&s.label)
        );
        ly += 14.0;
    }
}

/// Lays panels out on a grid with `cols` columns and returns the document.
pub fn render(panels: &[Panel], cols: usize) -> String {
    let cols = cols.max(1);
    let rows = panels.len().div_ceil(cols).max(1);
    let (w, h) = (PANEL_W * cols as f64, PANEL_H * rows as f64);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif">"#,
        num(w),
        num(h),
        num(w),
        num(h)
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, PANEL_W * (i % cols) as f64, PANEL_H * (i / cols) as f64);
    }
    out.push_str("</svg>\n");
    out
}

fn write(dir: &Path, name: &str, panels: &[Panel], cols: usize) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, render(panels, cols)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn banded_panels(summary: &MetricsSummary, series: &[(&str, &str)]) -> Vec<Panel> {
    series
        .iter()
        .map(|(key, title)| {
            let mut p = Panel::new(title, "t [s]", title);
            for kind in ControllerKind::ALL {
                let Some(bins) = summary.kind(kind).and_then(|k| k.bins.as_ref()) else {
                    continue;
                };
                let Some(band) = bins.series.get(*key) else {
                    continue;
                };
                let mut s = Series::line(kind.name(), kind_color(kind), bins.t.iter().copied().zip(band.mean.iter().copied()).collect());
                s.band = bins
                    .t
                    .iter()
                    .zip(band.mean.iter().zip(&band.std))
                    .map(|(t, (m, sd))| (*t, (m - sd).max(0.0), m + sd))
                    .collect();
                p.series.push(s);
            }
            p
        })
        .collect()
}

fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn vdp_plots(dir: &Path, m: &Manifest) -> Result<Vec<PathBuf>> {
    let (Some(pred), Some(plant)) = (m.predictions.first(), m.traces.get("plant").and_then(|v| v.first())) else {
        return Err(Error::Config("no prediction files to plot".into()));
    };
    let tab = CsvTable::read(&resolve(dir, pred))?;
    let truth = RolloutTrace::read_csv(&resolve(dir, plant))?;
    let step = tab.column("step")?;
    let t = tab.column("t")?;

    let mut phase = Panel::new("phase portrait, trial 0", "x1", "x2");
    let mut x1 = Panel::new("x1 predictions, trial 0", "t [s]", "x1");
    let mut x2 = Panel::new("x2 predictions, trial 0", "t [s]", "x2");
    let truth_xy: Vec<(f64, f64)> = truth.rows.iter().map(|r| (r.x_true[0], r.x_true[1])).collect();
    phase.series.push(Series::line("true", "#000000", truth_xy));
    x1.series.push(Series::line("true", "#000000", truth.rows.iter().map(|r| (r.t, r.x_true[0])).collect()));
    x2.series.push(Series::line("true", "#000000", truth.rows.iter().map(|r| (r.t, r.x_true[1])).collect()));
    for kind in &m.controllers {
        let a = tab.column(&format!("{}[0]", kind.name()))?;
        let b = tab.column(&format!("{}[1]", kind.name()))?;
        let broken = |f: &dyn Fn(usize) -> (f64, f64)| -> Vec<(f64, f64)> {
            let mut v = Vec::new();
            for r in 0..tab.rows() {
                if step[r] == 0.0 && r > 0 {
                    v.push((f64::NAN, f64::NAN));
                }
                v.push(f(r));
            }
            v
        };
        let c = kind_color(*kind);
        let mut s = Series::line(kind.name(), c, broken(&|r| (a[r], b[r])));
        s.dashed = true;
        phase.series.push(s);
        x1.series.push(Series::line(kind.name(), c, broken(&|r| (t[r], a[r]))));
        x2.series.push(Series::line(kind.name(), c, broken(&|r| (t[r], b[r]))));
    }
    Ok(vec![
        write(dir, "phase_portrait.svg", &[phase], 1)?,
        write(dir, "prediction_timeseries.svg", &[x1, x2], 1)?,
    ])
}

fn xz_overlay(dir: &Path, m: &Manifest) -> Result<PathBuf> {
    let mut panels = Vec::new();
    for kind in &m.controllers {
        let mut p = Panel::new(&format!("{} x-z paths", kind.name()), "x [m]", "z [m]");
        p.equal_aspect = true;
        let files = m.traces.get(kind.name()).map(Vec::as_slice).unwrap_or(&[]);
        for (i, f) in files.iter().take(10).enumerate() {
            let tr = RolloutTrace::read_csv(&resolve(dir, f))?;
            if i == 0 {
                let mut r = Series::line("reference", "#7f7f7f", tr.rows.iter().map(|r| (r.x_ref[0], r.x_ref[2])).collect());
                r.dashed = true;
                p.series.push(r);
            }
            let label = if i == 0 { kind.name() } else { "" };
            p.series.push(Series::line(label, kind_color(*kind), tr.rows.iter().map(|r| (r.x_true[0], r.x_true[2])).collect()));
        }
        panels.push(p);
    }
    let cols = panels.len();
    write(dir, "xz_overlay.svg", &panels, cols)
}

/// Draws the figures of the run in `dir` from its summary and trial files.
pub fn plot(dir: &Path) -> Result<Vec<PathBuf>> {
    let m = Manifest::load(dir)?;
    let summary = MetricsSummary::load(dir)?;
    match m.experiment {
        ExperimentKind::VdpPredict => vdp_plots(dir, &m),
        ExperimentKind::CartpoleStab => {
            let panels = banded_panels(&summary, &[("abs_p", "|p| [m]"), ("abs_theta", "|theta| [rad]")]);
            Ok(vec![write(dir, "stabilization_errors.svg", &panels, 1)?])
        }
        ExperimentKind::QuadStab => {
            let panels = banded_panels(
                &summary,
                &[("abs_x", "|x error| [m]"), ("abs_z", "|z error| [m]"), ("euclidean", "position error [m]")],
            );
            Ok(vec![write(dir, "regulation_errors.svg", &panels, 1)?])
        }
        ExperimentKind::QuadTrack => {
            let panels = banded_panels(
                &summary,
                &[("abs_x", "|x error| [m]"), ("abs_z", "|z error| [m]"), ("euclidean", "position error [m]")],
            );
            Ok(vec![write(dir, "tracking_errors.svg", &panels, 1)?, xz_overlay(dir, &m)?])
        }
        ExperimentKind::MetaTrain => Err(Error::Config("meta-training runs have nothing to plot".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_stable_and_breaks_lines() {
        let mut p = Panel::new("a<b", "t", "y");
        p.series.push(Series::line("s", "#000000", vec![(0.0, 0.0), (1.0, 1.0), (f64::NAN, f64::NAN), (2.0, 0.5)]));
        let a = render(&[p.clone()], 1);
        assert_eq!(a, render(&[p], 1));
        assert!(a.contains("a&lt;b"));
        assert_eq!(a.matches(" M").count() + a.matches("\"M").count(), 2);
        assert!(a.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_panel_renders() {
        let s = render(&[Panel::new("empty", "x", "y")], 1);
        assert!(s.starts_with("<svg"));
    }
}
