//! Per-cycle aggregation of experiment records and SVG curve plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::CycleRecord;
use crate::strategies::StrategyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    AcquisitionRate,
}

impl Metric {
    fn of(self, r: &CycleRecord) -> f64 {
        match self {
            Metric::Accuracy => r.accuracy,
            Metric::AcquisitionRate => r.acquisition_rate,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::Accuracy => "pixel accuracy",
            Metric::AcquisitionRate => "acquisition rate",
        }
    }
}

/// Mean and standard error of one metric per cycle for one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSeries {
    pub strategy: StrategyKind,
    pub cycles: Vec<usize>,
    pub mean: Vec<f64>,
    /// Sample standard deviation over runs divided by sqrt(runs); 0 for a
    /// single run.
    pub stderr: Vec<f64>,
    /// Mean of `mean` over all cycles.
    pub legend_mean: f64,
}

/// Groups records by strategy and cycle. Every (repeat, fold) run of a
/// strategy must cover the same cycles.
pub fn aggregate(records: &[CycleRecord], metric: Metric) -> Result<Vec<CurveSeries>> {
    // strategy -> run -> cycle -> value
    let mut runs: BTreeMap<StrategyKind, BTreeMap<(usize, usize), BTreeMap<usize, f64>>> = BTreeMap::new();
    for r in records {
        let run = runs.entry(r.strategy).or_default().entry((r.repeat, r.fold)).or_default();
        if run.insert(r.cycle, metric.of(r)).is_some() {
            return Err(Error::Domain(format!(
                "{}: duplicate record for repeat {} fold {} cycle {}",
                r.strategy, r.repeat, r.fold, r.cycle
            )));
        }
    }
    let mut out = Vec::with_capacity(runs.len());
    for (strategy, by_run) in runs {
        let mut iter = by_run.values();
        let first: Vec<usize> = iter.next().map(|m| m.keys().copied().collect()).unwrap_or_default();
        if iter.any(|m| !m.keys().copied().eq(first.iter().copied())) {
            return Err(Error::Domain(format!("{strategy}: runs cover different cycle ranges")));
        }
        let n = by_run.len() as f64;
        let (mut mean, mut stderr) = (Vec::new(), Vec::new());
        for c in &first {
            let vals: Vec<f64> = by_run.values().map(|m| m[c]).collect();
            let m = vals.iter().sum::<f64>() / n;
            let se = if vals.len() < 2 {
                0.0
            } else {
                (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
            };
            mean.push(m);
            stderr.push(se);
        }
        let legend_mean = mean.iter().sum::<f64>() / mean.len() as f64;
        out.push(CurveSeries {
            strategy,
            cycles: first,
            mean,
            stderr,
            legend_mean,
        });
    }
    Ok(out)
}

pub const SVG_WIDTH: f64 = 640.0;
pub const SVG_HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;

fn colour(s: StrategyKind) -> &'static str {
    match s {
        StrategyKind::Rs => "#7f7f7f",
        StrategyKind::Cs => "#1f77b4",
        StrategyKind::Us => "#d62728",
    }
}

/// Data-to-pixel mapping of a plot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Axes {
    pub fn fit(series: &[CurveSeries]) -> Result<Self> {
        let points = || series.iter().flat_map(|s| s.cycles.iter().copied());
        let (x_min, x_max) = match (points().min(), points().max()) {
            (Some(a), Some(b)) => (a as f64, b as f64),
            _ => return Err(Error::Domain("nothing to plot".into())),
        };
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for s in series {
            for (m, e) in s.mean.iter().zip(&s.stderr) {
                y_min = y_min.min(m - e);
                y_max = y_max.max(m + e);
            }
        }
        if !(y_min.is_finite() && y_max.is_finite()) {
            return Err(Error::Domain("non-finite values".into()));
        }
        let pad = ((y_max - y_min) * 0.05).max(1e-3);
        let (x_min, x_max) = if x_max > x_min { (x_min, x_max) } else { (x_min - 1.0, x_max + 1.0) };
        Ok(Self {
            x_min,
            x_max,
            y_min: y_min - pad,
            y_max: y_max + pad,
        })
    }

    pub fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_min) / (self.x_max - self.x_min) * (SVG_WIDTH - LEFT - RIGHT)
    }

    pub fn py(&self, y: f64) -> f64 {
        let h = SVG_HEIGHT - TOP - BOTTOM;
        TOP + h - (y - self.y_min) / (self.y_max - self.y_min) * h
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One polyline per strategy with a shaded mean ± standard error band,
/// axis ticks and a legend of per-strategy means. Output depends only on
/// `series`, `title` and `metric`.
pub fn render_svg(series: &[CurveSeries], title: &str, metric: Metric) -> Result<String> {
    let ax = Axes::fit(series)?;
    let mut s = String::new();
    let w = |s: &mut String, line: String| {
        s.push_str(&line);
        s.push('\n');
    };
    w(&mut s, format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" font-family="sans-serif" font-size="11">"#
    ));
    w(&mut s, format!(r##"<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="#ffffff"/>"##));
    w(&mut s, format!(
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + SVG_WIDTH - RIGHT) / 2.0,
        xml_escape(title)
    ));

    // axes and ticks
    let (x0, x1, y0, y1) = (LEFT, SVG_WIDTH - RIGHT, TOP, SVG_HEIGHT - BOTTOM);
    w(&mut s, r##"<g id="axes" stroke="#000000" fill="none">"##.into());
    w(&mut s, format!(r#"<line x1="{x0:.1}" y1="{y1:.1}" x2="{x1:.1}" y2="{y1:.1}"/>"#));
    w(&mut s, format!(r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x0:.1}" y2="{y1:.1}"/>"#));
    w(&mut s, "</g>".into());
    let span = (ax.x_max - ax.x_min).round().max(1.0) as usize;
    let step = span.div_ceil(10).max(1);
    let mut c = ax.x_min.ceil() as usize;
    while c as f64 <= ax.x_max {
        let x = ax.px(c as f64);
        w(&mut s, format!(r##"<line x1="{x:.3}" y1="{y1:.1}" x2="{x:.3}" y2="{:.1}" stroke="#000000"/>"##, y1 + 4.0));
        w(&mut s, format!(r#"<text x="{x:.3}" y="{:.1}" text-anchor="middle">{c}</text>"#, y1 + 16.0));
        c += step;
    }
    for t in 0..=5 {
        let v = ax.y_min + (ax.y_max - ax.y_min) * t as f64 / 5.0;
        let y = ax.py(v);
        w(&mut s, format!(r##"<line x1="{:.1}" y1="{y:.3}" x2="{x0:.1}" y2="{y:.3}" stroke="#000000"/>"##, x0 - 4.0));
        w(&mut s, format!(r#"<text x="{:.1}" y="{:.3}" text-anchor="end">{v:.3}</text>"#, x0 - 6.0, y + 4.0));
    }
    w(&mut s, format!(
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">cycle</text>"#,
        (x0 + x1) / 2.0,
        SVG_HEIGHT - 10.0
    ));
    w(&mut s, format!(
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        metric.label()
    ));

    for (idx, sr) in series.iter().enumerate() {
        let col = colour(sr.strategy);
        let upper = sr.cycles.iter().zip(sr.mean.iter().zip(&sr.stderr)).map(|(&c, (m, e))| (c, m + e));
        let lower = sr.cycles.iter().zip(sr.mean.iter().zip(&sr.stderr)).map(|(&c, (m, e))| (c, m - e)).rev();
        let mut band = String::new();
        for (c, v) in upper.chain(lower) {
            let _ = write!(band, "{:.3},{:.3} ", ax.px(c as f64), ax.py(v));
        }
        let mut line = String::new();
        for (&c, &m) in sr.cycles.iter().zip(&sr.mean) {
            let _ = write!(line, "{:.3},{:.3} ", ax.px(c as f64), ax.py(m));
        }
        w(&mut s, format!(
            r#"<polygon class="stderr" data-strategy="{}" points="{}" fill="{col}" fill-opacity="0.2" stroke="none"/>"#,
            sr.strategy,
            band.trim_end()
        ));
        w(&mut s, format!(
            r#"<polyline class="mean" data-strategy="{}" points="{}" fill="none" stroke="{col}" stroke-width="1.5"/>"#,
            sr.strategy,
            line.trim_end()
        ));
        let ly = TOP + 14.0 + 18.0 * idx as f64;
        let lx = SVG_WIDTH - RIGHT + 12.0;
        w(&mut s, format!(
            r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{col}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        ));
        w(&mut s, format!(
            r#"<text class="legend" x="{:.1}" y="{ly:.1}">{} {:.4}</text>"#,
            lx + 24.0,
            sr.strategy,
            sr.legend_mean
        ));
    }
    w(&mut s, "</svg>".into());
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: StrategyKind,
    pub legend_mean_accuracy: f64,
    pub final_accuracy: f64,
    pub final_acquisition_rate: f64,
}

/// One row per strategy: mean accuracy over cycles, and accuracy and
/// acquisition rate at the last cycle.
pub fn summarize(records: &[CycleRecord]) -> Result<Vec<SummaryRow>> {
    let acc = aggregate(records, Metric::Accuracy)?;
    let acq = aggregate(records, Metric::AcquisitionRate)?;
    Ok(acc
        .iter()
        .zip(&acq)
        .map(|(a, q)| SummaryRow {
            strategy: a.strategy,
            legend_mean_accuracy: a.legend_mean,
            final_accuracy: *a.mean.last().unwrap_or(&f64::NAN),
            final_acquisition_rate: *q.mean.last().unwrap_or(&f64::NAN),
        })
        .collect())
}

pub fn write_summary<W: io::Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
