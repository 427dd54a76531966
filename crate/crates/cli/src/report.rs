//! Plots and the markdown summary. The SVG is written by hand; the figures
//! are simple enough that a plotting dependency is not worth carrying.

use std::fmt::Write as _;
use std::path::Path;

use llmerge_core::did::percent_change;
use llmerge_core::inference::EVENT_STUDY_COLUMNS;
use llmerge_core::io::{csv_reader, Header};
use llmerge_core::Result;

use crate::config::RunConfig;
use crate::pipeline::SummaryRow;

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub lag: i32,
    pub beta: f64,
    pub se: f64,
    pub pointwise: (f64, f64),
    pub band: (f64, f64),
}

pub fn read_event_study(path: &Path) -> Result<Vec<CurvePoint>> {
    let mut rdr = csv_reader(path, b',')?;
    let h = Header::read(path, &mut rdr)?;
    h.expect_exact(&EVENT_STUDY_COLUMNS)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(CurvePoint {
            lag: h.parse(&rec, 0)?,
            beta: h.parse(&rec, 1)?,
            se: h.parse(&rec, 2)?,
            pointwise: (h.parse(&rec, 3)?, h.parse(&rec, 4)?),
            band: (h.parse(&rec, 5)?, h.parse(&rec, 6)?),
        });
    }
    Ok(out)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, a: f64, b: f64) -> Self {
        let (lo, hi) = if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        };
        Scale { lo, hi, a, b }
    }

    fn padded(lo: f64, hi: f64, a: f64, b: f64) -> Self {
        let pad = 0.08 * (hi - lo).max(1e-6);
        Scale::new(lo - pad, hi + pad, a, b)
    }

    fn at(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn y_ticks(out: &mut String, y: &Scale) {
    for k in 0..=4 {
        let v = y.lo + (y.hi - y.lo) * k as f64 / 4.0;
        let py = y.at(v);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" x2="{:.1}" y1="{py:.1}" y2="{py:.1}" stroke="#eee"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            py + 4.0
        );
    }
}

/// Event-study plot: shaded simultaneous band, pointwise error bars, a zero
/// line and a dashed marker at the event year.
pub fn event_study_svg(title: &str, points: &[CurvePoint]) -> String {
    let mut out = String::new();
    header(&mut out, title);
    if points.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let lmin = points.iter().map(|p| p.lag).min().unwrap_or(0).min(0);
    let lmax = points.iter().map(|p| p.lag).max().unwrap_or(0).max(0);
    let x = Scale::new(lmin as f64 - 0.5, lmax as f64 + 0.5, LEFT, W - RIGHT);
    let lo = points
        .iter()
        .map(|p| p.band.0.min(p.pointwise.0))
        .fold(0.0, f64::min);
    let hi = points
        .iter()
        .map(|p| p.band.1.max(p.pointwise.1))
        .fold(0.0, f64::max);
    let y = Scale::padded(lo, hi, H - BOTTOM, TOP);
    y_ticks(&mut out, &y);

    let upper: Vec<String> = points
        .iter()
        .map(|p| format!("{:.1},{:.1}", x.at(p.lag as f64), y.at(p.band.1)))
        .collect();
    let lower: Vec<String> = points
        .iter()
        .rev()
        .map(|p| format!("{:.1},{:.1}", x.at(p.lag as f64), y.at(p.band.0)))
        .collect();
    let _ = writeln!(
        out,
        r##"<polygon points="{} {}" fill="#9ecae1" fill-opacity="0.45" stroke="none"/>"##,
        upper.join(" "),
        lower.join(" ")
    );
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#444"/>"##,
        W - RIGHT,
        y.at(0.0),
        y.at(0.0)
    );
    let x0 = x.at(-0.5);
    let _ = writeln!(
        out,
        r##"<line x1="{x0:.1}" x2="{x0:.1}" y1="{TOP}" y2="{:.1}" stroke="#888" stroke-dasharray="4 3"/>"##,
        H - BOTTOM
    );
    for p in points {
        let px = x.at(p.lag as f64);
        let _ = writeln!(
            out,
            r##"<line x1="{px:.1}" x2="{px:.1}" y1="{:.1}" y2="{:.1}" stroke="#08519c" stroke-width="1.5"/><circle cx="{px:.1}" cy="{:.1}" r="3.5" fill="#08519c"/>"##,
            y.at(p.pointwise.0),
            y.at(p.pointwise.1),
            y.at(p.beta)
        );
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 18.0,
            p.lag
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">years relative to event</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 10.0
    );
    out.push_str("</svg>\n");
    out
}

/// Forest plot of the overall effects on log outcomes with their intervals.
pub fn overall_svg(rows: &[SummaryRow]) -> String {
    let ok: Vec<&SummaryRow> = rows
        .iter()
        .filter(|r| r.estimate.is_some() && r.outcome.is_log())
        .collect();
    let row_h = 18.0;
    let label_w = 260.0;
    let height = TOP + BOTTOM + row_h * ok.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">Overall post-event effects (log points)</text>"#,
        W / 2.0
    );
    if ok.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let lo = ok
        .iter()
        .map(|r| r.ci.map_or(r.estimate.unwrap(), |c| c.0))
        .fold(0.0, f64::min);
    let hi = ok
        .iter()
        .map(|r| r.ci.map_or(r.estimate.unwrap(), |c| c.1))
        .fold(0.0, f64::max);
    let x = Scale::padded(lo, hi, label_w, W - RIGHT);
    let _ = writeln!(
        out,
        r##"<line x1="{0:.1}" x2="{0:.1}" y1="{TOP}" y2="{1:.1}" stroke="#444"/>"##,
        x.at(0.0),
        height - BOTTOM
    );
    for (i, r) in ok.iter().enumerate() {
        let py = TOP + row_h * (i as f64 + 0.5);
        let est = r.estimate.unwrap();
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{} / {} / {}</text>"#,
            label_w - 8.0,
            py + 4.0,
            r.outcome,
            r.split,
            r.subpop
        );
        if let Some((a, b)) = r.ci {
            let _ = writeln!(
                out,
                r##"<line x1="{:.1}" x2="{:.1}" y1="{py:.1}" y2="{py:.1}" stroke="#08519c"/>"##,
                x.at(a),
                x.at(b)
            );
        }
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{:.1}" width="6" height="6" fill="#08519c"/>"##,
            x.at(est) - 3.0,
            py - 3.0
        );
    }
    for k in 0..=4 {
        let v = x.lo + (x.hi - x.lo) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#,
            x.at(v),
            height - BOTTOM + 18.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn name<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.digits$}"))
}

pub fn markdown(cfg: &RunConfig, rows: &[SummaryRow]) -> String {
    let b = &cfg.bootstrap;
    let mut out = String::from("# Merger effects on local labor markets\n\n");
    let _ = writeln!(
        out,
        "Anticipation window {} year(s), event window {} years, event type `{}`, weighting `{}`.\n",
        cfg.estimate.zeta,
        cfg.estimate.window,
        name(&cfg.estimate.event_type),
        name(&cfg.estimate.weighting)
    );
    let _ = writeln!(
        out,
        "Inference: clustered multiplier bootstrap by market, {} draws, {} weights, seed {}, alpha {}, {} intervals for the overall effect and sup-t bands for event studies.\n",
        b.draws,
        b.multiplier.as_str(),
        cfg.seed,
        b.alpha,
        name(&b.interval)
    );
    let lags: Vec<String> = cfg.estimate.overall_lags.iter().map(i32::to_string).collect();
    let _ = writeln!(
        out,
        "Overall effect: `{}` average over lags {}.\n",
        name(&cfg.estimate.overall_method),
        lags.join(", ")
    );
    out.push_str("| outcome | employers | workers | markets | treated | estimate | se | interval | % change | status |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let ci =
            r.ci.map_or_else(|| "n/a".to_owned(), |(a, b)| format!("[{a:.4}, {b:.4}]"));
        let pct = r.estimate.filter(|_| r.outcome.is_log()).map(percent_change);
        let status = if r.incomplete && r.status == "ok" {
            "ok (some lags missing)".to_owned()
        } else {
            r.status.clone()
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.outcome,
            r.split,
            r.subpop,
            r.n_markets,
            r.n_treated,
            cell(r.estimate, 4),
            cell(r.se, 4),
            ci,
            cell(pct, 2),
            status
        );
    }
    out.push_str("\nEvent-study figures: `event_study_<outcome>-<split>-<subpop>.svg`. Overall effects: `overall.svg`.\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points() -> Vec<CurvePoint> {
        (-3..=3)
            .filter(|&l| l != -1)
            .map(|l| CurvePoint {
                lag: l,
                beta: if l >= 0 { -0.05 } else { 0.0 },
                se: 0.01,
                pointwise: (-0.02, 0.02),
                band: (-0.03, 0.03),
            })
            .collect()
    }

    #[test]
    fn svg_is_well_formed() {
        let s = event_study_svg("a < b", &points());
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a &lt; b"));
        assert_eq!(s.matches("<circle").count(), 6);
        assert_eq!(s.matches("<polygon").count(), 1);
    }

    #[test]
    fn empty_inputs_still_render() {
        assert!(event_study_svg("x", &[]).ends_with("</svg>\n"));
        assert!(overall_svg(&[]).ends_with("</svg>\n"));
    }
}
