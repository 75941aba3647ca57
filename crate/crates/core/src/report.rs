//! SVG 1.1 figures.
//!
//! [`render_report`] produces one box-plot figure per (metric, target) and a
//! single figure of W2 between protocols across targets. Boxes span the
//! quartiles, whiskers run from min to max, and the Retrain quartiles are
//! drawn as dashed reference lines.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::analysis::{analyze, AnalysisEntry, AnalysisSummary};
use crate::datagen::ForgetTarget;
use crate::error::{Error, Result};
use crate::stats::BoxSummary;
use crate::sweep::{MetricName, MetricRecord, Protocol};
use crate::unlearners::MethodKind;

#[derive(Clone, Debug, PartialEq)]
pub struct Figure {
    pub file_name: String,
    pub svg: String,
}

const PROTOCOLS: [Protocol; 2] = [Protocol::CommonPractice, Protocol::Recommended];
const PROTOCOL_COLORS: [&str; 2] = ["#4477aa", "#ee6677"];
const METHOD_COLORS: [&str; 6] = ["#4477aa", "#66ccee", "#228833", "#ccbb44", "#ee6677", "#aa3377"];

const MARGIN_LEFT: f64 = 60.0;
const MARGIN_TOP: f64 = 40.0;
const PLOT_H: f64 = 300.0;
const MARGIN_BOTTOM: f64 = 70.0;
const SLOT_W: f64 = 90.0;
const BOX_W: f64 = 24.0;

pub fn render_report(records: &[MetricRecord]) -> Result<Vec<Figure>> {
    let summary = analyze(records)?;
    render_summary(&summary)
}

pub fn render_summary(summary: &AnalysisSummary) -> Result<Vec<Figure>> {
    if summary.entries.is_empty() {
        return Err(Error::Results("nothing to plot".into()));
    }
    let targets: BTreeSet<ForgetTarget> = summary.entries.iter().map(entry_target).collect();
    let mut figures = Vec::new();
    for metric in MetricName::ALL {
        for &target in &targets {
            figures.push(box_figure(summary, metric, target));
        }
    }
    figures.push(w2_figure(summary, &targets));
    Ok(figures)
}

fn entry_target(e: &AnalysisEntry) -> ForgetTarget {
    ForgetTarget {
        kind: e.target_kind,
        id: e.target_id,
    }
}

fn target_label(t: ForgetTarget) -> String {
    format!("{}-{}", t.kind.as_str(), t.id)
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64, title: &str) -> Self {
        let mut s = Svg {
            body: String::new(),
            width,
            height,
        };
        let _ = writeln!(s.body, "<title>{}</title>", escape(title));
        let _ = writeln!(
            s.body,
            r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##
        );
        s
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" {extra}/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: u32, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-family="sans-serif" font-size="{size}">{}</text>"#,
            escape(content)
        );
    }

    fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n\
             <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             {body}</svg>\n",
            w = self.width,
            h = self.height,
            body = self.body
        )
    }
}

/// Vertical axis on [lo, hi] mapped onto the plot band starting at `top`.
struct YAxis {
    lo: f64,
    hi: f64,
    top: f64,
}

impl YAxis {
    fn y(&self, v: f64) -> f64 {
        let span = if self.hi > self.lo { self.hi - self.lo } else { 1.0 };
        self.top + PLOT_H * (1.0 - (v - self.lo) / span)
    }

    fn draw(&self, svg: &mut Svg, x_left: f64, x_right: f64, label: &str) {
        for k in 0..=5 {
            let v = self.lo + (self.hi - self.lo) * k as f64 / 5.0;
            let y = self.y(v);
            svg.line(x_left, y, x_right, y, "#dddddd", r#"stroke-width="1""#);
            svg.text(x_left - 6.0, y + 4.0, "end", 11, &format!("{v:.2}"));
        }
        svg.line(
            x_left,
            self.top,
            x_left,
            self.top + PLOT_H,
            "#000000",
            r#"stroke-width="1""#,
        );
        let cy = self.top + PLOT_H / 2.0;
        let _ = writeln!(
            svg.body,
            r#"<text x="14" y="{cy:.2}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {cy:.2})">{}</text>"#,
            escape(label)
        );
    }
}

fn methods_present(entries: &[&AnalysisEntry]) -> Vec<MethodKind> {
    MethodKind::ALL
        .into_iter()
        .filter(|m| entries.iter().any(|e| e.method == *m))
        .collect()
}

fn box_figure(summary: &AnalysisSummary, metric: MetricName, target: ForgetTarget) -> Figure {
    let entries: Vec<&AnalysisEntry> = summary
        .entries
        .iter()
        .filter(|e| e.metric == metric && entry_target(e) == target)
        .collect();
    let methods = methods_present(&entries);
    let width = MARGIN_LEFT + SLOT_W * methods.len() as f64 + 20.0;
    let height = MARGIN_TOP + PLOT_H + MARGIN_BOTTOM;
    let title = format!("{} on {}", metric.as_str(), target_label(target));
    let mut svg = Svg::new(width, height, &title);
    svg.text(width / 2.0, 22.0, "middle", 14, &title);
    let axis = YAxis {
        lo: 0.0,
        hi: 1.0,
        top: MARGIN_TOP,
    };
    let x_right = width - 20.0;
    axis.draw(&mut svg, MARGIN_LEFT, x_right, "accuracy");

    for (p, protocol) in PROTOCOLS.iter().enumerate() {
        let Some(r) = entries
            .iter()
            .find(|e| e.method == MethodKind::Retrain && e.protocol == *protocol)
        else {
            continue;
        };
        let _ = writeln!(
            svg.body,
            r#"<g class="retrain-reference" data-protocol="{}">"#,
            protocol.as_str()
        );
        for (name, v) in [
            ("q25", r.quantiles.q25),
            ("q50", r.quantiles.q50),
            ("q75", r.quantiles.q75),
        ] {
            let y = axis.y(v);
            let _ = writeln!(
                svg.body,
                r#"<line x1="{MARGIN_LEFT:.2}" y1="{y:.2}" x2="{x_right:.2}" y2="{y:.2}" stroke="{}" stroke-width="1" stroke-dasharray="5,4" opacity="0.6"><title>retrain {} {name} = {v}</title></line>"#,
                PROTOCOL_COLORS[p],
                protocol.as_str()
            );
        }
        svg.body.push_str("</g>\n");
    }

    for (slot, method) in methods.iter().enumerate() {
        let x0 = MARGIN_LEFT + SLOT_W * slot as f64;
        let centre = x0 + SLOT_W / 2.0;
        for (p, protocol) in PROTOCOLS.iter().enumerate() {
            if let Some(e) = entries.iter().find(|e| e.method == *method && e.protocol == *protocol) {
                let cx = centre + (p as f64 - 0.5) * (BOX_W + 6.0);
                draw_box(&mut svg, &axis, cx, &e.quantiles, PROTOCOL_COLORS[p], &box_tooltip(e));
            }
        }
        svg.text(centre, MARGIN_TOP + PLOT_H + 18.0, "middle", 12, method.as_str());
    }

    let legend_y = MARGIN_TOP + PLOT_H + 44.0;
    for (p, protocol) in PROTOCOLS.iter().enumerate() {
        let x = MARGIN_LEFT + 180.0 * p as f64;
        let _ = writeln!(
            svg.body,
            r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{}"/>"#,
            legend_y - 10.0,
            PROTOCOL_COLORS[p]
        );
        svg.text(x + 16.0, legend_y, "start", 11, protocol.as_str());
    }
    svg.text(x_right, legend_y, "end", 11, "dashed: retrain quartiles");

    Figure {
        file_name: format!("{}__{}.svg", metric.as_str(), target_label(target)),
        svg: svg.finish(),
    }
}

fn box_tooltip(e: &AnalysisEntry) -> String {
    let q = &e.quantiles;
    format!(
        "{} {} (I={}, J={}): min={} q25={} q50={} q75={} max={}",
        e.method,
        e.protocol.as_str(),
        e.n_train_seeds,
        e.n_unlearn_seeds,
        q.min,
        q.q25,
        q.q50,
        q.q75,
        q.max
    )
}

fn draw_box(svg: &mut Svg, axis: &YAxis, cx: f64, q: &BoxSummary, color: &str, tooltip: &str) {
    let half = BOX_W / 2.0;
    let (y_min, y_max) = (axis.y(q.min), axis.y(q.max));
    let (y25, y50, y75) = (axis.y(q.q25), axis.y(q.q50), axis.y(q.q75));
    let _ = writeln!(svg.body, r#"<g class="box"><title>{}</title>"#, escape(tooltip));
    svg.line(cx, y_max, cx, y75, "#333333", r#"stroke-width="1""#);
    svg.line(cx, y25, cx, y_min, "#333333", r#"stroke-width="1""#);
    svg.line(
        cx - half / 2.0,
        y_max,
        cx + half / 2.0,
        y_max,
        "#333333",
        r#"stroke-width="1""#,
    );
    svg.line(
        cx - half / 2.0,
        y_min,
        cx + half / 2.0,
        y_min,
        "#333333",
        r#"stroke-width="1""#,
    );
    let _ = writeln!(
        svg.body,
        r##"<rect x="{:.2}" y="{y75:.2}" width="{BOX_W:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5" stroke="#333333" stroke-width="1"/>"##,
        cx - half,
        (y25 - y75).max(0.0)
    );
    svg.line(cx - half, y50, cx + half, y50, "#000000", r#"stroke-width="2""#);
    svg.body.push_str("</g>\n");
}

fn w2_figure(summary: &AnalysisSummary, targets: &BTreeSet<ForgetTarget>) -> Figure {
    let paired: Vec<&AnalysisEntry> = summary
        .entries
        .iter()
        .filter(|e| e.protocol == Protocol::CommonPractice && e.w2_vs_other_protocol.is_some())
        .collect();
    let methods = methods_present(&summary.entries.iter().collect::<Vec<_>>());
    let group_w = (methods.len() as f64 * 14.0 + 20.0).max(SLOT_W);
    let panel_w = group_w * targets.len() as f64;
    let width = MARGIN_LEFT + panel_w + 20.0;
    let panel_h = PLOT_H + 60.0;
    let height = MARGIN_TOP + panel_h * MetricName::ALL.len() as f64 + 30.0;
    let title = "W2 between common-practice and recommended protocols";
    let mut svg = Svg::new(width, height, title);
    svg.text(width / 2.0, 22.0, "middle", 14, title);

    let hi = paired
        .iter()
        .filter_map(|e| e.w2_vs_other_protocol)
        .fold(0.0f64, f64::max)
        .max(1e-3);
    for (row, metric) in MetricName::ALL.into_iter().enumerate() {
        let top = MARGIN_TOP + 20.0 + panel_h * row as f64;
        let axis = YAxis { lo: 0.0, hi, top };
        axis.draw(&mut svg, MARGIN_LEFT, MARGIN_LEFT + panel_w, "W2");
        svg.text(MARGIN_LEFT + panel_w / 2.0, top - 6.0, "middle", 12, metric.as_str());
        for (g, &target) in targets.iter().enumerate() {
            let gx = MARGIN_LEFT + group_w * g as f64 + 10.0;
            for (k, method) in methods.iter().enumerate() {
                let Some(e) = paired
                    .iter()
                    .find(|e| e.metric == metric && e.method == *method && entry_target(e) == target)
                else {
                    continue;
                };
                let w2 = e.w2_vs_other_protocol.expect("filtered");
                let y = axis.y(w2);
                let _ = writeln!(
                    svg.body,
                    r#"<rect x="{:.2}" y="{y:.2}" width="12" height="{:.2}" fill="{}"><title>{} {} {}: W2 = {w2}</title></rect>"#,
                    gx + 14.0 * k as f64,
                    (top + PLOT_H - y).max(0.0),
                    METHOD_COLORS[k % METHOD_COLORS.len()],
                    escape(method.as_str()),
                    escape(metric.as_str()),
                    escape(&target_label(target))
                );
            }
            svg.text(
                gx + group_w / 2.0 - 10.0,
                top + PLOT_H + 16.0,
                "middle",
                11,
                &target_label(target),
            );
        }
    }
    let legend_y = height - 12.0;
    for (k, method) in methods.iter().enumerate() {
        let x = MARGIN_LEFT + 90.0 * k as f64;
        let _ = writeln!(
            svg.body,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{}"/>"#,
            legend_y - 9.0,
            METHOD_COLORS[k % METHOD_COLORS.len()]
        );
        svg.text(x + 14.0, legend_y, "start", 10, method.as_str());
    }
    Figure {
        file_name: "w2_summary.svg".into(),
        svg: svg.finish(),
    }
}
