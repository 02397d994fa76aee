//! SVG plots and the XHTML convergence report.
//!
//! Everything is written by hand into strings with fixed-precision number
//! formatting, so identical inputs give byte-identical documents.

use std::fmt::Write as _;

use thiserror::Error;

use crate::information::{Envelope, InformationCurve};
use crate::sampler::{ParameterSummary, PosteriorDraws, PosteriorSummary};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub width: u32,
    pub height: u32,
}

impl PlotSpec {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            width: 900,
            height: 600,
        }
    }

    fn validate(&self) -> Result<(), ReportError> {
        if self.width < 100 || self.height < 100 {
            return Err(ReportError::Contract(format!(
                "plot size {}x{} is below the 100 pixel minimum",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

pub const RHAT_THRESHOLD: f64 = 1.05;
pub const ESS_THRESHOLD: f64 = 400.0;

const CHAIN_COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Rounded tick positions covering `[lo, hi]` with steps of 1, 2 or 5 × 10^k.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let raw = (hi - lo) / target.max(1) as f64;
    let magnitude = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * magnitude)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * magnitude);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Pads a degenerate or tight range so that it has visible width.
fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo < 1e-9 {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Linear map from data coordinates onto a pixel interval.
#[derive(Clone, Copy)]
struct Scale {
    d0: f64,
    d1: f64,
    p0: f64,
    p1: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        self.p0 + (v - self.d0) / (self.d1 - self.d0) * (self.p1 - self.p0)
    }
}

fn open_svg(out: &mut String, spec: &PlotSpec) {
    let _ = write!(
        out,
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" ",
            "font-family=\"sans-serif\" font-size=\"12\">\n",
            "<rect class=\"background\" x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text class=\"title\" x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{t}</text>\n"
        ),
        w = spec.width,
        h = spec.height,
        cx = spec.width / 2,
        t = escape(&spec.title),
    );
}

fn x_axis(out: &mut String, x: Scale, y_px: f64, top_px: f64, label: &str) {
    let _ = writeln!(
        out,
        "<line class=\"axis\" x1=\"{:.2}\" y1=\"{y_px:.2}\" x2=\"{:.2}\" y2=\"{y_px:.2}\" stroke=\"black\"/>",
        x.p0, x.p1
    );
    for t in ticks(x.d0, x.d1, 8) {
        let px = x.map(t);
        let _ = writeln!(
            out,
            "<line class=\"grid\" x1=\"{px:.2}\" y1=\"{top_px:.2}\" x2=\"{px:.2}\" y2=\"{y_px:.2}\" stroke=\"#e0e0e0\"/>"
        );
        let _ = writeln!(
            out,
            "<text class=\"tick\" x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            y_px + 16.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        "<text class=\"axis-label\" x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
        (x.p0 + x.p1) / 2.0,
        y_px + 34.0,
        escape(label)
    );
}

fn y_axis(out: &mut String, y: Scale, x_px: f64, label: &str) {
    let _ = writeln!(
        out,
        "<line class=\"axis\" x1=\"{x_px:.2}\" y1=\"{:.2}\" x2=\"{x_px:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        y.p0, y.p1
    );
    for t in ticks(y.d0, y.d1, 5) {
        let py = y.map(t);
        let _ = writeln!(
            out,
            "<text class=\"tick\" x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            x_px - 6.0,
            py + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        out,
        "<text class=\"axis-label\" x=\"14\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">{}</text>",
        (y.p0 + y.p1) / 2.0,
        (y.p0 + y.p1) / 2.0,
        escape(label)
    );
}

fn polyline(out: &mut String, class: &str, xs: &[f64], ys: &[f64], x: Scale, y: Scale, style: &str) {
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(a, b)| format!("{:.2},{:.2}", x.map(*a), y.map(*b)))
        .collect();
    let _ = writeln!(
        out,
        "<polyline class=\"{class}\" points=\"{}\" fill=\"none\" {style}/>",
        points.join(" ")
    );
}

/// One row per parameter, top to bottom in the given order: a dot at the
/// median, a thick bar over the 50% interval and a thin bar over the 90%
/// interval.
pub fn render_interval_plot(parameters: &[ParameterSummary], spec: &PlotSpec) -> Result<String, ReportError> {
    spec.validate()?;
    if parameters.is_empty() {
        return Err(ReportError::Contract("interval plot needs at least one parameter".into()));
    }
    for p in parameters {
        if ![p.median, p.ci50.0, p.ci50.1, p.ci90.0, p.ci90.1].iter().all(|v| v.is_finite()) {
            return Err(ReportError::Contract(format!("{} has non-finite summary values", p.name)));
        }
    }
    let lo = parameters.iter().map(|p| p.ci90.0).fold(f64::INFINITY, f64::min);
    let hi = parameters.iter().map(|p| p.ci90.1).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = padded(lo, hi);
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let (left, right, top, bottom) = (140.0, w - 30.0, 44.0, h - 50.0);
    let x = Scale { d0: lo, d1: hi, p0: left, p1: right };
    let row = (bottom - top) / parameters.len() as f64;

    let mut out = String::new();
    open_svg(&mut out, spec);
    x_axis(&mut out, x, bottom, top, "value");
    for (k, p) in parameters.iter().enumerate() {
        let cy = top + (k as f64 + 0.5) * row;
        let _ = writeln!(
            out,
            "<text class=\"label\" x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            left - 8.0,
            cy + 4.0,
            escape(&p.name)
        );
        let _ = writeln!(
            out,
            "<line class=\"ci90\" x1=\"{:.2}\" y1=\"{cy:.2}\" x2=\"{:.2}\" y2=\"{cy:.2}\" stroke=\"#1f5fbf\" stroke-width=\"1.5\"/>",
            x.map(p.ci90.0),
            x.map(p.ci90.1)
        );
        let _ = writeln!(
            out,
            "<line class=\"ci50\" x1=\"{:.2}\" y1=\"{cy:.2}\" x2=\"{:.2}\" y2=\"{cy:.2}\" stroke=\"#1f5fbf\" stroke-width=\"5\"/>",
            x.map(p.ci50.0),
            x.map(p.ci50.1)
        );
        let _ = writeln!(
            out,
            "<circle class=\"median\" cx=\"{:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"#0b2f6b\"/>",
            x.map(p.median)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn check_curve(curve: &InformationCurve) -> Result<(), ReportError> {
    if curve.grid.is_empty() || curve.grid.len() != curve.values.len() {
        return Err(ReportError::Contract("curve is empty or has mismatched lengths".into()));
    }
    if !curve.grid.iter().chain(&curve.values).all(|v| v.is_finite()) {
        return Err(ReportError::Contract("curve has non-finite values".into()));
    }
    Ok(())
}

fn curve_range(curves: &[&InformationCurve]) -> (f64, f64, f64) {
    let lo = curves.iter().flat_map(|c| c.grid.first()).copied().fold(f64::INFINITY, f64::min);
    let hi = curves.iter().flat_map(|c| c.grid.last()).copied().fold(f64::NEG_INFINITY, f64::max);
    let top = curves.iter().flat_map(|c| c.values.iter()).copied().fold(0.0, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
    (lo, hi, if top > 0.0 { top * 1.05 } else { 1.0 })
}

/// Small multiples, one panel per labelled curve, sharing both axes. With
/// envelopes (one per curve) each panel also gets a shaded band.
pub fn render_curve_grid(
    curves: &[(String, InformationCurve)],
    envelopes: Option<&[Envelope]>,
    spec: &PlotSpec,
) -> Result<String, ReportError> {
    spec.validate()?;
    if curves.is_empty() {
        return Err(ReportError::Contract("curve grid needs at least one curve".into()));
    }
    for (_, c) in curves {
        check_curve(c)?;
    }
    if let Some(env) = envelopes {
        if env.len() != curves.len() {
            return Err(ReportError::Contract("one envelope per curve is required".into()));
        }
    }
    let refs: Vec<&InformationCurve> = curves.iter().map(|(_, c)| c).collect();
    let (lo, hi, mut top) = curve_range(&refs);
    if let Some(env) = envelopes {
        let env_top = env.iter().flat_map(|e| e.upper.iter()).copied().fold(0.0, f64::max);
        top = top.max(env_top * 1.05);
    }
    let n = curves.len();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let (area_top, area_left) = (40.0, 10.0);
    let cell_w = (w - 2.0 * area_left) / cols as f64;
    let cell_h = (h - area_top - 10.0) / rows as f64;

    let mut out = String::new();
    open_svg(&mut out, spec);
    for (k, (label, curve)) in curves.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        let x0 = area_left + c as f64 * cell_w;
        let y0 = area_top + r as f64 * cell_h;
        let x = Scale { d0: lo, d1: hi, p0: x0 + 8.0, p1: x0 + cell_w - 8.0 };
        let y = Scale { d0: 0.0, d1: top, p0: y0 + cell_h - 8.0, p1: y0 + 18.0 };
        let _ = writeln!(out, "<g class=\"panel\">");
        let _ = writeln!(
            out,
            "<rect class=\"frame\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#c0c0c0\"/>",
            x0 + 2.0,
            y0 + 2.0,
            cell_w - 4.0,
            cell_h - 4.0
        );
        let _ = writeln!(
            out,
            "<text class=\"label\" x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            x0 + cell_w / 2.0,
            y0 + 14.0,
            escape(label)
        );
        if let Some(env) = envelopes.map(|e| &e[k]) {
            let upper = curve.grid.iter().zip(&env.upper).map(|(t, v)| format!("{:.2},{:.2}", x.map(*t), y.map(*v)));
            let lower = curve
                .grid
                .iter()
                .zip(&env.lower)
                .rev()
                .map(|(t, v)| format!("{:.2},{:.2}", x.map(*t), y.map(*v)));
            let points: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(
                out,
                "<polygon class=\"envelope\" points=\"{}\" fill=\"#1f5fbf\" fill-opacity=\"0.2\" stroke=\"none\"/>",
                points.join(" ")
            );
        }
        polyline(&mut out, "curve", &curve.grid, &curve.values, x, y, "stroke=\"#1f5fbf\" stroke-width=\"1.5\"");
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Test information over θ with a dashed vertical line per ability.
/// Abilities outside the plotted range are drawn at the nearest edge and
/// noted in a warning line.
pub fn render_test_info(
    curve: &InformationCurve,
    abilities: &[(String, f64)],
    spec: &PlotSpec,
) -> Result<String, ReportError> {
    spec.validate()?;
    check_curve(curve)?;
    let (lo, hi, top) = curve_range(&[curve]);
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let (left, right, plot_top, bottom) = (60.0, w - 30.0, 44.0, h - 60.0);
    let x = Scale { d0: lo, d1: hi, p0: left, p1: right };
    let y = Scale { d0: 0.0, d1: top, p0: bottom, p1: plot_top };

    let mut out = String::new();
    open_svg(&mut out, spec);
    x_axis(&mut out, x, bottom, plot_top, "ability");
    y_axis(&mut out, y, left, "test information");
    polyline(&mut out, "curve", &curve.grid, &curve.values, x, y, "stroke=\"black\" stroke-width=\"2\"");

    let mut clipped = Vec::new();
    for (k, (label, theta)) in abilities.iter().enumerate() {
        let shown = if theta.is_nan() { lo } else { theta.clamp(lo, hi) };
        if shown != *theta {
            clipped.push(format!("{label} ({})", tick_label(*theta)));
        }
        let px = x.map(shown);
        let color = CHAIN_COLORS[k % CHAIN_COLORS.len()];
        let _ = writeln!(
            out,
            "<line class=\"ability\" x1=\"{px:.2}\" y1=\"{plot_top:.2}\" x2=\"{px:.2}\" y2=\"{bottom:.2}\" stroke=\"{color}\" stroke-dasharray=\"6 4\"/>"
        );
        // stagger labels so neighbours do not overprint
        let ly = plot_top + 12.0 + (k % 6) as f64 * 13.0;
        let _ = writeln!(
            out,
            "<text class=\"ability-label\" x=\"{:.2}\" y=\"{ly:.2}\" fill=\"{color}\">{}</text>",
            px + 3.0,
            escape(label)
        );
    }
    if !clipped.is_empty() {
        let _ = writeln!(
            out,
            "<text class=\"warning\" x=\"{left:.2}\" y=\"{:.2}\" fill=\"#b00020\">outside plotted range, drawn at edge: {}</text>",
            h - 12.0,
            escape(&clipped.join(", "))
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Every `stride`-th draw so a thumbnail has at most `max_points` per chain.
fn thinned(trace: &[f64], max_points: usize) -> (Vec<f64>, Vec<f64>) {
    let stride = trace.len().div_ceil(max_points).max(1);
    trace
        .iter()
        .enumerate()
        .step_by(stride)
        .map(|(i, v)| (i as f64, *v))
        .unzip()
}

fn trace_thumbnail(draws: &PosteriorDraws, param: usize) -> String {
    let (w, h) = (240.0, 60.0);
    let chains = draws.chains_for(param);
    let lo = chains.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let hi = chains.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = padded(lo, hi);
    let x = Scale { d0: 0.0, d1: (draws.n_draws().max(2) - 1) as f64, p0: 2.0, p1: w - 2.0 };
    let y = Scale { d0: lo, d1: hi, p0: h - 2.0, p1: 2.0 };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" class=\"trace\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    for (c, trace) in chains.iter().enumerate() {
        let (xs, ys) = thinned(trace, 200);
        let style = format!(
            "stroke=\"{}\" stroke-width=\"0.8\" data-chain=\"{c}\"",
            CHAIN_COLORS[c % CHAIN_COLORS.len()]
        );
        polyline(&mut out, "chain", &xs, &ys, x, y, &style);
    }
    out.push_str("</svg>");
    out
}

fn fmt_diag(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.decimals$}"))
}

/// Verdict and reasons for a fitted posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub high_rhat: Vec<String>,
    pub low_ess: Vec<String>,
    pub degenerate: Vec<String>,
    pub divergences: usize,
}

pub fn verdict(summary: &PosteriorSummary) -> Verdict {
    let names = |pred: &dyn Fn(&ParameterSummary) -> bool| -> Vec<String> {
        summary.parameters.iter().filter(|p| pred(p)).map(|p| p.name.clone()).collect()
    };
    let high_rhat = names(&|p| p.rhat.is_some_and(|r| r > RHAT_THRESHOLD));
    let low_ess = names(&|p| p.ess_bulk.is_some_and(|e| e < ESS_THRESHOLD));
    let degenerate = names(&|p| p.rhat.is_none() || p.ess_bulk.is_none());
    let pass = high_rhat.is_empty() && low_ess.is_empty() && summary.divergence_count == 0;
    Verdict {
        pass,
        high_rhat,
        low_ess,
        degenerate,
        divergences: summary.divergence_count,
    }
}

/// Standalone XHTML page: verdict, a diagnostics table, degenerate
/// parameters, and trace thumbnails with one colour per chain.
pub fn convergence_report(summary: &PosteriorSummary, draws: &PosteriorDraws) -> Result<String, ReportError> {
    let same_names = summary.parameters.len() == draws.dim()
        && summary.parameters.iter().zip(draws.parameter_names()).all(|(p, n)| &p.name == n);
    if !same_names {
        return Err(ReportError::Contract("summary and draws list different parameters".into()));
    }
    let v = verdict(summary);
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!DOCTYPE html>\n");
    out.push_str("<html xmlns=\"http://www.w3.org/1999/xhtml\" lang=\"en\">\n<head>\n<meta charset=\"utf-8\"/>\n");
    out.push_str("<title>Convergence report</title>\n<style>\n");
    out.push_str("body { font-family: sans-serif; margin: 2em; }\n");
    out.push_str("table { border-collapse: collapse; }\n");
    out.push_str("td, th { border: 1px solid #ccc; padding: 2px 8px; text-align: right; }\n");
    out.push_str("td:first-child { text-align: left; }\n.flag { color: #b00020; }\n");
    out.push_str(".verdict { font-size: 1.4em; font-weight: bold; }\n</style>\n</head>\n<body>\n");
    out.push_str("<h1>Convergence report</h1>\n");

    let mut reasons = Vec::new();
    if v.divergences > 0 {
        reasons.push(format!("{} divergent transitions", v.divergences));
    }
    if !v.high_rhat.is_empty() {
        reasons.push(format!("{} parameters with R-hat above {RHAT_THRESHOLD}", v.high_rhat.len()));
    }
    if !v.low_ess.is_empty() {
        reasons.push(format!("{} parameters with bulk ESS below {ESS_THRESHOLD}", v.low_ess.len()));
    }
    if v.pass {
        out.push_str("<p class=\"verdict\" id=\"verdict\">PASS</p>\n");
    } else {
        let _ = writeln!(out, "<p class=\"verdict\" id=\"verdict\">WARN: {}</p>", escape(&reasons.join("; ")));
    }
    let _ = writeln!(
        out,
        "<p>{} chains, {} draws per chain, {} parameters, {} divergent transitions.</p>",
        draws.n_chains(),
        draws.n_draws(),
        draws.dim(),
        v.divergences
    );

    out.push_str("<h2>Diagnostics</h2>\n<table id=\"diagnostics\">\n");
    out.push_str("<tr><th>parameter</th><th>median</th><th>R-hat</th><th>bulk ESS</th><th>flags</th></tr>\n");
    for p in &summary.parameters {
        let mut flags = Vec::new();
        if p.rhat.is_some_and(|r| r > RHAT_THRESHOLD) {
            flags.push("R-hat");
        }
        if p.ess_bulk.is_some_and(|e| e < ESS_THRESHOLD) {
            flags.push("ESS");
        }
        let _ = writeln!(
            out,
            "<tr><td>{}</td><td>{:.3}</td><td>{}</td><td>{}</td><td class=\"flag\">{}</td></tr>",
            escape(&p.name),
            p.median,
            fmt_diag(p.rhat, 4),
            fmt_diag(p.ess_bulk, 0),
            flags.join(" ")
        );
    }
    out.push_str("</table>\n");

    out.push_str("<h2>Degenerate parameters</h2>\n<div id=\"degenerate\">\n");
    if v.degenerate.is_empty() {
        out.push_str("<p>None: every diagnostic is defined.</p>\n");
    } else {
        out.push_str("<p>Diagnostics are undefined for these parameters because their draws do not vary.</p>\n<ul>\n");
        for name in &v.degenerate {
            let _ = writeln!(out, "<li>{}</li>", escape(name));
        }
        out.push_str("</ul>\n");
    }
    out.push_str("</div>\n");

    out.push_str("<h2>Trace plots</h2>\n<p>");
    for c in 0..draws.n_chains() {
        let _ = write!(
            out,
            "<span style=\"color: {}\">chain {c}</span> ",
            CHAIN_COLORS[c % CHAIN_COLORS.len()]
        );
    }
    out.push_str("</p>\n<div id=\"traces\">\n");
    for (k, name) in draws.parameter_names().iter().enumerate() {
        let _ = writeln!(
            out,
            "<figure><figcaption>{}</figcaption>\n{}</figure>",
            escape(name),
            trace_thumbnail(draws, k)
        );
    }
    out.push_str("</div>\n</body>\n</html>\n");
    Ok(out)
}
