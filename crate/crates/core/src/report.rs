//! Sweep tables and self-contained SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::curvature;
use crate::error::{Error, Result};
use crate::expfam::family_from_angle;
use crate::flow::{self, RateEstimator};
use crate::ground_metric::{Distribution, Graph};
use crate::manifold::StatisticalModel;

/// Slack in the `κ ≤ K` check recorded on each row.
pub const BOUND_TOL: f64 = 1e-6;

/// One configuration of the family × ground-metric sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub family_index: usize,
    pub phi: f64,
    pub omega: [f64; 3],
    pub theta_domain: [f64; 2],
    pub kappa: Option<f64>,
    /// `K` with the second-difference estimator.
    pub k: Option<f64>,
    /// `K` with the log-ratio estimator from the same trajectories.
    pub k_log: Option<f64>,
    pub error: Option<String>,
    pub runtime_ms: u64,
}

impl SweepRow {
    /// `κ ≤ K + 1e-6`; `None` when either value is missing.
    pub fn bound_holds(&self) -> Option<bool> {
        Some(self.kappa? <= self.k? + BOUND_TOL)
    }

    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.kappa.is_some() && self.k.is_some()
    }
}

const SWEEP_HEADER: [&str; 13] = [
    "family_index",
    "phi",
    "omega12",
    "omega23",
    "omega13",
    "theta_min",
    "theta_max",
    "kappa",
    "K",
    "K_log",
    "bound_holds",
    "error",
    "runtime_ms",
];

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Writes the sweep table. Floats use Rust's shortest round-trip formatting, so parsing the
/// file recovers every value exactly.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Precondition("no sweep rows to write".into()));
    }
    let mut w = flow::csv_writer(path)?;
    w.write_record(SWEEP_HEADER).map_err(|e| flow::csv_err(path, e))?;
    for r in rows {
        let rec = [
            r.family_index.to_string(),
            r.phi.to_string(),
            r.omega[0].to_string(),
            r.omega[1].to_string(),
            r.omega[2].to_string(),
            r.theta_domain[0].to_string(),
            r.theta_domain[1].to_string(),
            opt(r.kappa),
            opt(r.k),
            opt(r.k_log),
            r.bound_holds().map_or_else(String::new, |b| b.to_string()),
            r.error.clone().unwrap_or_default(),
            r.runtime_ms.to_string(),
        ];
        w.write_record(&rec).map_err(|e| flow::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::Io { path: path.into(), source: e })
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| flow::csv_err(path, e))?;
    let bad = |what: &str| Error::Config(format!("{}: malformed {what}", path.display()));
    let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
    let onum = |s: &str, what: &str| if s.is_empty() { Ok(None) } else { num(s, what).map(Some) };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| flow::csv_err(path, e))?;
        if rec.len() != SWEEP_HEADER.len() {
            return Err(bad("row length"));
        }
        rows.push(SweepRow {
            family_index: rec[0].parse().map_err(|_| bad("family_index"))?,
            phi: num(&rec[1], "phi")?,
            omega: [num(&rec[2], "omega")?, num(&rec[3], "omega")?, num(&rec[4], "omega")?],
            theta_domain: [num(&rec[5], "theta_min")?, num(&rec[6], "theta_max")?],
            kappa: onum(&rec[7], "kappa")?,
            k: onum(&rec[8], "K")?,
            k_log: onum(&rec[9], "K_log")?,
            error: (!rec[11].is_empty()).then(|| rec[11].to_string()),
            runtime_ms: rec[12].parse().map_err(|_| bad("runtime_ms"))?,
        });
    }
    Ok(rows)
}

/// Which row value colours the family curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotValue {
    Kappa,
    K,
}

impl PlotValue {
    fn get(self, r: &SweepRow) -> Option<f64> {
        match self {
            PlotValue::Kappa => r.kappa,
            PlotValue::K => r.k,
        }
    }

    fn label(self) -> &'static str {
        match self {
            PlotValue::Kappa => "kappa",
            PlotValue::K => "K",
        }
    }
}

/// Blue for `s = 0` to yellow for `s = 1`.
pub fn blue_yellow(s: f64) -> String {
    let s = if s.is_finite() { s.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + s * (b - a)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(30.0, 250.0), lerp(60.0, 220.0), lerp(200.0, 20.0))
}

/// Barycentric projection `p ↦ p₁A + p₂B + p₃C` with `A = (0,0)`, `B = (1,0)`, `C = (½, √3/2)`.
pub fn barycentric(p: &[f64]) -> (f64, f64) {
    (p[1] + 0.5 * p[2], p[2] * 3f64.sqrt() / 2.0)
}

fn omega_key(o: &[f64; 3]) -> [u64; 3] {
    o.map(f64::to_bits)
}

/// Rows grouped by ground metric, in first-appearance order.
fn group_by_omega(rows: &[SweepRow]) -> Vec<([f64; 3], Vec<&SweepRow>)> {
    let mut order: Vec<[f64; 3]> = Vec::new();
    let mut groups: BTreeMap<[u64; 3], Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let key = omega_key(&r.omega);
        if !groups.contains_key(&key) {
            order.push(r.omega);
        }
        groups.entry(key).or_default().push(r);
    }
    order.into_iter().map(|o| (o, groups.remove(&omega_key(&o)).unwrap())).collect()
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Svg { body: String::new(), width, height }
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let s = s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif">{s}</text>"#
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, width: f64) {
        let mut d = String::new();
        for (x, y) in pts {
            let _ = write!(d, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#,
            d.trim_end()
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}"/>"#);
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}" stroke="{stroke}"/>"#
        );
    }

    fn write(self, path: &Path) -> Result<()> {
        let doc = format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        );
        std::fs::write(path, doc).map_err(|e| Error::Io { path: path.into(), source: e })
    }
}

fn fmt_num(x: f64) -> String {
    if x == 0.0 || (1e-3..1e4).contains(&x.abs()) {
        format!("{x:.4}")
    } else {
        format!("{x:.3e}")
    }
}

/// One triangle per ground metric; every family is drawn as its curve `θ ↦ p(θ)` over the
/// row's domain, coloured by `value` on a blue (low) to yellow (high) scale.
pub fn plot_simplex_families(rows: &[SweepRow], value: PlotValue, path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Precondition("nothing to plot".into()));
    }
    let groups = group_by_omega(rows);
    let vals: Vec<f64> = rows.iter().filter_map(|r| value.get(r)).collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cols = groups.len().min(5);
    let rows_n = groups.len().div_ceil(cols);
    let (cell, pad) = (220.0, 20.0);
    let mut svg = Svg::new(cols as f64 * cell, rows_n as f64 * cell + 70.0);
    for (gi, (omega, members)) in groups.iter().enumerate() {
        let ox = (gi % cols) as f64 * cell + pad;
        let oy = (gi / cols) as f64 * cell + pad;
        let side = cell - 2.0 * pad;
        let to_px = |(x, y): (f64, f64)| (ox + x * side, oy + side * 0.9 - y * side);
        let tri: Vec<(f64, f64)> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]
            .iter()
            .map(|p| to_px(barycentric(p)))
            .collect();
        svg.polyline(&tri, "#444444", 1.0);
        svg.text(
            ox + side / 2.0,
            oy + side + 5.0,
            11.0,
            "middle",
            &format!("omega = ({}, {}, {})", fmt_num(omega[0]), fmt_num(omega[1]), fmt_num(omega[2])),
        );
        for r in members {
            let Ok(family) = family_from_angle(r.phi) else { continue };
            let [a, b] = r.theta_domain;
            let pts: Vec<(f64, f64)> = (0..=60)
                .map(|i| {
                    let t = a + (b - a) * i as f64 / 60.0;
                    to_px(barycentric(family.probabilities(t).as_slice()))
                })
                .collect();
            let colour = match value.get(r) {
                Some(v) if hi > lo => blue_yellow((v - lo) / (hi - lo)),
                Some(_) => blue_yellow(0.5),
                None => "#bbbbbb".to_string(),
            };
            svg.polyline(&pts, &colour, 1.5);
        }
    }
    // legend
    let ly = rows_n as f64 * cell + 15.0;
    for i in 0..50 {
        let s = i as f64 / 49.0;
        svg.rect(40.0 + 4.0 * i as f64, ly, 4.0, 14.0, &blue_yellow(s), "none");
    }
    svg.text(36.0, ly + 12.0, 11.0, "end", &fmt_num(lo));
    svg.text(248.0, ly + 12.0, 11.0, "start", &fmt_num(hi));
    svg.text(140.0, ly + 32.0, 11.0, "middle", value.label());
    svg.write(path)
}

struct Axes {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = if self.xr.1 > self.xr.0 { (x - self.xr.0) / (self.xr.1 - self.xr.0) } else { 0.5 };
        let sy = if self.yr.1 > self.yr.0 { (y - self.yr.0) / (self.yr.1 - self.yr.0) } else { 0.5 };
        (self.x0 + sx * self.w, self.y0 + self.h - sy * self.h)
    }

    fn frame(&self, svg: &mut Svg, title: &str) {
        svg.rect(self.x0, self.y0, self.w, self.h, "none", "#444444");
        svg.text(self.x0 + self.w / 2.0, self.y0 - 6.0, 11.0, "middle", title);
        svg.text(self.x0 - 4.0, self.y0 + 10.0, 9.0, "end", &fmt_num(self.yr.1));
        svg.text(self.x0 - 4.0, self.y0 + self.h, 9.0, "end", &fmt_num(self.yr.0));
        svg.text(self.x0, self.y0 + self.h + 12.0, 9.0, "start", &fmt_num(self.xr.0));
        svg.text(self.x0 + self.w, self.y0 + self.h + 12.0, 9.0, "end", &fmt_num(self.xr.1));
    }

    /// Draws a series, splitting at missing values and clipping to the y-range.
    fn series(&self, svg: &mut Svg, xs: &[f64], ys: &[Option<f64>], colour: &str) {
        let mut run: Vec<(f64, f64)> = Vec::new();
        let inside = |y: f64| y >= self.yr.0 - 1e-12 && y <= self.yr.1 + 1e-12;
        let flush = |svg: &mut Svg, run: &mut Vec<(f64, f64)>| {
            match run.len() {
                0 => {}
                1 => svg.circle(run[0].0, run[0].1, 2.5, colour),
                _ => svg.polyline(run, colour, 1.5),
            }
            run.clear();
        };
        for (x, y) in xs.iter().zip(ys) {
            match y {
                Some(y) if inside(*y) => run.push(self.px(*x, *y)),
                _ => flush(svg, &mut run),
            }
        }
        flush(svg, &mut run);
    }
}

fn padded_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.1 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

/// One panel per ground metric: `κ` (red) and `K` (blue) against the family index.
pub fn plot_kappa_vs_k(rows: &[SweepRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Precondition("nothing to plot".into()));
    }
    let groups = group_by_omega(rows);
    let cols = groups.len().min(5);
    let rows_n = groups.len().div_ceil(cols);
    let (cw, ch) = (240.0, 180.0);
    let mut svg = Svg::new(cols as f64 * cw, rows_n as f64 * ch + 30.0);
    for (gi, (omega, members)) in groups.iter().enumerate() {
        let mut members = members.clone();
        members.sort_by_key(|r| r.family_index);
        let xs: Vec<f64> = members.iter().map(|r| r.family_index as f64).collect();
        let kappa: Vec<Option<f64>> = members.iter().map(|r| r.kappa).collect();
        let k: Vec<Option<f64>> = members.iter().map(|r| r.k).collect();
        let yr = padded_range(kappa.iter().chain(&k).flatten().copied());
        let xr = (
            xs.iter().copied().fold(f64::INFINITY, f64::min),
            xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
        let ax = Axes {
            x0: (gi % cols) as f64 * cw + 50.0,
            y0: (gi / cols) as f64 * ch + 25.0,
            w: cw - 70.0,
            h: ch - 55.0,
            xr,
            yr,
        };
        ax.frame(
            &mut svg,
            &format!("omega = ({}, {}, {})", fmt_num(omega[0]), fmt_num(omega[1]), fmt_num(omega[2])),
        );
        ax.series(&mut svg, &xs, &k, "#1f4fd8");
        ax.series(&mut svg, &xs, &kappa, "#d62728");
    }
    let ly = rows_n as f64 * ch + 15.0;
    svg.text(20.0, ly, 11.0, "start", "red: kappa (smallest RIW eigenvalue), blue: K (convergence rate); x: family index");
    svg.write(path)
}

/// Per-point quantities for a one-parameter model: the rate of the trajectory started at each
/// grid point and `λ_min` at the same point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseData {
    pub theta: Vec<f64>,
    pub rate: Vec<Option<f64>>,
    pub lambda_min: Vec<Option<f64>>,
}

pub fn pointwise_data(
    model: &StatisticalModel,
    graph: &Graph,
    q: &Distribution,
    theta_grid: &[f64],
    h: f64,
    t: f64,
) -> Result<PointwiseData> {
    if model.dim() != 1 {
        return Err(Error::Config("pointwise plots need a one-parameter model".into()));
    }
    if theta_grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let initials: Vec<Vec<f64>> = theta_grid.iter().map(|&x| vec![x]).collect();
    let samples = flow::rate_samples(model, graph, q, &initials, h, t)?;
    let rate = samples
        .iter()
        .map(|s| flow::rate_from_samples(s[0], s[1], s[2], t, RateEstimator::SecondDifference))
        .collect();
    let lambda_min = initials
        .iter()
        .map(|th| curvature::lambda_min(model, graph, th, q).ok())
        .collect();
    Ok(PointwiseData { theta: theta_grid.to_vec(), rate, lambda_min })
}

/// Rate per initial (blue) and `λ_min` (red) against `θ`, with a second row zoomed in on
/// the values near the centre of the grid.
pub fn plot_pointwise(data: &PointwiseData, path: &Path) -> Result<()> {
    let (full, zoom) = pointwise_ranges(data);
    let xr = padded_range(data.theta.iter().copied());
    let mut svg = Svg::new(520.0, 470.0);
    for (row, (yr, title)) in [(full, "rate per initial (blue), smallest RIW eigenvalue (red)"), (zoom, "zoom")]
        .into_iter()
        .enumerate()
    {
        let ax = Axes { x0: 70.0, y0: 30.0 + row as f64 * 220.0, w: 420.0, h: 170.0, xr, yr };
        ax.frame(&mut svg, title);
        ax.series(&mut svg, &data.theta, &data.rate, "#1f4fd8");
        ax.series(&mut svg, &data.theta, &data.lambda_min, "#d62728");
    }
    svg.text(280.0, 462.0, 11.0, "middle", "theta");
    svg.write(path)
}

/// Full and zoomed y-ranges of [`plot_pointwise`]: the zoom spans half the full range,
/// centred on the mean of the values over the middle half of the grid.
pub fn pointwise_ranges(data: &PointwiseData) -> ((f64, f64), (f64, f64)) {
    let full = padded_range(data.rate.iter().chain(&data.lambda_min).flatten().copied());
    let n = data.theta.len();
    let centre: Vec<f64> = data
        .rate
        .iter()
        .zip(&data.lambda_min)
        .enumerate()
        .filter(|(i, _)| 4 * i >= n.saturating_sub(1) && 4 * i <= 3 * n.saturating_sub(1))
        .flat_map(|(_, (a, b))| [*a, *b])
        .flatten()
        .collect();
    let mid = if centre.is_empty() {
        0.5 * (full.0 + full.1)
    } else {
        centre.iter().sum::<f64>() / centre.len() as f64
    };
    let quarter = 0.25 * (full.1 - full.0);
    let zoom_mid = mid.clamp(full.0 + quarter, full.1 - quarter);
    (full, (zoom_mid - quarter, zoom_mid + quarter))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize, omega: [f64; 3], kappa: f64, k: f64) -> SweepRow {
        SweepRow {
            family_index: i,
            phi: i as f64 * std::f64::consts::PI / 30.0,
            omega,
            theta_domain: [-1.0, 1.0],
            kappa: Some(kappa),
            k: Some(k),
            k_log: Some(k + 0.1),
            error: None,
            runtime_ms: 7,
        }
    }

    fn rows() -> Vec<SweepRow> {
        let mut out = Vec::new();
        for (j, o) in [[0.5, 0.5, 0.0], [1.0 / 3.0; 3]].into_iter().enumerate() {
            for i in 0..30 {
                out.push(row(i, o, 0.3 + 0.01 * i as f64 + j as f64 * 0.1, 0.5 + 0.02 * i as f64));
            }
        }
        out
    }

    #[test]
    fn csv_round_trip_and_determinism() {
        let mut rs = rows();
        rs[3].kappa = None;
        rs[3].error = Some("degenerate metric, with comma".into());
        rs[4].k = Some(0.1);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_sweep_csv(&rs, &a).unwrap();
        write_sweep_csv(&rs, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(read_sweep_csv(&a).unwrap(), rs);
        let text = std::fs::read_to_string(&a).unwrap();
        assert!(text.ends_with('\n'));
        assert_eq!(text.lines().count(), 61);
        assert!(text.lines().nth(5).unwrap().contains(",false,"));
        assert!(matches!(write_sweep_csv(&[], &a), Err(Error::Precondition(_))));
    }

    #[test]
    fn svgs_parse_and_have_expected_structure() {
        let dir = tempfile::tempdir().unwrap();
        let rs = rows();
        let f = dir.path().join("s.svg");
        plot_simplex_families(&rs, PlotValue::K, &f).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        let lines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
        // one outline and 30 curves per triangle
        assert_eq!(lines, 2 * 31);
        assert!(!text.contains("href"));

        plot_kappa_vs_k(&rs, &f).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        let frames = doc
            .descendants()
            .filter(|n| n.has_tag_name("rect") && n.attribute("fill") == Some("none"))
            .count();
        assert_eq!(frames, 2);

        let single = vec![row(0, [0.5, 0.5, 0.0], 0.2, 0.3)];
        plot_simplex_families(&single, PlotValue::Kappa, &f).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
    }

    #[test]
    fn pointwise_single_point_and_zoom() {
        let data = PointwiseData { theta: vec![0.0], rate: vec![Some(1.2)], lambda_min: vec![Some(1.0)] };
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("p.svg");
        plot_pointwise(&data, &f).unwrap();
        let text = std::fs::read_to_string(&f).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        // one marker per curve in the full row; the zoom row may clip them
        let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
        assert!((2..=4).contains(&circles), "{circles}");
        let (full, zoom) = pointwise_ranges(&data);
        assert!(zoom.0 > full.0 && zoom.1 < full.1);
    }

    #[test]
    fn colour_scale_endpoints() {
        assert_eq!(blue_yellow(0.0), "#1e3cc8");
        assert_eq!(blue_yellow(1.0), "#fadc14");
        let (x, y) = barycentric(&[0.0, 0.0, 1.0]);
        assert!((x - 0.5).abs() < 1e-15 && (y - 3f64.sqrt() / 2.0).abs() < 1e-15);
    }
}
