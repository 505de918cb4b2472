//! CSV tables, run metadata and the three-panel SVG figure.
//!
//! CSV dialect: comma separator, `.` decimal point, header row, LF line
//! endings. Floats use the shortest representation that round-trips.
//! Undefined scores are written as `null`; cells that do not apply to a
//! row are left empty.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{ece, reliability_bins};
use crate::data::SplitData;
use crate::error::{Error, Result};
use crate::failure::eefp_score;
use crate::simulate::CostAccuracyCurve;
use crate::transforms::{confidence_table, exit_nll, TransformChain, RANK_EPSILON};

pub const NULL: &str = "null";
pub const ECE_POPULATION: &str = "all samples of the split, per head";

pub fn fmt_float(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_else(|| NULL.to_string())
}

/// Everything needed to reproduce a report, including every defaulted
/// parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub command: String,
    pub dataset: String,
    pub split: String,
    pub chain: TransformChain,
    pub chain_description: String,
    pub rank_epsilon: f64,
    pub ece_bins: usize,
    pub ece_population: String,
    pub exit_costs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_grid: Option<QGridMetadata>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QGridMetadata {
    pub q_min: f64,
    pub q_max: f64,
    pub q_points: usize,
    pub values: Vec<f64>,
}

impl ReportMetadata {
    pub fn new(command: &str, dataset: &str, split: &str, chain: &TransformChain, ece_bins: usize, exit_costs: &[f64]) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            dataset: dataset.to_string(),
            split: split.to_string(),
            chain: chain.clone(),
            chain_description: chain.describe(),
            rank_epsilon: RANK_EPSILON,
            ece_bins,
            ece_population: ECE_POPULATION.to_string(),
            exit_costs: exit_costs.to_vec(),
            q_grid: None,
        }
    }

    /// `# key=value` lines for human-facing output.
    pub fn comment_block(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# tool-version={}", self.tool_version);
        let _ = writeln!(out, "# command={}", self.command);
        let _ = writeln!(out, "# dataset={}", self.dataset);
        let _ = writeln!(out, "# split={}", self.split);
        let _ = writeln!(out, "# chain={}", self.chain_description);
        let _ = writeln!(out, "# ece-bins={}", self.ece_bins);
        let _ = writeln!(out, "# ece-population={}", self.ece_population);
        if let Some(q) = &self.q_grid {
            let _ = writeln!(out, "# q-min={} q-max={} q-points={}", q.q_min, q.q_max, q.q_points);
        }
        out
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Standalone metrics of one head on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub head: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub eefp: Option<f64>,
    /// NLL of the temperature-scaled probabilities; the rank-preserving
    /// transform acts on the confidence only and does not enter here.
    pub nll: f64,
}

pub fn split_metrics(data: &SplitData, chain: &TransformChain, ece_bins: usize) -> Result<Vec<HeadReport>> {
    let j = data.logits.num_exits();
    if data.num_samples() == 0 {
        return Err(Error::EmptyInput);
    }
    let conf = confidence_table(&data.logits, chain)?;
    let correct = data.correctness();
    let mut eefp = eefp_score(&conf, &correct)?;
    eefp.push(None);
    (0..j)
        .map(|h| {
            let bins = reliability_bins(&conf.column(h), &correct.column(h), ece_bins)?;
            Ok(HeadReport {
                head: h + 1,
                accuracy: correct.accuracy(h),
                ece: ece(&bins)?,
                eefp: eefp[h],
                nll: exit_nll(&data.logits, &data.labels, h, chain.effective_temperature(h)),
            })
        })
        .collect()
}

pub fn metrics_csv(heads: &[HeadReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["head", "accuracy", "ece", "eefp", "nll"]);
    for h in heads {
        let _ = w.write_record([
            h.head.to_string(),
            fmt_float(h.accuracy),
            fmt_float(h.ece),
            fmt_opt(h.eefp),
            fmt_float(h.nll),
        ]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

fn curve_header(num_exits: usize) -> Vec<String> {
    let mut h: Vec<String> = ["record", "q", "head", "mean_cost", "accuracy"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=num_exits).map(|j| format!("exit_frac_{j}")));
    h.extend(["acc_head", "cost_head", "ece", "eefp", "eef1"].iter().map(|s| s.to_string()));
    h
}

/// Flat curve table: one `curve` row per budget (with the mean EEF1 in the
/// `eef1` column), followed by one `head` row per budget and head.
pub fn curve_csv(curve: &CostAccuracyCurve) -> String {
    let j = curve.exit_costs.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(curve_header(j));
    for p in &curve.points {
        let mut row = vec![
            "curve".to_string(),
            fmt_float(p.q),
            String::new(),
            fmt_float(p.result.mean_cost),
            fmt_float(p.result.accuracy),
        ];
        row.extend(p.result.exit_fractions().into_iter().map(fmt_float));
        row.extend([String::new(), String::new(), String::new(), String::new()]);
        row.push(fmt_opt(p.eef1.mean));
        let _ = w.write_record(&row);
    }
    for p in &curve.points {
        for (h, m) in p.heads.iter().enumerate() {
            let mut row = vec![
                "head".to_string(),
                fmt_float(p.q),
                (h + 1).to_string(),
                String::new(),
                String::new(),
            ];
            row.extend(std::iter::repeat_n(String::new(), j));
            row.extend([
                fmt_float(m.accuracy),
                fmt_float(curve.exit_costs[h]),
                fmt_float(m.ece),
                fmt_opt(m.eefp),
                fmt_opt(m.eef1),
            ]);
            let _ = w.write_record(&row);
        }
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub q: f64,
    pub mean_cost: f64,
    pub accuracy: f64,
    pub exit_fracs: Vec<f64>,
    pub eef1_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadRow {
    pub q: f64,
    pub head: usize,
    pub acc_head: f64,
    pub cost_head: f64,
    pub ece: f64,
    pub eefp: Option<f64>,
    pub eef1: Option<f64>,
}

/// A curve file read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub num_exits: usize,
    pub points: Vec<CurveRow>,
    pub heads: Vec<HeadRow>,
}

impl CurveTable {
    /// Per-head rows of the first budget; head-level accuracy, cost, ECE and
    /// EEFP do not depend on the budget.
    pub fn head_summary(&self) -> Vec<&HeadRow> {
        match self.heads.first() {
            Some(first) => self.heads.iter().filter(|h| h.q == first.q).collect(),
            None => Vec::new(),
        }
    }
}

pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<CurveTable> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_curve_csv(&text).map_err(|reason| Error::Report {
        path: path.to_path_buf(),
        reason,
    })
}

fn parse_curve_csv(text: &str) -> std::result::Result<CurveTable, String> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.is_empty() || &header[0] != "record" {
        return Err("missing or unexpected header row".into());
    }
    let num_exits = header.iter().filter(|h| h.starts_with("exit_frac_")).count();
    if num_exits < 2 || header.len() != 5 + num_exits + 5 {
        return Err(format!("header has {} columns, cannot infer exit count", header.len()));
    }
    let num = |s: &str, what: &str| -> std::result::Result<f64, String> {
        s.parse::<f64>().map_err(|_| format!("cannot parse {what} value `{s}`"))
    };
    let opt = |s: &str, what: &str| -> std::result::Result<Option<f64>, String> {
        if s == NULL {
            Ok(None)
        } else {
            num(s, what).map(Some)
        }
    };
    let tail = 5 + num_exits;
    let mut table = CurveTable {
        num_exits,
        points: Vec::new(),
        heads: Vec::new(),
    };
    for (line, record) in reader.records().enumerate() {
        let r = record.map_err(|e| e.to_string())?;
        match &r[0] {
            "curve" => table.points.push(CurveRow {
                q: num(&r[1], "q")?,
                mean_cost: num(&r[3], "mean_cost")?,
                accuracy: num(&r[4], "accuracy")?,
                exit_fracs: (0..num_exits)
                    .map(|k| num(&r[5 + k], "exit_frac"))
                    .collect::<std::result::Result<_, _>>()?,
                eef1_mean: opt(&r[tail + 4], "eef1")?,
            }),
            "head" => table.heads.push(HeadRow {
                q: num(&r[1], "q")?,
                head: r[2].parse().map_err(|_| format!("bad head index `{}`", &r[2]))?,
                acc_head: num(&r[tail], "acc_head")?,
                cost_head: num(&r[tail + 1], "cost_head")?,
                ece: num(&r[tail + 2], "ece")?,
                eefp: opt(&r[tail + 3], "eefp")?,
                eef1: opt(&r[tail + 4], "eef1")?,
            }),
            other => return Err(format!("row {}: unknown record kind `{other}`", line + 2)),
        }
    }
    if table.points.is_empty() {
        return Err("file contains no curve rows".into());
    }
    Ok(table)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// --- SVG -------------------------------------------------------------------

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const DASHES: [&str; 4] = ["none", "6 3", "2 2", "8 3 2 3"];

const PANEL_W: f64 = 380.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 44.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn new(x0: f64, (x_min, x_max): (f64, f64), (y_min, y_max): (f64, f64)) -> Self {
        let pad = |lo: f64, hi: f64| {
            if hi > lo {
                let p = (hi - lo) * 0.05;
                (lo - p, hi + p)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let (x_min, x_max) = pad(x_min, x_max);
        let (y_min, y_max) = pad(y_min, y_max);
        Self { x0, x_min, x_max, y_min, y_max }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (PANEL_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        PANEL_H - MARGIN_B - (y - self.y_min) / (self.y_max - self.y_min) * (PANEL_H - MARGIN_T - MARGIN_B)
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str, y_label: &str, integer_x: bool) {
        let (left, right) = (self.x0 + MARGIN_L, self.x0 + PANEL_W - MARGIN_R);
        let (top, bottom) = (MARGIN_T, PANEL_H - MARGIN_B);
        let _ = writeln!(
            out,
            r##"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            right - left,
            bottom - top
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13" font-weight="bold">{}</text>"#,
            (left + right) / 2.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
            (left + right) / 2.0,
            PANEL_H - 8.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            self.x0 + 14.0,
            (top + bottom) / 2.0,
            self.x0 + 14.0,
            (top + bottom) / 2.0,
            escape(y_label)
        );
        let ticks = 5;
        for k in 0..=ticks {
            let y = self.y_min + (self.y_max - self.y_min) * k as f64 / ticks as f64;
            let _ = writeln!(
                out,
                r##"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="9" fill="#333">{:.3}</text>"##,
                left - 4.0,
                self.py(y) + 3.0,
                y
            );
        }
        if integer_x {
            let first = self.x_min.ceil() as i64;
            let last = self.x_max.floor() as i64;
            for x in first..=last {
                let _ = writeln!(
                    out,
                    r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9" fill="#333">{x}</text>"##,
                    self.px(x as f64),
                    bottom + 14.0
                );
            }
        } else {
            for k in 0..=ticks {
                let x = self.x_min + (self.x_max - self.x_min) * k as f64 / ticks as f64;
                let _ = writeln!(
                    out,
                    r##"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="9" fill="#333">{:.2}</text>"##,
                    self.px(x),
                    bottom + 14.0,
                    x
                );
            }
        }
    }

    fn legend(&self, out: &mut String, labels: &[String]) {
        let x = self.x0 + MARGIN_L + 8.0;
        for (k, label) in labels.iter().enumerate() {
            let y = MARGIN_T + 14.0 + 14.0 * k as f64;
            let _ = writeln!(
                out,
                r#"<g class="legend-entry"><line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2" stroke-dasharray="{}"/><text x="{:.2}" y="{:.2}" font-size="10">{}</text></g>"#,
                y - 3.0,
                x + 18.0,
                y - 3.0,
                PALETTE[k % PALETTE.len()],
                DASHES[k % DASHES.len()],
                x + 22.0,
                y,
                escape(label)
            );
        }
    }
}

fn polyline(out: &mut String, frame: &Frame, pts: &[(f64, f64)], series: usize) {
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline class="series" fill="none" stroke="{}" stroke-width="1.8" stroke-dasharray="{}" points="{}"/>"#,
        PALETTE[series % PALETTE.len()],
        DASHES[series % DASHES.len()],
        coords.join(" ")
    );
}

fn dot(out: &mut String, frame: &Frame, (x, y): (f64, f64), series: usize) {
    let _ = writeln!(
        out,
        r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" stroke="#222" stroke-width="0.5"/>"##,
        frame.px(x),
        frame.py(y),
        PALETTE[series % PALETTE.len()]
    );
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Three side-by-side panels: cost-accuracy curves with per-head dots,
/// ECE per head and EEFP per head, one series per labelled curve.
pub fn render_svg(curves: &[(String, CurveTable)]) -> String {
    let labels: Vec<String> = curves.iter().map(|(l, _)| l.clone()).collect();
    let width = 3.0 * PANEL_W;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{PANEL_H}" fill="white"/>"#);

    // Panel 1: cost vs accuracy.
    let xs = curves.iter().flat_map(|(_, c)| {
        c.points
            .iter()
            .map(|p| p.mean_cost)
            .chain(c.head_summary().into_iter().map(|h| h.cost_head))
    });
    let ys = curves.iter().flat_map(|(_, c)| {
        c.points
            .iter()
            .map(|p| p.accuracy)
            .chain(c.head_summary().into_iter().map(|h| h.acc_head))
    });
    let frame = Frame::new(0.0, extent(xs), extent(ys));
    let _ = writeln!(out, r#"<g class="panel" id="cost-accuracy">"#);
    frame.axes(&mut out, "Cost vs accuracy", "mean cost per sample", "accuracy", false);
    for (k, (_, c)) in curves.iter().enumerate() {
        let mut pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.mean_cost, p.accuracy)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        polyline(&mut out, &frame, &pts, k);
        for h in c.head_summary() {
            dot(&mut out, &frame, (h.cost_head, h.acc_head), k);
        }
    }
    frame.legend(&mut out, &labels);
    let _ = writeln!(out, "</g>");

    // Panel 2: ECE per head.
    let num_exits = curves.iter().map(|(_, c)| c.num_exits).max().unwrap_or(2);
    let ys = curves
        .iter()
        .flat_map(|(_, c)| c.head_summary().into_iter().map(|h| h.ece))
        .chain([0.0]);
    let frame = Frame::new(PANEL_W, (1.0, num_exits as f64), extent(ys));
    let _ = writeln!(out, r#"<g class="panel" id="ece">"#);
    frame.axes(&mut out, "ECE per head", "head", "ECE", true);
    for (k, (_, c)) in curves.iter().enumerate() {
        let pts: Vec<(f64, f64)> = c
            .head_summary()
            .into_iter()
            .map(|h| (h.head as f64, h.ece))
            .collect();
        polyline(&mut out, &frame, &pts, k);
        for &p in &pts {
            dot(&mut out, &frame, p, k);
        }
    }
    frame.legend(&mut out, &labels);
    let _ = writeln!(out, "</g>");

    // Panel 3: EEFP per non-final head.
    let ys = curves
        .iter()
        .flat_map(|(_, c)| c.head_summary().into_iter().filter_map(|h| h.eefp));
    let (lo, hi) = extent(ys);
    let y_range = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let frame = Frame::new(2.0 * PANEL_W, (1.0, (num_exits - 1).max(1) as f64), y_range);
    let _ = writeln!(out, r#"<g class="panel" id="eefp">"#);
    frame.axes(&mut out, "EEFP per head", "head", "EEFP", true);
    for (k, (_, c)) in curves.iter().enumerate() {
        let pts: Vec<(f64, f64)> = c
            .head_summary()
            .into_iter()
            .filter_map(|h| h.eefp.map(|v| (h.head as f64, v)))
            .collect();
        polyline(&mut out, &frame, &pts, k);
        for &p in &pts {
            dot(&mut out, &frame, p, k);
        }
    }
    frame.legend(&mut out, &labels);
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::ThresholdVector;
    use crate::failure::Eef1;
    use crate::simulate::{CurvePoint, HeadMetrics, SimulationResult};

    fn toy_curve(shift: f64) -> CostAccuracyCurve {
        let point = |q: f64, acc: f64| CurvePoint {
            q,
            thresholds: ThresholdVector { taus: vec![0.5] },
            result: SimulationResult {
                accuracy: acc,
                mean_cost: 1.0 + q,
                exit_histogram: vec![3, 1],
                per_sample_exit: vec![0, 0, 0, 1],
            },
            heads: vec![
                HeadMetrics { accuracy: 0.5, ece: 0.1 + shift, eefp: Some(0.75), eef1: Some(0.4) },
                HeadMetrics { accuracy: 0.75, ece: 0.05, eefp: None, eef1: None },
            ],
            eef1: Eef1 { per_exit: vec![Some(0.4), None], mean: Some(0.4), defined: 1 },
        };
        CostAccuracyCurve {
            exit_costs: vec![1.0, 3.0],
            points: vec![point(0.25, 0.5 + shift), point(1.0, 0.625 + shift)],
        }
    }

    #[test]
    fn curve_csv_round_trips() {
        let curve = toy_curve(0.0);
        let text = curve_csv(&curve);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "record,q,head,mean_cost,accuracy,exit_frac_1,exit_frac_2,acc_head,cost_head,ece,eefp,eef1"
        );
        assert_eq!(lines.next().unwrap(), "curve,0.25,,1.25,0.5,0.75,0.25,,,,,0.4");
        assert!(text.contains("head,0.25,2,,,,,0.75,3,0.05,null,null"));
        assert!(!text.contains('\r'));

        let table = parse_curve_csv(&text).unwrap();
        assert_eq!(table.num_exits, 2);
        assert_eq!(table.points.len(), 2);
        assert_eq!(table.heads.len(), 4);
        assert_eq!(table.points[1].accuracy, 0.625);
        assert_eq!(table.head_summary().len(), 2);
        assert_eq!(table.heads[1].eefp, None);
        assert_eq!(table.heads[0].eefp, Some(0.75));
    }

    #[test]
    fn malformed_curve_files_are_rejected() {
        assert!(parse_curve_csv("").is_err());
        let header = curve_csv(&toy_curve(0.0)).lines().next().unwrap().to_string();
        assert!(parse_curve_csv(&(header.clone() + "\n")).is_err());
        assert!(parse_curve_csv(&(header + "\nbogus,1,,,,,,,,,,\n")).is_err());
        assert!(parse_curve_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn svg_is_well_formed_with_legends() {
        let curves: Vec<(String, CurveTable)> = [0.0, 0.05, 0.1]
            .iter()
            .enumerate()
            .map(|(k, &s)| (format!("model <{k}> & co"), parse_curve_csv(&curve_csv(&toy_curve(s))).unwrap()))
            .collect();
        let svg = render_svg(&curves);
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let panels: Vec<_> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("panel"))
            .collect();
        assert_eq!(panels.len(), 3);
        for panel in panels {
            let legend = panel
                .descendants()
                .filter(|n| n.attribute("class") == Some("legend-entry"))
                .count();
            assert_eq!(legend, 3);
        }
    }

    #[test]
    fn metadata_block_discloses_defaults() {
        let meta = ReportMetadata::new("metrics", "d", "test", &TransformChain::identity(2), 15, &[1.0, 2.0]);
        let block = meta.comment_block();
        assert!(block.contains("# ece-bins=15"));
        assert!(block.contains("alpha=none"));
        assert!(block.contains("mult=1"));
    }
}
