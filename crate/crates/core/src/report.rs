//! Detection report: one row per (dataset, method) with TPR10, FPR95, AUROC
//! and AUPR as percentages, plus point differences against the Softmax row.
//!
//! Percentages are rounded to two decimals first and the differences are
//! taken on the rounded values in integer hundredths, so a delta column
//! always equals the difference of the two printed numbers.

use std::fmt;
use std::str::FromStr;

use serde_json::json;

use crate::error::{Error, Result};
use crate::metrics::MetricRow;
use crate::ood::Method;

/// A percentage with two decimals, stored as an integer count of 0.01 %.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(i64);

impl Percent {
    /// From a fraction in `[0, 1]`.
    pub fn from_fraction(f: f64) -> Self {
        Percent((f * 10_000.0).round() as i64)
    }

    pub fn hundredths(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Signed point difference `self − base`.
    pub fn minus(self, base: Percent) -> Delta {
        Delta(self.0 - base.0)
    }
}

fn write_hundredths(f: &mut fmt::Formatter<'_>, v: i64) -> fmt::Result {
    write!(f, "{}.{:02}", v.abs() / 100, v.abs() % 100)
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 < 0 {
            f.write_str("-")?;
        }
        write_hundredths(f, self.0)
    }
}

impl FromStr for Percent {
    type Err = Error;

    /// Parses a decimal with at most two fractional digits, e.g. `84.37`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("not a two-decimal percentage: `{s}`"));
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() || frac.len() > 2 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let whole: i64 = int.parse().map_err(|_| bad())?;
        let cents: i64 = format!("{frac:0<2}").parse().map_err(|_| bad())?;
        let v = whole * 100 + cents;
        Ok(Percent(if neg { -v } else { v }))
    }
}

/// Difference of two [`Percent`] values in percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Delta(i64);

impl Delta {
    pub fn hundredths(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Delta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0 < 0 { "-" } else { "+" })?;
        write_hundredths(f, self.0)
    }
}

pub const METRIC_NAMES: [&str; 4] = ["TPR10", "FPR95", "AUROC", "AUPR"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub method: Method,
    pub metrics: MetricRow,
    /// TPR10, FPR95, AUROC, AUPR.
    pub percents: [Percent; 4],
    /// Against the Softmax row of the same dataset, when there is one.
    pub deltas: Option<[Delta; 4]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportMeta {
    pub seed: Option<u64>,
    pub thinkback_temperature: Option<f64>,
    pub energy_temperature: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub meta: ReportMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            "jsonl" | "json-lines" => Ok(Format::Jsonl),
            other => Err(format!("unknown format `{other}` (expected text, csv or jsonl)")),
        }
    }
}

impl EvalReport {
    /// Builds rows for one dataset. Deltas are filled in when a Softmax row
    /// is present.
    pub fn new(dataset: &str, results: &[(Method, MetricRow)], meta: ReportMeta) -> Self {
        let mut report = EvalReport { rows: Vec::new(), meta };
        report.add_dataset(dataset, results);
        report
    }

    pub fn add_dataset(&mut self, dataset: &str, results: &[(Method, MetricRow)]) {
        let percents = |m: &MetricRow| m.values().map(Percent::from_fraction);
        let base = results
            .iter()
            .find(|(method, _)| *method == Method::Softmax)
            .map(|(_, m)| percents(m));
        for (method, metrics) in results {
            let p = percents(metrics);
            self.rows.push(ReportRow {
                dataset: dataset.to_string(),
                method: *method,
                metrics: *metrics,
                percents: p,
                deltas: base.map(|b| [0, 1, 2, 3].map(|i| p[i].minus(b[i]))),
            });
        }
    }

    pub fn row(&self, dataset: &str, method: Method) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.method == method)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.render_text(),
            Format::Csv => self.render_csv(),
            Format::Jsonl => self.render_jsonl(),
        }
    }

    fn meta_pairs(&self) -> Vec<(&'static str, String)> {
        let m = &self.meta;
        let mut out = Vec::new();
        if let Some(s) = m.seed {
            out.push(("seed", s.to_string()));
        }
        if let Some(t) = m.thinkback_temperature {
            out.push(("thinkback_temperature", t.to_string()));
        }
        if let Some(t) = m.energy_temperature {
            out.push(("energy_temperature", t.to_string()));
        }
        if let Some(e) = m.epsilon {
            out.push(("epsilon", format!("{e:e}")));
        }
        out
    }

    fn render_text(&self) -> String {
        let mut header = vec!["Dataset".to_string(), "Method".to_string()];
        for name in METRIC_NAMES {
            header.push(name.to_string());
            header.push(format!("Δ{name} (pp)"));
        }
        let mut table = vec![header];
        for r in &self.rows {
            let mut cells = vec![r.dataset.clone(), r.method.title().to_string()];
            for i in 0..4 {
                cells.push(r.percents[i].to_string());
                cells.push(r.deltas.map_or(String::new(), |d| d[i].to_string()));
            }
            table.push(cells);
        }
        let widths: Vec<usize> = (0..table[0].len())
            .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();

        let mut out = String::new();
        let meta = self.meta_pairs();
        if !meta.is_empty() {
            let joined: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push_str(&format!("# {}\n", joined.join(" ")));
        }
        for row in &table {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    let pad = w - cell.chars().count();
                    if c < 2 {
                        format!("{cell}{}", " ".repeat(pad))
                    } else {
                        format!("{}{cell}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    fn render_csv(&self) -> String {
        let mut out = String::from("dataset,method");
        for name in METRIC_NAMES {
            let n = name.to_ascii_lowercase();
            out.push_str(&format!(",{n},delta_{n}_pp"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{}", r.dataset, r.method));
            for i in 0..4 {
                let d = r.deltas.map_or(String::new(), |d| d[i].to_string());
                out.push_str(&format!(",{},{d}", r.percents[i]));
            }
            out.push('\n');
        }
        out
    }

    fn render_jsonl(&self) -> String {
        let mut out = String::new();
        let meta: serde_json::Map<String, serde_json::Value> = self
            .meta_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect();
        out.push_str(&json!({ "meta": meta }).to_string());
        out.push('\n');
        for r in &self.rows {
            let mut obj = serde_json::Map::new();
            obj.insert("dataset".into(), json!(r.dataset));
            obj.insert("method".into(), json!(r.method.to_string()));
            for (i, name) in METRIC_NAMES.iter().enumerate() {
                let n = name.to_ascii_lowercase();
                obj.insert(n.clone(), json!(r.percents[i].as_f64()));
                if let Some(d) = r.deltas {
                    obj.insert(format!("delta_{n}_pp"), json!(d[i].as_f64()));
                }
            }
            out.push_str(&serde_json::Value::Object(obj).to_string());
            out.push('\n');
        }
        out
    }
}
