//! Plain-text tables for metrics and comparison reports, as CSV or aligned
//! markdown.

use thiserror::Error;

use crate::metrics::{MetricFamily, MetricKey, MetricsReport};
use crate::significance::ComparisonRow;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report for {system:?} has no metric {metric}")]
    MissingMetric { system: String, metric: String },
    #[error("no reports to tabulate")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Row {
    Cells(Vec<String>),
    /// Full-width label separating groups of rows.
    Section(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(Row::Cells(cells));
    }

    pub fn section(&mut self, label: impl Into<String>) {
        self.rows.push(Row::Section(label.into()));
    }

    fn padded(&self, row: &Row) -> Vec<String> {
        match row {
            Row::Cells(c) => c.clone(),
            Row::Section(label) => {
                let mut c = vec![String::new(); self.header.len()];
                c[0] = label.clone();
                c
            }
        }
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(self.padded(row))?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("cells are UTF-8"))
    }

    /// Pipe table with every column padded to its widest cell. The first
    /// column is left-aligned, the rest right-aligned.
    pub fn to_markdown(&self) -> String {
        let width = |s: &str| s.chars().count();
        let mut widths: Vec<usize> = self.header.iter().map(|h| width(h).max(3)).collect();
        for row in &self.rows {
            if let Row::Cells(c) = row {
                for (w, cell) in widths.iter_mut().zip(c) {
                    *w = (*w).max(width(cell));
                }
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    let pad = " ".repeat(w.saturating_sub(width(c)));
                    if i == 0 {
                        format!("{c}{pad}")
                    } else {
                        format!("{pad}{c}")
                    }
                })
                .collect();
            format!("| {} |\n", parts.join(" | "))
        };
        let mut out = line(&self.header);
        let rule: Vec<String> = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let dashes = "-".repeat(w - 1);
                if i == 0 {
                    format!(":{dashes}")
                } else {
                    format!("{dashes}:")
                }
            })
            .collect();
        out.push_str(&format!("| {} |\n", rule.join(" | ")));
        for row in &self.rows {
            match row {
                Row::Cells(c) => out.push_str(&line(c)),
                Row::Section(label) => out.push_str(&format!("| **{label}** |{}\n", " |".repeat(widths.len() - 1))),
            }
        }
        out
    }
}

/// `0.2` → `.20`.
fn short_tau(tau: f64) -> String {
    let s = format!("{tau:.2}");
    s.strip_prefix('0').map(str::to_owned).unwrap_or(s)
}

fn fixed(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{:.*}", decimals, x),
        None => "n/a".to_owned(),
    }
}

fn lookup(report: &MetricsReport, key: MetricKey) -> Result<Option<f64>, ReportError> {
    report
        .aggregates
        .get(&key.to_string())
        .map(|a| a.mean)
        .ok_or_else(|| ReportError::MissingMetric {
            system: report.system.clone(),
            metric: key.to_string(),
        })
}

/// One row per system at depth `k` and threshold `tau`: nDCG, MAP, P,
/// HitRate, RBP@10 and the weighted / raw overlap pair.
pub fn threshold_table(reports: &[&MetricsReport], k: usize, tau: f64) -> Result<Table, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut table = Table::new(vec![
        "Model".into(),
        format!("nDCG@{k}"),
        format!("MAP@{k}"),
        format!("P@{k}"),
        format!("HitRate@{k}"),
        "RBP@10".into(),
        format!("Weighted/Cnt@{k}"),
    ]);
    for r in reports {
        let get = |family| lookup(r, MetricKey::new(family, k, tau));
        let mut cells = vec![
            r.system.clone(),
            fixed(get(MetricFamily::Ndcg)?, 3),
            fixed(get(MetricFamily::Map)?, 5),
            fixed(get(MetricFamily::Precision)?, 3),
            fixed(get(MetricFamily::HitRate)?, 3),
            fixed(get(MetricFamily::Rbp)?, 3),
        ];
        cells.push(match (get(MetricFamily::WeightedOverlap)?, get(MetricFamily::OverlapCount)?) {
            (Some(w), Some(c)) => format!("{w:.2} / {c:.2}"),
            _ => "n/a".into(),
        });
        table.push(cells);
    }
    Ok(table)
}

/// One row per system at depth `k`, binary metrics shown as a pair over two
/// thresholds: nDCG, then P and Hit as `x/y`.
pub fn depth_table(reports: &[&MetricsReport], k: usize, taus: (f64, f64)) -> Result<Table, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    let pair_label = format!("({}/{})", short_tau(taus.0), short_tau(taus.1));
    let mut table = Table::new(vec![
        "Model".into(),
        format!("nDCG@{k}"),
        format!("P@{k} {pair_label}"),
        format!("Hit@{k} {pair_label}"),
    ]);
    for r in reports {
        let pair = |family| -> Result<String, ReportError> {
            let a = lookup(r, MetricKey::new(family, k, taus.0))?;
            let b = lookup(r, MetricKey::new(family, k, taus.1))?;
            Ok(format!("{}/{}", fixed(a, 3), fixed(b, 3)))
        };
        table.push(vec![
            r.system.clone(),
            fixed(lookup(r, MetricKey::new(MetricFamily::Ndcg, k, taus.0))?, 3),
            pair(MetricFamily::Precision)?,
            pair(MetricFamily::HitRate)?,
        ]);
    }
    Ok(table)
}

fn signed(x: f64) -> String {
    // avoid "-0.000" for values that round to zero
    let s = format!("{x:+.3}");
    if s == "-0.000" {
        "+0.000".into()
    } else {
        s
    }
}

fn plain(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

/// Comparison rows grouped under a section per threshold track, in input
/// order.
pub fn comparison_table(rows: &[ComparisonRow]) -> Table {
    let mut table = Table::new(
        ["Comparison", "Metric", "Δ", "95% CI", "p"]
            .map(String::from)
            .to_vec(),
    );
    let mut current: Option<f64> = None;
    for row in rows {
        if current != Some(row.tau) {
            table.section(format!("τ = {:.2}", row.tau));
            current = Some(row.tau);
        }
        let r = &row.result;
        table.push(vec![
            row.comparison.clone(),
            row.label.clone(),
            signed(r.delta_mean),
            format!("[{}, {}]", plain(r.ci_low), plain(r.ci_high)),
            format_p(r.p_two_sided),
        ]);
    }
    table
}
