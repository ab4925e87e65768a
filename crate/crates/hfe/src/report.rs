//! Training logs, metric tables and JSON reports.

use std::fmt::Write as _;
use std::io::Write;

use hfe_core::eval::{Diagnostics, MetricReport};
use hfe_core::LossReport;
use serde::{Deserialize, Serialize};

use crate::config::LogFormat;

pub const LOG_COLUMNS: [&str; 12] = [
    "step", "w", "ce", "inter", "intra", "abr", "hfe", "total", "n_ce", "n_inter", "n_intra", "n_abr",
];

/// One training log record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub step: u64,
    pub w: f64,
    pub ce: f64,
    pub inter: f64,
    pub intra: f64,
    pub abr: f64,
    pub hfe: f64,
    pub total: f64,
    pub n_ce: usize,
    pub n_inter: usize,
    pub n_intra: usize,
    pub n_abr: usize,
}

impl LogLine {
    pub fn new(step: u64, r: &LossReport) -> Self {
        Self {
            step,
            w: r.weight_w,
            ce: r.ce,
            inter: r.inter,
            intra: r.intra,
            abr: r.abr,
            hfe: r.hfe,
            total: r.total,
            n_ce: r.counts.ce,
            n_inter: r.counts.inter,
            n_intra: r.counts.intra,
            n_abr: r.counts.abr,
        }
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.w,
            self.ce,
            self.inter,
            self.intra,
            self.abr,
            self.hfe,
            self.total,
            self.n_ce,
            self.n_inter,
            self.n_intra,
            self.n_abr
        )
    }
}

/// Streams log lines as CSV (with header) or JSON Lines.
pub struct LogWriter<W: Write> {
    out: W,
    format: LogFormat,
}

impl<W: Write> LogWriter<W> {
    pub fn new(mut out: W, format: LogFormat) -> std::io::Result<Self> {
        if format == LogFormat::Csv {
            writeln!(out, "{}", LOG_COLUMNS.join(","))?;
        }
        Ok(Self { out, format })
    }

    pub fn write(&mut self, line: &LogLine) -> std::io::Result<()> {
        match self.format {
            LogFormat::Csv => writeln!(self.out, "{}", line.csv_row()),
            LogFormat::Json => {
                serde_json::to_writer(&mut self.out, line)?;
                writeln!(self.out)
            }
        }
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub metrics: MetricReport,
    pub diagnostics: Vec<Diagnostics>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text rendering.
    pub fn table(&self) -> String {
        let m = &self.metrics;
        let mut rows: Vec<(String, String)> = m
            .class_based_per_attr
            .iter()
            .enumerate()
            .map(|(j, v)| (format!("accuracy a{j}"), format!("{v:.4}")))
            .collect();
        for (name, v) in [
            ("class-based avg", m.class_based_avg),
            ("instance acc", m.instance_acc),
            ("instance prec", m.instance_prec),
            ("instance recall", m.instance_recall),
            ("instance f1", m.instance_f1),
        ] {
            rows.push((name.to_string(), format!("{v:.4}")));
        }
        for (j, d) in self.diagnostics.iter().enumerate() {
            for (name, v) in [
                ("intra-id dist", d.mean_intra_id_dist),
                ("intra-class dist", d.mean_intra_class_dist),
                ("inter-class dist", d.mean_inter_class_dist),
                ("order rate", d.quintuplet_order_rate),
            ] {
                rows.push((format!("a{j} {name}"), format!("{v:.4}")));
            }
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = format!("{:<width$}  {}\n", "samples", self.samples);
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v:>6}");
        }
        out
    }
}
