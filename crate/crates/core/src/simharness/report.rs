use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Experiment, HarnessError, TraceRow};
use crate::scheduler::DefectReport;

pub const REPORT_CSV_HEADER: &str =
    "accuracy,total_time_s,avg_time_per_image_s,cloud_fraction,total_energy_mwh,energy_per_correct_mwh";

pub const TRACE_CSV_HEADER: &str =
    "path,s_c,site,reason,label,truth,p_defect,t_contrib_s,energy_mwh";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteCounts {
    pub n: usize,
    pub correct: usize,
    pub edge: usize,
    pub cloud: usize,
    pub complexity_routed: usize,
    pub edge_accepted: usize,
    pub edge_rejected: usize,
}

/// Aggregate accuracy, modeled runtime and energy for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub accuracy: f64,
    pub total_time_s: f64,
    pub avg_time_per_image_s: f64,
    pub cloud_fraction: f64,
    pub total_energy_mwh: f64,
    /// `None` when no decision was correct.
    pub energy_per_correct_mwh: Option<f64>,
    pub counts: SiteCounts,
    pub config: Experiment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

fn round6(v: f64) -> f64 {
    format!("{v:.6}").parse().expect("formatted float parses")
}

impl RunReport {
    /// The values a reader recovers after the report passes through its
    /// six-decimal serialized form.
    pub fn rounded(&self) -> Self {
        Self {
            accuracy: round6(self.accuracy),
            total_time_s: round6(self.total_time_s),
            avg_time_per_image_s: round6(self.avg_time_per_image_s),
            cloud_fraction: round6(self.cloud_fraction),
            total_energy_mwh: round6(self.total_energy_mwh),
            energy_per_correct_mwh: self.energy_per_correct_mwh.map(round6),
            counts: self.counts,
            config: self.config.clone(),
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, HarnessError> {
        serde_json::from_slice(bytes).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

fn opt6(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |v| format!("{v:.6}"))
}

/// Serializes a report with a stable field order and six-decimal floats.
pub fn emit_report(report: &RunReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Csv => {
            let epc = report
                .energy_per_correct_mwh
                .map_or_else(String::new, |v| format!("{v:.6}"));
            format!(
                "{REPORT_CSV_HEADER}\n{:.6},{:.6},{:.6},{:.6},{:.6},{epc}\n",
                report.accuracy,
                report.total_time_s,
                report.avg_time_per_image_s,
                report.cloud_fraction,
                report.total_energy_mwh,
            )
            .into_bytes()
        }
        ReportFormat::Json => {
            let c = &report.counts;
            let mut s = String::from("{\n");
            let _ = writeln!(s, "  \"accuracy\": {:.6},", report.accuracy);
            let _ = writeln!(s, "  \"total_time_s\": {:.6},", report.total_time_s);
            let _ = writeln!(
                s,
                "  \"avg_time_per_image_s\": {:.6},",
                report.avg_time_per_image_s
            );
            let _ = writeln!(s, "  \"cloud_fraction\": {:.6},", report.cloud_fraction);
            let _ = writeln!(s, "  \"total_energy_mwh\": {:.6},", report.total_energy_mwh);
            let _ = writeln!(
                s,
                "  \"energy_per_correct_mwh\": {},",
                opt6(report.energy_per_correct_mwh)
            );
            let _ = writeln!(
                s,
                "  \"counts\": {{\"n\": {}, \"correct\": {}, \"edge\": {}, \"cloud\": {}, \
                 \"complexity_routed\": {}, \"edge_accepted\": {}, \"edge_rejected\": {}}},",
                c.n,
                c.correct,
                c.edge,
                c.cloud,
                c.complexity_routed,
                c.edge_accepted,
                c.edge_rejected
            );
            let config = serde_json::to_string_pretty(&report.config).expect("config serializes");
            let _ = writeln!(s, "  \"config\": {}", config.replace('\n', "\n  "));
            s.push_str("}\n");
            s.into_bytes()
        }
    }
}

/// The per-sample decision trace as CSV, in dataset order.
pub fn emit_trace(rows: &[TraceRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(TRACE_CSV_HEADER.split(','))
        .expect("writing to a Vec cannot fail");
    for r in rows {
        w.write_record([
            r.key.clone(),
            format!("{:.6}", r.s_c),
            r.site.as_str().to_string(),
            r.reason.as_str().to_string(),
            r.label.as_str().to_string(),
            r.truth.as_str().to_string(),
            format!("{:.6}", r.p_defect),
            format!("{:.6}", r.t_contrib_s),
            format!("{:.6}", r.energy_mwh),
        ])
        .expect("writing to a Vec cannot fail");
    }
    w.into_inner().expect("flushing a Vec cannot fail")
}

/// One `{"path", "bboxes", "desc"}` object per line.
pub fn emit_defects(defects: &[(String, DefectReport)]) -> Vec<u8> {
    #[derive(Serialize)]
    struct Line<'a> {
        path: &'a str,
        bboxes: &'a [[f64; 4]],
        desc: &'a str,
    }
    let mut out = Vec::new();
    for (key, report) in defects {
        let line = Line {
            path: key,
            bboxes: &report.bboxes,
            desc: &report.desc,
        };
        serde_json::to_writer(&mut out, &line).expect("defect line serializes");
        out.push(b'\n');
    }
    out
}
