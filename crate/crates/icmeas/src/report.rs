//! Report rows and documents.

use std::fmt::Write as _;
use std::str::FromStr;

use icmeas_core::estimator::CurvePoint;
use icmeas_core::EstimateReport;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::formats::{num, opt};

pub const REPORT_SCHEMA: &str = "icmeas.report/1";
pub const REPORT_HEADER: &str = "label,S,T,mean,variance,std_err,abs_err,saving_factor";
pub const CURVE_HEADER: &str = "label,settings,shots,mean,std_err,abs_err";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    #[serde(rename = "S")]
    pub settings: u64,
    #[serde(rename = "T")]
    pub shots_per_setting: u32,
    pub mean: f64,
    pub variance: Option<f64>,
    pub std_err: Option<f64>,
    pub abs_err: Option<f64>,
    pub saving_factor: Option<f64>,
    pub variance_clamped: bool,
}

impl ReportRow {
    pub fn new(label: &str, report: &EstimateReport, reference: Option<f64>) -> Self {
        Self {
            label: label.into(),
            settings: report.settings,
            shots_per_setting: report.shots_per_setting,
            mean: report.mean,
            variance: report.variance,
            std_err: report.standard_error,
            abs_err: reference.map(|r| (report.mean - r).abs()),
            saving_factor: report.saving_factor,
            variance_clamped: report.variance_clamped,
        }
    }

    /// `abs_err / std_err`, when both exist and the error bar is nonzero.
    pub fn sigmas(&self) -> Option<f64> {
        match (self.abs_err, self.std_err) {
            (Some(a), Some(s)) if s > 0.0 => Some(a / s),
            _ => None,
        }
    }

    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.label,
            self.settings,
            self.shots_per_setting,
            num(self.mean),
            opt(self.variance),
            opt(self.std_err),
            opt(self.abs_err),
            opt(self.saving_factor)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub label: String,
    pub settings: u64,
    pub shots: u64,
    pub mean: f64,
    pub std_err: Option<f64>,
    pub abs_err: Option<f64>,
}

impl CurveRow {
    pub fn new(label: &str, p: &CurvePoint) -> Self {
        Self {
            label: label.into(),
            settings: p.settings,
            shots: p.shots,
            mean: p.mean,
            std_err: p.standard_error,
            abs_err: p.absolute_error,
        }
    }
}

/// Everything emitted for one repetition, in stable field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema: String,
    pub repetition: usize,
    pub seed: u64,
    pub reference: Option<f64>,
    pub reports: Vec<ReportRow>,
    pub curves: Vec<CurveRow>,
}

impl ReportDocument {
    pub fn report_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.reports {
            out.push_str(&r.csv_fields());
            out.push('\n');
        }
        out
    }

    pub fn curve_csv(&self) -> String {
        let mut out = format!("{CURVE_HEADER}\n");
        for c in &self.curves {
            writeln!(out, "{},{},{},{},{},{}", c.label, c.settings, c.shots, num(c.mean), opt(c.std_err), opt(c.abs_err)).unwrap();
        }
        out
    }

    pub fn json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.reports.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(HarnessError::Usage(format!("unknown report format `{other}` (expected csv or json)"))),
        }
    }
}
