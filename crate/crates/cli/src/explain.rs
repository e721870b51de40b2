//! Ranks the descriptive scores of one report and names likely causes.

use std::fmt::Write as _;

use iqa_core::QualityReport;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub feature_label: String,
    pub value: f64,
    pub flagged: bool,
    /// Present when flagged.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub image_id: String,
    pub overall: f64,
    pub threshold: f64,
    pub model_id: String,
    pub bank_fingerprint: String,
    /// Ascending by value; ties keep bank order.
    pub findings: Vec<Finding>,
}

/// Degradation usually behind a low score for the built-in features.
pub fn likely_cause(label: &str) -> Option<&'static str> {
    match label {
        "sharpness" => Some("blur"),
        "noise" => Some("noise"),
        "brightness" => Some("underexposure"),
        _ => None,
    }
}

fn message(label: &str) -> String {
    match likely_cause(label) {
        Some(cause) => format!("low {label} score: likely {cause}"),
        None => format!("low {label} score"),
    }
}

impl Explanation {
    /// A feature is flagged when its score is strictly below `threshold`.
    pub fn from_report(report: &QualityReport, threshold: f64) -> Self {
        let mut findings: Vec<Finding> = report
            .per_feature
            .iter()
            .map(|d| {
                let flagged = d.value < threshold;
                Finding {
                    feature_label: d.feature_label.clone(),
                    value: d.value,
                    flagged,
                    message: flagged.then(|| message(&d.feature_label)),
                }
            })
            .collect();
        findings.sort_by(|a, b| a.value.total_cmp(&b.value));
        Self {
            image_id: report.image_id.clone(),
            overall: report.overall,
            threshold,
            model_id: report.model_id.clone(),
            bank_fingerprint: report.bank_fingerprint.clone(),
            findings,
        }
    }

    pub fn flagged(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.flagged)
    }

    pub fn render(&self) -> String {
        let width = self
            .findings
            .iter()
            .map(|f| f.feature_label.chars().count())
            .max()
            .unwrap_or(0);
        let mut out = format!("{}: overall quality {:.2}\n", self.image_id, self.overall);
        for f in &self.findings {
            let _ = write!(out, "  {:<width$}  {:>6.2}", f.feature_label, f.value);
            if let Some(m) = &f.message {
                let _ = write!(out, "  <- {m}");
            }
            out.push('\n');
        }
        if self.flagged().next().is_none() {
            let _ = writeln!(out, "  no feature below {:.2}", self.threshold);
        }
        out
    }
}
