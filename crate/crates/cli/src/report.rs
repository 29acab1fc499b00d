use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use vtc_core::costmodel::CostReport;
use vtc_core::dyn_kv::RetentionDecision;
use vtc_core::ttm::MergeRecord;

use crate::spec::RunSpec;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            _ => Err(HarnessError::Config(format!("unknown report format '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenSummary {
    pub visual_total: usize,
    pub text_tokens: usize,
    pub stage1_survivors: usize,
    pub retention_quota: usize,
    /// Measured `stage1_survivors / visual_total`.
    pub retained_ratio_stage1: f64,
    /// Measured `retention_quota / visual_total` (survivors when stage 2 is off).
    pub retained_ratio_final: f64,
    pub ideal_ratio_stage1: f64,
    pub ideal_ratio_final: f64,
    pub merge_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token: Option<u32>,
    pub readmitted: usize,
    pub evicted: usize,
    /// Visual rows attended by the deepest layer.
    pub active_visual: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jaccard_vs_one_shot: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_us: Option<f64>,
}

/// Report of `simulate` and `replay`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub build: String,
    pub command: &'static str,
    pub spec: RunSpec,
    pub tokens: TokenSummary,
    pub flops: CostReport,
    pub mean_swap_churn: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_step_latency_us: Option<f64>,
    pub steps: Vec<StepRecord>,
    pub audit_log: Vec<RetentionDecision>,
    #[serde(skip)]
    pub merge_records: Vec<MergeRecord>,
}

pub const STEP_CSV_COLUMNS: [&str; 7] = [
    "step",
    "token",
    "readmitted",
    "evicted",
    "active_visual",
    "jaccard_vs_one_shot",
    "latency_us",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunReport {
    pub fn to_json(&self) -> Result<String, HarnessError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Per-step table with [`STEP_CSV_COLUMNS`].
    pub fn write_steps_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(STEP_CSV_COLUMNS)?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                opt(s.token),
                s.readmitted.to_string(),
                s.evicted.to_string(),
                s.active_visual.to_string(),
                opt(s.jaccard_vs_one_shot),
                opt(s.latency_us),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, path: Option<&Path>, format: ReportFormat) -> Result<(), HarnessError> {
        let mut out: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(io::stdout().lock()),
        };
        match format {
            ReportFormat::Json => out.write_all(self.to_json()?.as_bytes())?,
            ReportFormat::Csv => self.write_steps_csv(&mut out)?,
        }
        out.flush()?;
        Ok(())
    }
}

pub fn write_jsonl<S: Serialize>(path: &Path, items: &[S]) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len().is_multiple_of(2) {
        (xs[m - 1] + xs[m]) / 2.0
    } else {
        xs[m]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_stats() {
        assert_eq!(mean([1.0, 2.0, 6.0]), Some(3.0));
        assert_eq!(mean(Vec::<f64>::new()), None);
        assert_eq!(median(vec![5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }
}
