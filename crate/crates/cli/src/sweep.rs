use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::simulate::simulate;
use crate::spec::RunSpec;
use crate::HarnessError;

/// Values swept for each axis; the cross product defines the cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepGrid {
    pub k_rates: Vec<f64>,
    pub eval_layers: Vec<usize>,
    pub p_rates: Vec<f64>,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::with_capacity(self.k_rates.len() * self.eval_layers.len() * self.p_rates.len());
        for &k in &self.k_rates {
            for &l in &self.eval_layers {
                for &p in &self.p_rates {
                    out.push((k, l, p));
                }
            }
        }
        out
    }
}

pub const SWEEP_CSV_COLUMNS: [&str; 10] = [
    "k_rate",
    "eval_layer",
    "p_rate",
    "status",
    "retained_ratio_stage1",
    "retained_ratio_final",
    "flops_ratio",
    "mean_swap_churn",
    "mean_step_latency_us",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One sweep cell; metric fields are empty when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k_rate: f64,
    pub eval_layer: usize,
    pub p_rate: f64,
    pub status: CellStatus,
    pub retained_ratio_stage1: Option<f64>,
    pub retained_ratio_final: Option<f64>,
    pub flops_ratio: Option<f64>,
    pub mean_swap_churn: Option<f64>,
    pub mean_step_latency_us: Option<f64>,
    pub error: Option<String>,
}

fn run_cell(base: &RunSpec, (k, l, p): (f64, usize, f64)) -> SweepRow {
    let mut spec = base.clone();
    spec.config.k_rate = k;
    spec.config.eval_layer = l;
    spec.config.p_rate = p;
    let mut row = SweepRow {
        k_rate: k,
        eval_layer: l,
        p_rate: p,
        status: CellStatus::Failed,
        retained_ratio_stage1: None,
        retained_ratio_final: None,
        flops_ratio: None,
        mean_swap_churn: None,
        mean_step_latency_us: None,
        error: None,
    };
    match simulate(&spec) {
        Ok(report) => {
            row.status = CellStatus::Ok;
            row.retained_ratio_stage1 = Some(report.tokens.retained_ratio_stage1);
            row.retained_ratio_final = Some(report.tokens.retained_ratio_final);
            row.flops_ratio = Some(report.flops.flops_ratio_vs_full);
            row.mean_swap_churn = Some(report.mean_swap_churn);
            row.mean_step_latency_us = report.mean_step_latency_us;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every cell of `grid` on top of `base` in parallel. Failing cells are
/// reported in their row and do not stop the sweep. Rows follow the cell order
/// of [`SweepGrid::cells`].
pub fn sweep(base: &RunSpec, grid: &SweepGrid) -> Vec<SweepRow> {
    grid.cells().into_par_iter().map(|cell| run_cell(base, cell)).collect()
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Writes [`SWEEP_CSV_COLUMNS`] followed by one line per row.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_CSV_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.k_rate.to_string(),
            r.eval_layer.to_string(),
            r.p_rate.to_string(),
            match r.status {
                CellStatus::Ok => "ok".to_owned(),
                CellStatus::Failed => "failed".to_owned(),
            },
            opt(&r.retained_ratio_stage1),
            opt(&r.retained_ratio_final),
            opt(&r.flops_ratio),
            opt(&r.mean_swap_churn),
            opt(&r.mean_step_latency_us),
            opt(&r.error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_are_the_cross_product_in_order() {
        let grid = SweepGrid {
            k_rates: vec![0.3, 0.5],
            eval_layers: vec![1],
            p_rates: vec![0.0, 0.7],
        };
        assert_eq!(
            grid.cells(),
            vec![(0.3, 1, 0.0), (0.3, 1, 0.7), (0.5, 1, 0.0), (0.5, 1, 0.7)]
        );
        assert!(SweepGrid::default().cells().is_empty());
    }

    #[test]
    fn empty_sweep_writes_header_only() {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), SWEEP_CSV_COLUMNS.join(",") + "\n");
    }
}
