//! Metric logs and evaluation reports.

use mgtraj_core::data::Unit;
use mgtraj_core::metrics::MetricReport;
use mgtraj_core::train::StepLog;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Split};

pub const METRIC_CSV_HEADER: &str = "step,lr,L_p,L_v,L,ADE,FDE";

/// One training-log row; floats use the shortest round-trip representation.
pub fn metric_row(log: &StepLog) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        log.step, log.lr, log.position_loss, log.velocity_loss, log.loss, log.ade, log.fde
    )
}

pub const LOSS_CSV_HEADER: &str = "step,loss";

pub fn loss_curve_csv(losses: &[f64]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

/// Evaluation result written next to the checkpoint it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub checkpoint: String,
    pub split: Split,
    pub unit: Unit,
    pub ade: f64,
    pub fde: f64,
    pub per_stage_ade: Vec<f64>,
    pub samples: usize,
    pub config: ExperimentConfig,
}

impl ReportFile {
    pub fn new(checkpoint: String, split: Split, unit: Unit, report: &MetricReport, config: ExperimentConfig) -> Self {
        Self {
            checkpoint,
            split,
            unit,
            ade: report.ade,
            fde: report.fde,
            per_stage_ade: report.per_stage_ade.clone(),
            samples: report.samples,
            config,
        }
    }
}

pub const REPORT_CSV_HEADER: &str = "checkpoint,split,samples,ade,fde,per_stage_ade";

/// Flat row for sweep aggregation; per-stage values are `;`-separated.
pub fn report_row(r: &ReportFile) -> String {
    let split = match r.split {
        Split::Train => "train",
        Split::Test => "test",
    };
    format!(
        "{},{split},{},{},{},{}",
        r.checkpoint,
        r.samples,
        r.ade,
        r.fde,
        join_stages(&r.per_stage_ade)
    )
}

pub fn join_stages(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_row_layout() {
        let log = StepLog {
            step: 3,
            epoch: 0,
            lr: 0.001,
            position_loss: 0.5,
            velocity_loss: 0.25,
            loss: 1.75,
            ade: 0.1,
            fde: 0.2,
        };
        assert_eq!(metric_row(&log), "3,0.001,0.5,0.25,1.75,0.1,0.2");
        assert_eq!(METRIC_CSV_HEADER.split(',').count(), metric_row(&log).split(',').count());
    }

    #[test]
    fn loss_curve_layout() {
        assert_eq!(loss_curve_csv(&[1.5, 0.25]), "step,loss\n0,1.5\n1,0.25\n");
    }
}
