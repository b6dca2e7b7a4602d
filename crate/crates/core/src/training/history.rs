use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{LossBreakdown, StopReason};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `train`, `valid`, or `speech-train` / `speech-valid` for the second
    /// step-by-step phase.
    pub split: String,
    pub breakdown: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub name: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    pub phases: Vec<PhaseOutcome>,
}

impl TrainingHistory {
    pub const CSV_HEADER: &'static str = "epoch,split,loss_main,loss_sub,tied_penalty,total";

    /// Epochs run by the last phase.
    pub fn stopped_epoch(&self) -> usize {
        self.phases.last().map_or(0, |p| p.epochs_run)
    }

    pub fn best_epoch(&self) -> usize {
        self.phases.last().map_or(0, |p| p.best_epoch)
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.phases.last().map(|p| p.stop_reason)
    }

    pub fn split(&self, split: &str) -> Vec<&EpochRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let b = &r.breakdown;
            // `{:?}` on f64 prints the shortest round-tripping form.
            writeln!(
                out,
                "{},{},{:?},{:?},{:?},{:?}",
                r.epoch, r.split, b.loss_main, b.loss_sub, b.tied_penalty, b.total
            )
            .expect("writing to a String");
        }
        out
    }
}
