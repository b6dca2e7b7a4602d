use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStopPolicy {
    /// Stop after this many consecutive epochs without strict improvement.
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for EarlyStopPolicy {
    fn default() -> Self {
        Self {
            patience: 5,
            max_epochs: 128,
        }
    }
}

impl EarlyStopPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop(StopReason),
}

/// Tracks validation losses epoch by epoch. Only strictly smaller values
/// count as improvement; NaN never improves.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    policy: EarlyStopPolicy,
    epoch: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(policy: EarlyStopPolicy) -> Self {
        Self {
            policy,
            epoch: 0,
            best: None,
            since_best: 0,
        }
    }

    /// Records the validation loss of the next epoch. Returns whether this
    /// epoch is the new best and whether to stop.
    pub fn observe(&mut self, loss: f64) -> (bool, Decision) {
        self.epoch += 1;
        let improved = match self.best {
            None => !loss.is_nan(),
            Some((_, b)) => loss < b,
        };
        if improved {
            self.best = Some((self.epoch, loss));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        let decision = if self.since_best >= self.policy.patience {
            Decision::Stop(StopReason::Patience)
        } else if self.epoch >= self.policy.max_epochs {
            Decision::Stop(StopReason::MaxEpochs)
        } else {
            Decision::Continue
        };
        (improved, decision)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// 1-based epoch of the best loss so far.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.map(|(_, l)| l)
    }
}

/// Runs a scripted sequence through an [`EarlyStopper`]; returns the epoch
/// at which training stops (or the sequence length), the best epoch and the
/// reason.
pub fn replay(policy: EarlyStopPolicy, losses: &[f64]) -> (usize, Option<usize>, Option<StopReason>) {
    let mut s = EarlyStopper::new(policy);
    for &l in losses {
        if let (_, Decision::Stop(r)) = s.observe(l) {
            return (s.epoch(), s.best_epoch(), Some(r));
        }
    }
    (s.epoch(), s.best_epoch(), None)
}
