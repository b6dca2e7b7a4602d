use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EarlyStopPolicy, TiedDistance};
use crate::error::{Error, Result};
use crate::numerics::AdamConfig;

/// Training strategies. `Display`/`FromStr` use the short names
/// `VL`, `SS`, `STOCH`, `JG`, `TL`, `JG+TL` (`JG_TL` is also accepted).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    /// Text path only, every layer speaker-aware, no speech encoder.
    Vanilla,
    /// Text path first, then the speech encoder against the frozen stack.
    StepByStep,
    /// Each batch uses one randomly chosen modality.
    Stochastic,
    JointGoal,
    TiedLayers,
    JointGoalTied,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Vanilla,
        Strategy::StepByStep,
        Strategy::Stochastic,
        Strategy::JointGoal,
        Strategy::TiedLayers,
        Strategy::JointGoalTied,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Vanilla => "VL",
            Strategy::StepByStep => "SS",
            Strategy::Stochastic => "STOCH",
            Strategy::JointGoal => "JG",
            Strategy::TiedLayers => "TL",
            Strategy::JointGoalTied => "JG+TL",
        }
    }

    pub fn needs_speech_encoder(self) -> bool {
        self != Strategy::Vanilla
    }

    pub fn default_weights(self) -> LossWeights {
        match self {
            Strategy::Vanilla | Strategy::StepByStep => LossWeights::new(0.0, 0.0),
            Strategy::Stochastic => LossWeights::new(1.0, 0.0),
            Strategy::JointGoal => LossWeights::new(0.5, 0.0),
            Strategy::TiedLayers => LossWeights::new(0.0, 1.0),
            Strategy::JointGoalTied => LossWeights::new(0.2, 0.2),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "VL" => Ok(Strategy::Vanilla),
            "SS" => Ok(Strategy::StepByStep),
            "STOCH" => Ok(Strategy::Stochastic),
            "JG" => Ok(Strategy::JointGoal),
            "TL" => Ok(Strategy::TiedLayers),
            "JG+TL" | "JG_TL" => Ok(Strategy::JointGoalTied),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected VL, SS, STOCH, JG, TL or JG+TL)"
            ))),
        }
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.name().to_string()
    }
}

/// `alpha` weighs the speech-path loss, `beta` the tied-layer penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub const fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub strategy: Strategy,
    pub weights: LossWeights,
    #[serde(default)]
    pub tied_distance: TiedDistance,
    #[serde(default)]
    pub early_stop: EarlyStopPolicy,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Utterances per optimiser step.
    #[serde(default = "one")]
    pub batch_size: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl TrainingPlan {
    /// Plan with the strategy's standard weights and default settings.
    pub fn for_strategy(strategy: Strategy, seed: u64) -> Self {
        Self {
            strategy,
            weights: strategy.default_weights(),
            tied_distance: TiedDistance::default(),
            early_stop: EarlyStopPolicy::default(),
            adam: AdamConfig::default(),
            batch_size: 1,
            seed,
        }
    }

    /// Rejects weight combinations that do not belong to the strategy, e.g.
    /// JG without alpha or TL with a speech-loss weight.
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.early_stop.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let LossWeights { alpha, beta } = self.weights;
        let s = self.strategy;
        let need = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::Config(format!("{s}: {msg}"))) };
        match s {
            Strategy::Vanilla | Strategy::StepByStep => need(alpha == 0.0 && beta == 0.0, "takes no alpha or beta"),
            Strategy::Stochastic => need(alpha > 0.0 && beta == 0.0, "requires alpha > 0 and no beta"),
            Strategy::JointGoal => need(alpha > 0.0 && beta == 0.0, "requires alpha > 0 and no beta"),
            Strategy::TiedLayers => need(alpha == 0.0 && beta > 0.0, "requires beta > 0 and no alpha"),
            Strategy::JointGoalTied => need(alpha > 0.0 && beta > 0.0, "requires both alpha > 0 and beta > 0"),
        }
    }
}
