//! Experiment configuration file (TOML).
//!
//! ```toml
//! seed = 1                 # drives corpus generation and training
//! paper_dims = false       # hidden 1024 / embedding 128 instead of 128 / 16
//! # out = "runs/exp1"
//! # corpus = "data/corpus" # existing corpus; otherwise generated from [task]
//!
//! [task]                   # synthetic task, any subset of fields
//! num_train_speakers = 8
//!
//! [training]
//! strategy = "JG"
//! alpha = 0.5              # required by STOCH, JG, JG+TL; never implied
//! # beta = 1.0             # required by TL, JG+TL
//! tied_distance = "squared_euclidean_mean"
//! patience = 5
//! max_epochs = 128
//! batch_size = 1
//! learning_rate = 0.001
//!
//! [adaptation]
//! sizes = [10, 40, 160]
//! modes = ["supervised", "unsupervised"]
//! workers = 1
//!
//! [reproduce]
//! seeds = [1, 2, 3]
//! strategies = ["VL", "SS", "JG", "TL", "JG+TL"]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use modaladapt::adaptation::AdaptationMode;
use modaladapt::data::SyntheticTaskSpec;
use modaladapt::numerics::AdamConfig;
use modaladapt::training::{EarlyStopPolicy, LossWeights, Strategy, TiedDistance, TrainingPlan};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paper_dims: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    pub task: SyntheticTaskSpec,
    pub training: TrainingSection,
    pub adaptation: AdaptationSection,
    pub reproduce: ReproduceSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub strategy: Strategy,
    /// Not filled in from the strategy when a `[training]` section is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub tied_distance: TiedDistance,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationSection {
    pub sizes: Vec<usize>,
    pub modes: Vec<AdaptationMode>,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproduceSection {
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            paper_dims: false,
            out: None,
            corpus: None,
            task: SyntheticTaskSpec::default(),
            training: TrainingSection::default(),
            adaptation: AdaptationSection::default(),
            reproduce: ReproduceSection::default(),
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection::standard(Strategy::JointGoal)
    }
}

impl Default for AdaptationSection {
    fn default() -> Self {
        Self {
            sizes: vec![10, 40, 160],
            modes: vec![AdaptationMode::Supervised, AdaptationMode::Unsupervised],
            workers: 1,
        }
    }
}

impl Default for ReproduceSection {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            strategies: vec![
                Strategy::Vanilla,
                Strategy::StepByStep,
                Strategy::JointGoal,
                Strategy::TiedLayers,
                Strategy::JointGoalTied,
            ],
        }
    }
}

impl TrainingSection {
    /// The strategy with its standard loss weights and default stopping.
    pub fn standard(strategy: Strategy) -> Self {
        let w = strategy.default_weights();
        let early = EarlyStopPolicy::default();
        Self {
            strategy,
            alpha: (w.alpha > 0.0).then_some(w.alpha),
            beta: (w.beta > 0.0).then_some(w.beta),
            tied_distance: TiedDistance::default(),
            patience: early.patience,
            max_epochs: early.max_epochs,
            batch_size: 1,
            learning_rate: AdamConfig::default().learning_rate,
        }
    }

    /// Same settings for another strategy, with that strategy's standard
    /// weights.
    pub fn for_strategy(&self, strategy: Strategy) -> Self {
        let standard = Self::standard(strategy);
        Self {
            strategy,
            alpha: standard.alpha,
            beta: standard.beta,
            ..self.clone()
        }
    }

    /// Absent weights count as 0, so e.g. JG without `alpha` fails
    /// validation.
    pub fn plan(&self, seed: u64) -> Result<TrainingPlan> {
        let plan = TrainingPlan {
            strategy: self.strategy,
            weights: LossWeights::new(self.alpha.unwrap_or(0.0), self.beta.unwrap_or(0.0)),
            tied_distance: self.tied_distance,
            early_stop: EarlyStopPolicy {
                patience: self.patience,
                max_epochs: self.max_epochs,
            },
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            seed,
        };
        plan.validate().context("invalid [training] section")?;
        Ok(plan)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: ExperimentConfig = toml::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))?;
        if let Some(corpus) = &config.corpus {
            if corpus.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.corpus = Some(base.join(corpus));
            }
        }
        Ok(config)
    }

    /// Task spec with the experiment seed applied.
    pub fn task_spec(&self) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            seed: self.seed,
            ..self.task.clone()
        }
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        self.task_spec().validate().context("invalid [task] section")?;
        self.training.plan(self.seed)?;
        if self.adaptation.workers == 0 {
            bail!("[adaptation] workers must be >= 1");
        }
        if self.adaptation.modes.is_empty() {
            bail!("[adaptation] modes is empty");
        }
        if self.adaptation.sizes.is_empty() || self.adaptation.sizes.windows(2).any(|w| w[0] >= w[1]) {
            bail!("[adaptation] sizes must be non-empty and strictly ascending, got {:?}", self.adaptation.sizes);
        }
        if self.reproduce.seeds.is_empty() || self.reproduce.strategies.is_empty() {
            bail!("[reproduce] needs at least one seed and one strategy");
        }
        for &s in &self.reproduce.strategies {
            self.training.for_strategy(s).plan(self.seed)?;
        }
        if let Some(c) = &self.corpus {
            if !c.exists() {
                bail!("corpus {} does not exist", c.display());
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
