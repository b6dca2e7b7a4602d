use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    composite_loss, Decision, EarlyStopPolicy, EarlyStopper, EpochRecord, LossBreakdown, LossWeights, PhaseOutcome,
    Strategy, TiedDistance, TrainingHistory, TrainingPlan,
};
use crate::data::{Dataset, SpeakerRole, Split, Utterance};
use crate::error::{Error, Result};
use crate::model::{HiddenTrace, MultimodalModel, ParamId, ParamScope, SpeakerRef};
use crate::numerics::{mse_loss, AdamConfig, AdamState, GradientSet};

const MODALITY_SEED_SALT: u64 = 0x5eed_0f_c01_f11b;
const PHASE_TWO_SALT: u64 = 0x2;

/// Which forward paths a phase runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathMode {
    TextOnly,
    /// Speech path alone; its loss is reported as `loss_sub`.
    SpeechOnly,
    /// Both paths on every utterance with the composite loss.
    Joint,
    /// One modality per batch, chosen by a seeded fair coin.
    Stochastic,
}

/// Paths actually run for one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepPath {
    Text,
    Speech,
    Both,
}

/// What an observer sees after every optimiser step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub path: StepPath,
    pub breakdown: LossBreakdown,
    pub weights: LossWeights,
    pub grad_keys: Vec<ParamId>,
}

/// Training and validation utterances of the speakers in the embedding table.
#[derive(Clone, Debug)]
pub struct TrainingData<'a> {
    pub train: Vec<&'a Utterance>,
    pub valid: Vec<&'a Utterance>,
}

impl<'a> TrainingData<'a> {
    pub fn from_dataset(dataset: &'a Dataset) -> Self {
        Self {
            train: dataset.select(SpeakerRole::Train, Split::Train),
            valid: dataset.select(SpeakerRole::Train, Split::Valid),
        }
    }

    fn check(&self, needs_waveform: bool, needs_text: bool) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::EmptySplit("no training utterances".into()));
        }
        if self.valid.is_empty() {
            return Err(Error::EmptySplit("no validation utterances".into()));
        }
        for u in self.train.iter().chain(&self.valid) {
            if needs_waveform {
                u.waveform()?;
            }
            if needs_text {
                u.linguistic()?;
            }
        }
        Ok(())
    }
}

/// Everything one optimisation phase needs besides the model and data.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSettings {
    pub name: String,
    pub mode: PathMode,
    pub weights: LossWeights,
    pub scope: ParamScope,
    pub tied_layers: Vec<usize>,
    pub tied_distance: TiedDistance,
    pub early_stop: EarlyStopPolicy,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub train_split: String,
    pub valid_split: String,
}

impl PhaseSettings {
    fn from_plan(plan: &TrainingPlan, mode: PathMode, tied_layers: Vec<usize>) -> Self {
        Self {
            name: plan.strategy.name().to_string(),
            mode,
            weights: plan.weights,
            scope: ParamScope::All,
            tied_layers,
            tied_distance: plan.tied_distance,
            early_stop: plan.early_stop,
            adam: plan.adam,
            batch_size: plan.batch_size,
            seed: plan.seed,
            train_split: "train".into(),
            valid_split: "valid".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct UtteranceOutcome {
    breakdown: LossBreakdown,
    grads: Option<GradientSet<ParamId>>,
}

/// Epoch loop for one phase. The optimiser state and both RNG streams live
/// here, so consecutive `train_epoch` calls continue the same run.
pub struct Trainer<'o> {
    settings: PhaseSettings,
    adam: AdamState<ParamId>,
    shuffle_rng: ChaCha8Rng,
    modality_rng: ChaCha8Rng,
    observer: Option<&'o mut dyn FnMut(&StepRecord)>,
    epoch: usize,
    step: usize,
}

impl<'o> Trainer<'o> {
    pub fn new(settings: PhaseSettings) -> Self {
        Self {
            adam: AdamState::new(settings.adam),
            shuffle_rng: ChaCha8Rng::seed_from_u64(settings.seed),
            modality_rng: ChaCha8Rng::seed_from_u64(settings.seed ^ MODALITY_SEED_SALT),
            settings,
            observer: None,
            epoch: 0,
            step: 0,
        }
    }

    pub fn with_observer(mut self, observer: &'o mut dyn FnMut(&StepRecord)) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn settings(&self) -> &PhaseSettings {
        &self.settings
    }

    fn utterance(
        &self,
        model: &MultimodalModel,
        utt: &Utterance,
        path: StepPath,
        grad_scale: Option<f64>,
    ) -> Result<UtteranceOutcome> {
        let s = &self.settings;
        let speaker = model.speaker_id(&utt.speaker)?;
        let aligned = |t: &HiddenTrace| {
            if t.frames() == utt.frames() {
                Ok(())
            } else {
                Err(Error::Alignment(format!(
                    "utterance {}: {:?} path gives {} frames, target has {}",
                    utt.id,
                    t.modality(),
                    t.frames(),
                    utt.frames()
                )))
            }
        };
        let text = match path {
            StepPath::Text | StepPath::Both => {
                let t = model.forward_text(utt.linguistic()?, SpeakerRef::Id(speaker))?;
                aligned(&t)?;
                Some(t)
            }
            StepPath::Speech => None,
        };
        let speech = match path {
            StepPath::Speech | StepPath::Both => {
                let t = model.forward_speech(utt.waveform()?, SpeakerRef::Id(speaker))?;
                aligned(&t)?;
                Some(t)
            }
            StepPath::Text => None,
        };

        match (text, speech) {
            (Some(main), sub) => {
                let weights = if sub.is_some() { s.weights } else { LossWeights::new(0.0, 0.0) };
                let c = composite_loss(
                    main.common(),
                    sub.as_ref().map(HiddenTrace::common),
                    &utt.acoustic,
                    weights,
                    &s.tied_layers,
                    s.tied_distance,
                )?;
                let mut breakdown = c.breakdown;
                if sub.is_none() {
                    breakdown = LossBreakdown::compose(breakdown.loss_main, 0.0, 0.0, s.weights);
                }
                let grads = match grad_scale {
                    None => None,
                    Some(k) => {
                        let scale = |m: &std::collections::BTreeMap<usize, crate::numerics::Matrix>| {
                            m.iter().map(|(l, g)| (*l, g.scaled(k))).collect()
                        };
                        let mut g = model.backward_path(&main, &c.d_pred_main.scaled(k), &scale(&c.dh_main), &s.scope)?;
                        if let (Some(sub), Some(d_sub)) = (&sub, &c.d_pred_sub) {
                            g.merge(model.backward_path(sub, &d_sub.scaled(k), &scale(&c.dh_sub), &s.scope)?);
                        }
                        Some(g)
                    }
                };
                Ok(UtteranceOutcome { breakdown, grads })
            }
            (None, Some(sub)) => {
                let (loss, d) = mse_loss(sub.prediction(), &utt.acoustic)?;
                let breakdown = LossBreakdown::compose(0.0, loss, 0.0, s.weights);
                let grads = match grad_scale {
                    None => None,
                    Some(k) => Some(model.backward_path(
                        &sub,
                        &d.scaled(s.weights.alpha * k),
                        &Default::default(),
                        &s.scope,
                    )?),
                };
                Ok(UtteranceOutcome { breakdown, grads })
            }
            (None, None) => unreachable!("every path runs at least one modality"),
        }
    }

    fn step_path(&mut self) -> StepPath {
        match self.settings.mode {
            PathMode::TextOnly => StepPath::Text,
            PathMode::SpeechOnly => StepPath::Speech,
            PathMode::Joint => StepPath::Both,
            PathMode::Stochastic => {
                if self.modality_rng.random_bool(0.5) {
                    StepPath::Speech
                } else {
                    StepPath::Text
                }
            }
        }
    }

    fn eval_path(&self) -> StepPath {
        match self.settings.mode {
            PathMode::TextOnly => StepPath::Text,
            PathMode::SpeechOnly => StepPath::Speech,
            PathMode::Joint | PathMode::Stochastic => StepPath::Both,
        }
    }

    /// One shuffled pass with an optimiser step per batch. Returns the mean
    /// per-utterance breakdown observed while training.
    pub fn train_epoch(&mut self, model: &mut MultimodalModel, utterances: &[&Utterance]) -> Result<LossBreakdown> {
        if utterances.is_empty() {
            return Err(Error::EmptySplit("no training utterances".into()));
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..utterances.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut sum = Accumulator::default();
        for batch in order.chunks(self.settings.batch_size) {
            let path = self.step_path();
            let k = 1.0 / batch.len() as f64;
            let mut grads = GradientSet::new();
            let mut batch_sum = Accumulator::default();
            for &i in batch {
                let out = self.utterance(model, utterances[i], path, Some(k))?;
                grads.merge(out.grads.expect("requested"));
                batch_sum.add(&out.breakdown);
                sum.add(&out.breakdown);
            }
            self.adam.step(model, &grads)?;
            self.step += 1;
            if let Some(obs) = self.observer.as_mut() {
                obs(&StepRecord {
                    epoch: self.epoch,
                    step: self.step,
                    path,
                    breakdown: batch_sum.mean(),
                    weights: self.settings.weights,
                    grad_keys: grads.keys().cloned().collect(),
                });
            }
        }
        Ok(sum.mean())
    }

    /// Mean per-utterance breakdown without updating anything.
    pub fn evaluate(&self, model: &MultimodalModel, utterances: &[&Utterance]) -> Result<LossBreakdown> {
        if utterances.is_empty() {
            return Err(Error::EmptySplit("no validation utterances".into()));
        }
        let path = self.eval_path();
        let mut sum = Accumulator::default();
        for u in utterances {
            sum.add(&self.utterance(model, u, path, None)?.breakdown);
        }
        Ok(sum.mean())
    }

    /// Trains until early stopping, leaving the best-validation parameters
    /// in `model`.
    pub fn run(&mut self, model: &mut MultimodalModel, data: &TrainingData<'_>) -> Result<(Vec<EpochRecord>, PhaseOutcome)> {
        let mut stopper = EarlyStopper::new(self.settings.early_stop);
        let mut records = Vec::new();
        let mut best = model.clone();
        loop {
            let train = self.train_epoch(model, &data.train)?;
            let valid = self.evaluate(model, &data.valid)?;
            log::debug!(
                "{} epoch {}: train {:.6} valid {:.6}",
                self.settings.name,
                self.epoch,
                train.total,
                valid.total
            );
            records.push(EpochRecord {
                epoch: self.epoch,
                split: self.settings.train_split.clone(),
                breakdown: train,
            });
            records.push(EpochRecord {
                epoch: self.epoch,
                split: self.settings.valid_split.clone(),
                breakdown: valid,
            });
            let (improved, decision) = stopper.observe(valid.total);
            if improved {
                best = model.clone();
            }
            if let Decision::Stop(reason) = decision {
                *model = best;
                let outcome = PhaseOutcome {
                    name: self.settings.name.clone(),
                    epochs_run: stopper.epoch(),
                    best_epoch: stopper.best_epoch().unwrap_or(0),
                    stop_reason: reason,
                };
                log::info!(
                    "{}: stopped after {} epochs ({:?}), best epoch {}",
                    outcome.name,
                    outcome.epochs_run,
                    reason,
                    outcome.best_epoch
                );
                return Ok((records, outcome));
            }
        }
    }
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    main: f64,
    sub: f64,
    tied: f64,
    total: f64,
}

impl Accumulator {
    fn add(&mut self, b: &LossBreakdown) {
        self.n += 1;
        self.main += b.loss_main;
        self.sub += b.loss_sub;
        self.tied += b.tied_penalty;
        self.total += b.total;
    }

    fn mean(&self) -> LossBreakdown {
        let k = 1.0 / self.n.max(1) as f64;
        LossBreakdown {
            loss_main: self.main * k,
            loss_sub: self.sub * k,
            tied_penalty: self.tied * k,
            total: self.total * k,
        }
    }
}

fn preflight(model: &MultimodalModel, plan: &TrainingPlan) -> Result<()> {
    plan.validate()?;
    if plan.strategy.needs_speech_encoder() && !model.has_speech_encoder() {
        return Err(Error::Capability(format!("strategy {} needs a model with a speech encoder", plan.strategy)));
    }
    Ok(())
}

/// Trains `model` according to `plan`. Step-by-step plans are routed to
/// [`train_step_by_step`].
pub fn fit(model: &mut MultimodalModel, data: &TrainingData<'_>, plan: &TrainingPlan) -> Result<TrainingHistory> {
    fit_observed(model, data, plan, &mut |_| {})
}

pub fn fit_observed(
    model: &mut MultimodalModel,
    data: &TrainingData<'_>,
    plan: &TrainingPlan,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<TrainingHistory> {
    preflight(model, plan)?;
    let mode = match plan.strategy {
        Strategy::StepByStep => return train_step_by_step_observed(model, data, plan, observer),
        Strategy::Vanilla => PathMode::TextOnly,
        Strategy::Stochastic => PathMode::Stochastic,
        Strategy::JointGoal | Strategy::TiedLayers | Strategy::JointGoalTied => PathMode::Joint,
    };
    data.check(mode != PathMode::TextOnly, true)?;
    let tied = model.config().tied_layer_indices.clone();
    let settings = PhaseSettings::from_plan(plan, mode, tied);
    let (records, outcome) = Trainer::new(settings).with_observer(observer).run(model, data)?;
    if mode != PathMode::TextOnly {
        model.mark_speech_encoder_trained();
    }
    Ok(TrainingHistory {
        records,
        phases: vec![outcome],
    })
}

/// Phase 1 trains the text path (every parameter it touches); phase 2
/// trains only the speech encoder through the frozen common stack against
/// the same targets.
pub fn train_step_by_step(model: &mut MultimodalModel, data: &TrainingData<'_>, plan: &TrainingPlan) -> Result<TrainingHistory> {
    train_step_by_step_observed(model, data, plan, &mut |_| {})
}

pub fn train_step_by_step_observed(
    model: &mut MultimodalModel,
    data: &TrainingData<'_>,
    plan: &TrainingPlan,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<TrainingHistory> {
    if plan.strategy != Strategy::StepByStep {
        return Err(Error::Config(format!("step-by-step training given a {} plan", plan.strategy)));
    }
    preflight(model, plan)?;
    data.check(true, true)?;

    let mut first = PhaseSettings::from_plan(plan, PathMode::TextOnly, Vec::new());
    first.name = "SS/text".into();
    let (mut records, p1) = Trainer::new(first).with_observer(&mut *observer).run(model, data)?;

    let history = speech_encoder_phase(model, data, plan, observer)?;
    records.extend(history.records);
    let mut phases = vec![p1];
    phases.extend(history.phases);
    Ok(TrainingHistory { records, phases })
}

/// The second step-by-step phase on its own: optimises only the speech
/// encoder so that the speech path reproduces the targets through the
/// already-trained common stack.
pub fn train_speech_encoder(model: &mut MultimodalModel, data: &TrainingData<'_>, plan: &TrainingPlan) -> Result<TrainingHistory> {
    preflight(model, plan)?;
    data.check(true, false)?;
    speech_encoder_phase(model, data, plan, &mut |_| {})
}

fn speech_encoder_phase(
    model: &mut MultimodalModel,
    data: &TrainingData<'_>,
    plan: &TrainingPlan,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<TrainingHistory> {
    let mut settings = PhaseSettings::from_plan(plan, PathMode::SpeechOnly, Vec::new());
    settings.name = "SS/speech".into();
    settings.weights = LossWeights::new(1.0, 0.0);
    settings.scope = ParamScope::SpeechEncoderOnly;
    settings.seed = plan.seed ^ PHASE_TWO_SALT;
    settings.train_split = "speech-train".into();
    settings.valid_split = "speech-valid".into();
    let (records, outcome) = Trainer::new(settings).with_observer(observer).run(model, data)?;
    model.mark_speech_encoder_trained();
    Ok(TrainingHistory {
        records,
        phases: vec![outcome],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SyntheticTaskSpec};
    use crate::model::{ConvConfig, ModelConfig};
    use crate::numerics::ParameterStore;

    fn spec(seed: u64) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            num_train_speakers: 3,
            num_adapt_speakers: 0,
            utterances_per_speaker: 4,
            valid_per_speaker: 1,
            test_per_speaker: 1,
            min_frames: 8,
            max_frames: 12,
            seed,
            ..SyntheticTaskSpec::default()
        }
    }

    fn config() -> ModelConfig {
        ModelConfig {
            hidden_width: 16,
            embedding_dim: 4,
            conv: ConvConfig::centered(160, 80, 16),
            ..ModelConfig::desk(30, 26)
        }
    }

    fn model_for(d: &Dataset, cfg: ModelConfig, seed: u64) -> MultimodalModel {
        MultimodalModel::build(cfg, d.speaker_labels(SpeakerRole::Train), seed).unwrap()
    }

    fn short(strategy: Strategy, seed: u64, epochs: usize) -> TrainingPlan {
        TrainingPlan {
            early_stop: EarlyStopPolicy { patience: 5, max_epochs: epochs },
            ..TrainingPlan::for_strategy(strategy, seed)
        }
    }

    fn snapshot(m: &MultimodalModel, keep: impl Fn(&ParamId) -> bool) -> Vec<(ParamId, Vec<u64>)> {
        m.param_ids()
            .into_iter()
            .filter(|id| keep(id))
            .map(|id| {
                let bits = m.param(&id).unwrap().iter().map(|v| v.to_bits()).collect();
                (id, bits)
            })
            .collect()
    }

    #[test]
    fn vanilla_never_runs_the_speech_path() {
        let d = generate_dataset(&spec(1)).unwrap();
        let mut m = model_for(&d, config().vanilla(), 1);
        let mut paths = Vec::new();
        fit_observed(&mut m, &TrainingData::from_dataset(&d), &short(Strategy::Vanilla, 1, 2), &mut |r| {
            paths.push(r.path)
        })
        .unwrap();
        assert!(!paths.is_empty() && paths.iter().all(|p| *p == StepPath::Text));
        assert!(!m.speech_encoder_trained());
    }

    #[test]
    fn recorded_sub_loss_is_speech_path_mse() {
        let d = generate_dataset(&spec(2)).unwrap();
        let m = model_for(&d, config(), 2);
        let u = d.select(SpeakerRole::Train, Split::Valid)[1];
        let trainer = Trainer::new(PhaseSettings::from_plan(&short(Strategy::JointGoal, 2, 1), PathMode::Joint, vec![1]));
        let b = trainer.evaluate(&m, &[u]).unwrap();
        let id = m.speaker_id(&u.speaker).unwrap();
        let speech = m.forward_speech(u.waveform().unwrap(), id.into()).unwrap();
        let (oracle, _) = mse_loss(speech.prediction(), &u.acoustic).unwrap();
        assert_eq!(b.loss_sub, oracle);
        assert_eq!(b.total, b.loss_main + 0.5 * b.loss_sub);
    }

    #[test]
    fn stochastic_choices_are_seeded() {
        let d = generate_dataset(&spec(3)).unwrap();
        let run = |seed| {
            let mut m = model_for(&d, config(), 3);
            let mut paths = Vec::new();
            fit_observed(&mut m, &TrainingData::from_dataset(&d), &short(Strategy::Stochastic, seed, 2), &mut |r| {
                paths.push(r.path)
            })
            .unwrap();
            paths
        };
        let a = run(11);
        assert_eq!(a, run(11));
        assert_ne!(a, run(12));
        assert!(a.contains(&StepPath::Text) && a.contains(&StepPath::Speech));
        assert!(!a.contains(&StepPath::Both));
    }

    #[test]
    fn every_step_recomposes() {
        let d = generate_dataset(&spec(4)).unwrap();
        for strategy in [Strategy::JointGoalTied, Strategy::Stochastic, Strategy::StepByStep] {
            let mut m = model_for(&d, config(), 4);
            let mut worst: f64 = 0.0;
            let mut steps = 0;
            let plan = TrainingPlan {
                batch_size: 3,
                ..short(strategy, 4, 2)
            };
            fit_observed(&mut m, &TrainingData::from_dataset(&d), &plan, &mut |r| {
                steps += 1;
                worst = worst.max(r.breakdown.recomposition_error(r.weights));
            })
            .unwrap();
            assert!(steps > 0);
            assert!(worst <= 1e-12, "{strategy}: {worst:e}");
        }
    }

    #[test]
    fn joint_goal_reduces_training_loss() {
        for seed in 0..3 {
            let d = generate_dataset(&spec(10 + seed)).unwrap();
            let mut m = model_for(&d, config(), seed);
            let h = fit(&mut m, &TrainingData::from_dataset(&d), &short(Strategy::JointGoal, seed, 8)).unwrap();
            let train = h.split("train");
            assert!(train.last().unwrap().breakdown.total < train[0].breakdown.total);
            assert!(h.stopped_epoch() <= 8);
            assert!(m.speech_encoder_trained());
        }
    }

    #[test]
    fn vanishing_alpha_matches_text_only_training() {
        let d = generate_dataset(&spec(5)).unwrap();
        let data = TrainingData::from_dataset(&d);
        let plan = short(Strategy::JointGoal, 5, 1);
        let mut text = model_for(&d, config(), 5);
        let mut joint = text.clone();
        let mut a = PhaseSettings::from_plan(&plan, PathMode::TextOnly, vec![1]);
        a.weights = LossWeights::new(0.0, 0.0);
        let mut b = a.clone();
        b.mode = PathMode::Joint;
        let (mut ta, mut tb) = (Trainer::new(a), Trainer::new(b));
        for _ in 0..2 {
            ta.train_epoch(&mut text, &data.train).unwrap();
            tb.train_epoch(&mut joint, &data.train).unwrap();
        }
        let not_speech = |id: &ParamId| !id.is_speech_encoder();
        assert_eq!(snapshot(&text, not_speech), snapshot(&joint, not_speech));
        assert_eq!(snapshot(&text, ParamId::is_speech_encoder), snapshot(&joint, ParamId::is_speech_encoder));
    }

    #[test]
    fn speech_phase_only_touches_the_speech_encoder() {
        let d = generate_dataset(&spec(6)).unwrap();
        let data = TrainingData::from_dataset(&d);
        let mut m = model_for(&d, config(), 6);
        let plan = short(Strategy::StepByStep, 6, 3);
        let mut phase1 = PhaseSettings::from_plan(&plan, PathMode::TextOnly, vec![]);
        phase1.early_stop.max_epochs = 2;
        Trainer::new(phase1).run(&mut m, &data).unwrap();
        let frozen = |id: &ParamId| !id.is_speech_encoder();
        let before = snapshot(&m, frozen);
        let speech_before = snapshot(&m, ParamId::is_speech_encoder);

        let mut keys_ok = true;
        let mut settings = PhaseSettings::from_plan(&plan, PathMode::SpeechOnly, vec![]);
        settings.weights = LossWeights::new(1.0, 0.0);
        settings.scope = ParamScope::SpeechEncoderOnly;
        let mut obs = |r: &StepRecord| keys_ok &= r.grad_keys.iter().all(ParamId::is_speech_encoder);
        let (records, _) = Trainer::new(settings).with_observer(&mut obs).run(&mut m, &data).unwrap();
        assert!(keys_ok);
        assert_eq!(before, snapshot(&m, frozen));
        assert_ne!(speech_before, snapshot(&m, ParamId::is_speech_encoder));
        let train: Vec<_> = records.iter().filter(|r| r.split == "train").collect();
        assert!(train.last().unwrap().breakdown.loss_sub < train[0].breakdown.loss_sub);
    }

    #[test]
    fn step_by_step_history_has_both_phases() {
        let d = generate_dataset(&spec(7)).unwrap();
        let mut m = model_for(&d, config(), 7);
        let h = fit(&mut m, &TrainingData::from_dataset(&d), &short(Strategy::StepByStep, 7, 2)).unwrap();
        assert_eq!(h.phases.len(), 2);
        assert_eq!(h.split("speech-valid").len(), 2);
        assert!(m.speech_encoder_trained());
        let csv = h.to_csv();
        assert!(csv.starts_with("epoch,split,loss_main,loss_sub,tied_penalty,total\n"));
        assert_eq!(csv.lines().count(), 1 + 8);
    }

    #[test]
    fn missing_inputs_and_capabilities() {
        let mut d = generate_dataset(&spec(8)).unwrap();
        let mut vl = model_for(&d, config().vanilla(), 8);
        assert!(matches!(
            fit(&mut vl, &TrainingData::from_dataset(&d), &short(Strategy::JointGoal, 8, 1)),
            Err(Error::Capability(_))
        ));
        let mut m = model_for(&d, config(), 8);
        let empty = TrainingData { train: d.select(SpeakerRole::Train, Split::Train), valid: vec![] };
        assert!(matches!(fit(&mut m, &empty, &short(Strategy::JointGoal, 8, 1)), Err(Error::EmptySplit(_))));
        d.utterances[0].waveform = None;
        assert!(matches!(
            fit(&mut m, &TrainingData::from_dataset(&d), &short(Strategy::JointGoal, 8, 1)),
            Err(Error::MissingData(_))
        ));
        fit(&mut m, &TrainingData::from_dataset(&d), &short(Strategy::Vanilla, 8, 1)).unwrap();
    }

    #[test]
    fn same_seed_same_result() {
        let d = generate_dataset(&spec(9)).unwrap();
        let run = || {
            let mut m = model_for(&d, config(), 9);
            let h = fit(&mut m, &TrainingData::from_dataset(&d), &short(Strategy::TiedLayers, 9, 2)).unwrap();
            (m, h)
        };
        assert_eq!(run(), run());
    }
}
