//! In-browser demo. A small synthetic corpus (three voices to train on, one
//! held out) backs three operations, each returning JSON:
//!
//! - `train`: fit a model with a chosen strategy, return the loss curves
//! - `adapt`: fit the held-out voice's embedding from `n` utterances,
//!   return its distortion before and after plus the embedding's loss curve
//! - `contour`: F0 tracks of one test utterance: reference, the untouched
//!   mean embedding, and the last adapted embedding
//!
//! [`Demo`] holds the logic and is tested natively; [`DemoHandle`] is the
//! wasm-bindgen surface.

use modaladapt::adaptation::{adapt, init_new_speaker, synthesize_features, AdaptationJob, AdaptationMode, InitPolicy};
use modaladapt::data::{generate_dataset, Dataset, SpeakerRole, Split, SyntheticTaskSpec, Utterance};
use modaladapt::experiment::{model_config_for, pooled_mcd, score_embedding, train_model};
use modaladapt::metrics::{FeatureLayout, RowMeta};
use modaladapt::model::MultimodalModel;
use modaladapt::training::{EarlyStopPolicy, Strategy, TrainingPlan};
use modaladapt::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub fn demo_task(seed: u64) -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        num_train_speakers: 3,
        num_adapt_speakers: 1,
        utterances_per_speaker: 8,
        adapt_utterances_per_speaker: 16,
        valid_per_speaker: 2,
        test_per_speaker: 2,
        min_frames: 12,
        max_frames: 18,
        seed,
        ..SyntheticTaskSpec::default()
    }
}

#[derive(Debug, Serialize)]
pub struct LossCurve {
    pub strategy: String,
    pub train: Vec<f64>,
    pub valid: Vec<f64>,
    pub best_epoch: usize,
    pub multispeaker_mcd_db: f64,
}

#[derive(Debug, Serialize)]
pub struct Adaptation {
    pub mode: String,
    pub utterances: usize,
    pub baseline_mcd_db: f64,
    pub adapted_mcd_db: f64,
    pub train: Vec<f64>,
    pub valid: Vec<f64>,
}

/// F0 in Hz per frame; `None` where the frame is unvoiced.
#[derive(Debug, Serialize)]
pub struct Contours {
    pub utterance: String,
    pub reference: Vec<Option<f64>>,
    pub baseline: Vec<Option<f64>>,
    pub adapted: Option<Vec<Option<f64>>>,
}

pub struct Demo {
    dataset: Dataset,
    seed: u64,
    layout: FeatureLayout,
    model: Option<MultimodalModel>,
    adapted: Option<Vec<f64>>,
}

fn meta(mode: &str) -> RowMeta {
    RowMeta {
        model: "demo".into(),
        strategy: "-".into(),
        mode: mode.into(),
        adapt_utterances: 0,
    }
}

fn f0_track(features: &modaladapt::numerics::Matrix, layout: &FeatureLayout) -> Vec<Option<f64>> {
    let (lf0, vuv) = (layout.log_f0.expect("synthetic layout"), layout.voicing.expect("synthetic layout"));
    (0..features.rows())
        .map(|t| {
            let row = features.row(t);
            (row[vuv] > layout.voicing_threshold).then(|| row[lf0].exp())
        })
        .collect()
}

impl Demo {
    pub fn new(seed: u64) -> Result<Self> {
        Ok(Self {
            dataset: generate_dataset(&demo_task(seed))?,
            seed,
            layout: FeatureLayout::synthetic(),
            model: None,
            adapted: None,
        })
    }

    fn model(&self) -> Result<&MultimodalModel> {
        self.model
            .as_ref()
            .ok_or_else(|| modaladapt::Error::Config("train a model first".into()))
    }

    fn held_out(&self) -> String {
        self.dataset.speaker_labels(SpeakerRole::Adapt).remove(0)
    }

    fn test_utterances(&self) -> Vec<&Utterance> {
        self.dataset.speaker_utterances(&self.held_out(), Split::Test)
    }

    pub fn train(&mut self, strategy: &str, max_epochs: usize) -> Result<LossCurve> {
        let strategy: Strategy = strategy.parse()?;
        let mut plan = TrainingPlan::for_strategy(strategy, self.seed);
        plan.early_stop = EarlyStopPolicy {
            max_epochs: max_epochs.max(1),
            ..plan.early_stop
        };
        let ling = self.dataset.linguistic_dim().expect("synthetic corpus");
        let ac = self.dataset.acoustic_dim().expect("synthetic corpus");
        let (model, history) = train_model(&self.dataset, model_config_for(strategy, ling, ac, false), &plan, &mut |_| {})?;
        let totals = |split: &str| -> Vec<f64> { history.split(split).iter().map(|r| r.breakdown.total).collect() };
        let rows = modaladapt::experiment::score_multispeaker(&model, &self.dataset, "demo", strategy.name(), &self.layout)?;
        let curve = LossCurve {
            strategy: strategy.name().into(),
            train: totals("train"),
            valid: totals("valid"),
            best_epoch: history.best_epoch(),
            multispeaker_mcd_db: pooled_mcd(&rows),
        };
        self.model = Some(model);
        self.adapted = None;
        Ok(curve)
    }

    pub fn adapt(&mut self, mode: &str, utterances: usize) -> Result<Adaptation> {
        let mode: AdaptationMode = mode.parse()?;
        let model = self.model()?;
        let speaker = self.held_out();
        let pool = self.dataset.speaker_utterances(&speaker, Split::Train);
        let n = utterances.clamp(1, pool.len());
        let job = AdaptationJob::new(mode, speaker.clone(), pool[..n].to_vec(), self.seed);
        let adapted = adapt(model, &job)?;
        let test = self.test_utterances();
        let init = init_new_speaker(model, InitPolicy::MeanOfTrained)?;
        let baseline = score_embedding(model, &test, &init, &meta("baseline"), &self.layout)?;
        let after = score_embedding(model, &test, &adapted.embedding, &meta(mode.name()), &self.layout)?;
        let result = Adaptation {
            mode: mode.name().into(),
            utterances: n,
            baseline_mcd_db: pooled_mcd(&baseline),
            adapted_mcd_db: pooled_mcd(&after),
            train: adapted.history.iter().map(|e| e.train_loss).collect(),
            valid: adapted.history.iter().map(|e| e.valid_loss).collect(),
        };
        self.adapted = Some(adapted.embedding);
        Ok(result)
    }

    pub fn contour(&self) -> Result<Contours> {
        let model = self.model()?;
        let test = self.test_utterances();
        let utt = test[0];
        let ling = utt.linguistic()?;
        let init = init_new_speaker(model, InitPolicy::MeanOfTrained)?;
        let adapted = match &self.adapted {
            Some(e) => Some(f0_track(&synthesize_features(model, ling, e)?, &self.layout)),
            None => None,
        };
        Ok(Contours {
            utterance: utt.id.clone(),
            reference: f0_track(&utt.acoustic, &self.layout),
            baseline: f0_track(&synthesize_features(model, ling, &init)?, &self.layout),
            adapted,
        })
    }
}

fn js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct DemoHandle(Demo);

#[wasm_bindgen]
impl DemoHandle {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> std::result::Result<DemoHandle, JsError> {
        Demo::new(seed.into()).map(DemoHandle).map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn train(&mut self, strategy: &str, max_epochs: u32) -> std::result::Result<String, JsError> {
        js(self.0.train(strategy, max_epochs as usize))
    }

    pub fn adapt(&mut self, mode: &str, utterances: u32) -> std::result::Result<String, JsError> {
        js(self.0.adapt(mode, utterances as usize))
    }

    pub fn contour(&self) -> std::result::Result<String, JsError> {
        js(self.0.contour())
    }
}
