//! Building blocks for the reproduction profiles: train a model for a
//! strategy, score it on the training speakers, and sweep adaptation sizes
//! over the held-out speakers.

use std::thread;

use crate::adaptation::{adapt, init_new_speaker, synthesize_features, AdaptationJob, AdaptationMode, AdaptedSpeaker, InitPolicy};
use crate::data::{split_adaptation_subsets, Dataset, SpeakerRole, Split, Utterance};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalRow, FeatureLayout, RowMeta};
use crate::model::{ModelConfig, MultimodalModel, SpeakerRef};
use crate::numerics::Matrix;
use crate::training::{fit_observed, StepRecord, Strategy, TrainingData, TrainingHistory, TrainingPlan};

/// Desk or paper dimensions; VL models get speaker-aware text layers and no
/// speech encoder.
pub fn model_config_for(strategy: Strategy, linguistic_dim: usize, acoustic_dim: usize, paper_dims: bool) -> ModelConfig {
    let config = if paper_dims {
        ModelConfig::paper(linguistic_dim, acoustic_dim)
    } else {
        ModelConfig::desk(linguistic_dim, acoustic_dim)
    };
    if strategy == Strategy::Vanilla {
        config.vanilla()
    } else {
        config
    }
}

/// Builds a fresh model over the dataset's training speakers (seeded by the
/// plan) and fits it.
pub fn train_model(
    dataset: &Dataset,
    config: ModelConfig,
    plan: &TrainingPlan,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<(MultimodalModel, TrainingHistory)> {
    plan.validate()?;
    let mut model = MultimodalModel::build(config, dataset.speaker_labels(SpeakerRole::Train), plan.seed)?;
    let history = fit_observed(&mut model, &TrainingData::from_dataset(dataset), plan, observer)?;
    Ok((model, history))
}

fn meta(model: &str, strategy: &str, mode: &str, adapt_utterances: usize) -> RowMeta {
    RowMeta {
        model: model.to_string(),
        strategy: strategy.to_string(),
        mode: mode.to_string(),
        adapt_utterances,
    }
}

/// Text-path test scores of the training speakers, mode `multispeaker`.
pub fn score_multispeaker(
    model: &MultimodalModel,
    dataset: &Dataset,
    tag: &str,
    strategy: &str,
    layout: &FeatureLayout,
) -> Result<Vec<EvalRow>> {
    let test = dataset.select(SpeakerRole::Train, Split::Test);
    evaluate(
        |u| {
            let id = model.speaker_id(&u.speaker)?;
            Ok(model.forward_text(u.linguistic()?, SpeakerRef::Id(id))?.prediction().clone())
        },
        &test,
        &meta(tag, strategy, "multispeaker", 0),
        layout,
    )
}

/// Reference predictor that outputs each training speaker's mean acoustic
/// frame (over its training split) for every test frame.
pub fn score_speaker_mean(dataset: &Dataset, layout: &FeatureLayout) -> Result<Vec<EvalRow>> {
    let mut means = std::collections::BTreeMap::new();
    for label in dataset.speaker_labels(SpeakerRole::Train) {
        let utts = dataset.speaker_utterances(&label, Split::Train);
        let dim = utts.first().map(|u| u.acoustic.cols()).ok_or_else(|| Error::EmptySplit(format!("{label}/train")))?;
        let mut sum = vec![0.0; dim];
        let mut frames = 0usize;
        for u in utts {
            for t in 0..u.frames() {
                for (s, v) in sum.iter_mut().zip(u.acoustic.row(t)) {
                    *s += v;
                }
            }
            frames += u.frames();
        }
        means.insert(label, sum.into_iter().map(|s| s / frames as f64).collect::<Vec<f64>>());
    }
    let test = dataset.select(SpeakerRole::Train, Split::Test);
    evaluate(
        |u| Ok(Matrix::repeat_row(&means[&u.speaker], u.frames())),
        &test,
        &meta("speaker-mean", "-", "multispeaker", 0),
        layout,
    )
}

/// Scores an embedding for `utterances` through the text path.
pub fn score_embedding(
    model: &MultimodalModel,
    utterances: &[&Utterance],
    embedding: &[f64],
    meta: &RowMeta,
    layout: &FeatureLayout,
) -> Result<Vec<EvalRow>> {
    evaluate(|u| synthesize_features(model, u.linguistic()?, embedding), utterances, meta, layout)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub speaker: String,
    pub mode: AdaptationMode,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub point: SweepPoint,
    pub adapted: AdaptedSpeaker,
    pub rows: Vec<EvalRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// Mean-of-trained embedding scored on each held-out speaker.
    pub baseline: Vec<EvalRow>,
    pub outcomes: Vec<SweepOutcome>,
}

impl SweepResult {
    pub fn rows(&self) -> impl Iterator<Item = &EvalRow> {
        self.baseline.iter().chain(self.outcomes.iter().flat_map(|o| &o.rows))
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec<'a> {
    pub tag: &'a str,
    pub strategy: &'a str,
    pub sizes: &'a [usize],
    pub modes: &'a [AdaptationMode],
    pub seed: u64,
    pub workers: usize,
}

/// Adapts every held-out speaker at every size and mode over the frozen
/// `model`. Subsets are nested prefixes of one seeded shuffle of the
/// speaker's training split, shared by both modes; each point is scored on
/// the speaker's test split. Jobs are spread over `workers` threads but
/// results come back in (speaker, size, mode) order.
pub fn adaptation_sweep(model: &MultimodalModel, dataset: &Dataset, spec: &SweepSpec<'_>, layout: &FeatureLayout) -> Result<SweepResult> {
    let init = init_new_speaker(model, InitPolicy::MeanOfTrained)?;
    let mut baseline = Vec::new();
    let mut jobs = Vec::new();
    for speaker in dataset.speaker_labels(SpeakerRole::Adapt) {
        let test = dataset.speaker_utterances(&speaker, Split::Test);
        baseline.extend(score_embedding(model, &test, &init, &meta(spec.tag, spec.strategy, "baseline", 0), layout)?);
        let pool = dataset.speaker_utterances(&speaker, Split::Train);
        let subsets = split_adaptation_subsets(pool.len(), spec.sizes, spec.seed)?;
        for (&size, subset) in spec.sizes.iter().zip(subsets) {
            for &mode in spec.modes {
                let utts: Vec<&Utterance> = subset.iter().map(|&i| pool[i]).collect();
                jobs.push((SweepPoint { speaker: speaker.clone(), mode, size }, utts, test.clone()));
            }
        }
    }

    let run = |(point, utts, test): &(SweepPoint, Vec<&Utterance>, Vec<&Utterance>)| -> Result<SweepOutcome> {
        log::debug!("adapting {} ({}, {} utterances)", point.speaker, point.mode, point.size);
        let job = AdaptationJob::new(point.mode, point.speaker.clone(), utts.clone(), spec.seed);
        let adapted = adapt(model, &job)?;
        let m = meta(spec.tag, spec.strategy, point.mode.name(), point.size);
        let rows = score_embedding(model, test, &adapted.embedding, &m, layout)?;
        Ok(SweepOutcome { point: point.clone(), adapted, rows })
    };

    let workers = spec.workers.clamp(1, jobs.len().max(1));
    let mut results: Vec<Option<Result<SweepOutcome>>> = (0..jobs.len()).map(|_| None).collect();
    if workers == 1 {
        for (slot, job) in results.iter_mut().zip(&jobs) {
            *slot = Some(run(job));
        }
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let jobs = &jobs;
                    let run = &run;
                    s.spawn(move || {
                        (w..jobs.len()).step_by(workers).map(|i| (i, run(&jobs[i]))).collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("adaptation worker panicked") {
                    results[i] = Some(r);
                }
            }
        });
    }
    let outcomes = results.into_iter().map(|r| r.expect("every job ran")).collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { baseline, outcomes })
}

/// Frame-weighted MCD over `rows`.
pub fn pooled_mcd<'a>(rows: impl IntoIterator<Item = &'a EvalRow>) -> f64 {
    let (mut sum, mut frames) = (0.0, 0usize);
    for r in rows {
        sum += r.mcd_db * r.frames as f64;
        frames += r.frames;
    }
    sum / frames as f64
}

/// Median with the mean of the two middle values for even lengths. NaN if
/// `values` is empty.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}
