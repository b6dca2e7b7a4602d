//! Speaker adaptation: a new embedding row is estimated by backpropagation
//! while every other parameter stays frozen. Supervised adaptation fits it
//! through the text path, unsupervised adaptation through the speech path;
//! both share the optimiser, the stopping rule and the update target.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::model::{config_hash, Modality, MultimodalModel, ParamId, ParamScope, SpeakerId, SpeakerRef};
use crate::numerics::{mse_loss, AdamConfig, AdamState, Matrix};
use crate::training::{Decision, EarlyStopPolicy, EarlyStopper, StopReason};

pub const EMBEDDING_MAGIC: &[u8; 5] = b"MMEV1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptationMode {
    /// Linguistic features and acoustic targets, text path.
    Supervised,
    /// Waveforms and acoustic targets, speech path.
    Unsupervised,
}

impl AdaptationMode {
    pub fn name(self) -> &'static str {
        match self {
            AdaptationMode::Supervised => "supervised",
            AdaptationMode::Unsupervised => "unsupervised",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            AdaptationMode::Supervised => Modality::Text,
            AdaptationMode::Unsupervised => Modality::Speech,
        }
    }
}

impl fmt::Display for AdaptationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdaptationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "supervised" => Ok(AdaptationMode::Supervised),
            "unsupervised" => Ok(AdaptationMode::Unsupervised),
            other => Err(Error::Config(format!("unknown adaptation mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Arithmetic mean of the rows already in the table.
    #[default]
    MeanOfTrained,
    Zeros,
    /// Gaussian draw with the same spread as fresh table rows.
    Random(u64),
}

pub fn init_new_speaker(model: &MultimodalModel, policy: InitPolicy) -> Result<Vec<f64>> {
    let dim = model.config().embedding_dim;
    match policy {
        InitPolicy::Zeros => Ok(vec![0.0; dim]),
        InitPolicy::Random(seed) => {
            let normal = Normal::new(0.0, 0.1).expect("finite std");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..dim).map(|_| normal.sample(&mut rng)).collect())
        }
        InitPolicy::MeanOfTrained => {
            let rows = model.embedding_rows();
            if rows.is_empty() {
                return Err(Error::Config("cannot take the mean of an empty embedding table".into()));
            }
            let mut mean = vec![0.0; dim];
            for row in rows {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            let k = 1.0 / rows.len() as f64;
            Ok(mean.into_iter().map(|m| m * k).collect())
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptationJob<'a> {
    pub mode: AdaptationMode,
    /// Label given to the new table row.
    pub speaker: String,
    pub utterances: Vec<&'a Utterance>,
    pub init: InitPolicy,
    pub adam: AdamConfig,
    pub early_stop: EarlyStopPolicy,
    /// Drives the validation hold-out and the shuffling.
    pub seed: u64,
}

impl<'a> AdaptationJob<'a> {
    pub fn new(mode: AdaptationMode, speaker: impl Into<String>, utterances: Vec<&'a Utterance>, seed: u64) -> Self {
        Self {
            mode,
            speaker: speaker.into(),
            utterances,
            init: InitPolicy::default(),
            adam: AdamConfig::default(),
            early_stop: EarlyStopPolicy::default(),
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptedSpeaker {
    pub label: String,
    pub embedding: Vec<f64>,
    pub mode: AdaptationMode,
    pub num_utterances: usize,
    pub history: Vec<AdaptationEpoch>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub stop_reason: Option<StopReason>,
}

/// Number of utterances held out for early stopping: 10 %, at least one.
/// A single-utterance job validates on its own training utterance.
pub fn validation_count(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        (n / 10).max(1)
    }
}

/// Per-utterance inputs fixed for the whole job.
#[derive(Clone)]
enum Prepared<'a> {
    /// Encoder output computed once; only the common stack depends on the
    /// embedding.
    Encoded(Matrix),
    /// The text encoder reads the embedding, so it reruns every time.
    Text(&'a Matrix),
}

#[derive(Clone)]
struct Item<'a> {
    input: Prepared<'a>,
    target: &'a Matrix,
}

fn prepare<'a>(model: &MultimodalModel, mode: AdaptationMode, utt: &'a Utterance, probe: &[f64]) -> Result<Item<'a>> {
    let input = match mode {
        AdaptationMode::Supervised => {
            let ling = utt.linguistic()?;
            if model.encoder_is_speaker_aware(Modality::Text) {
                Prepared::Text(ling)
            } else {
                Prepared::Encoded(model.encode_text(ling, SpeakerRef::Raw(probe))?.output().clone())
            }
        }
        AdaptationMode::Unsupervised => Prepared::Encoded(model.encode_speech(utt.waveform()?)?.output().clone()),
    };
    let frames = match &input {
        Prepared::Encoded(m) => m.rows(),
        Prepared::Text(m) => m.rows(),
    };
    if frames != utt.frames() {
        return Err(Error::Alignment(format!(
            "utterance {}: {frames} {mode} input frames vs {} target frames",
            utt.id,
            utt.frames()
        )));
    }
    Ok(Item {
        input,
        target: &utt.acoustic,
    })
}

fn item_loss(
    model: &MultimodalModel,
    id: SpeakerId,
    item: &Item<'_>,
    scope: Option<&ParamScope>,
) -> Result<(f64, Option<crate::numerics::GradientSet<ParamId>>)> {
    let none = Default::default();
    match &item.input {
        Prepared::Encoded(enc) => {
            let trace = model.forward_common(enc, SpeakerRef::Id(id))?;
            let (loss, d) = mse_loss(trace.prediction(), item.target)?;
            let grads = match scope {
                Some(s) => Some(model.backward_common(&trace, Some(id), &d, &none, s, false)?.0),
                None => None,
            };
            Ok((loss, grads))
        }
        Prepared::Text(ling) => {
            let trace = model.forward_text(ling, SpeakerRef::Id(id))?;
            let (loss, d) = mse_loss(trace.prediction(), item.target)?;
            let grads = match scope {
                Some(s) => Some(model.backward_path(&trace, &d, &none, s)?),
                None => None,
            };
            Ok((loss, grads))
        }
    }
}

fn mean_loss(model: &MultimodalModel, id: SpeakerId, items: &[Item<'_>]) -> Result<f64> {
    let mut sum = 0.0;
    for it in items {
        sum += item_loss(model, id, it, None)?.0;
    }
    Ok(sum / items.len() as f64)
}

/// Runs the job on a private copy of `model`.
pub fn adapt(model: &MultimodalModel, job: &AdaptationJob<'_>) -> Result<AdaptedSpeaker> {
    let mut scratch = model.clone();
    adapt_in_place(&mut scratch, job).map(|(_, a)| a)
}

/// Adds the job's speaker to `model` and optimises only that row. Returns
/// the new row's id; the row holds the best-validation embedding.
pub fn adapt_in_place(model: &mut MultimodalModel, job: &AdaptationJob<'_>) -> Result<(SpeakerId, AdaptedSpeaker)> {
    adapt_in_place_observed(model, job, &mut |_, _| {})
}

/// As [`adapt_in_place`], reporting the gradient ids of every step.
pub fn adapt_in_place_observed(
    model: &mut MultimodalModel,
    job: &AdaptationJob<'_>,
    observer: &mut dyn FnMut(usize, &[ParamId]),
) -> Result<(SpeakerId, AdaptedSpeaker)> {
    if job.utterances.is_empty() {
        return Err(Error::EmptySplit(format!("no adaptation utterances for {}", job.speaker)));
    }
    if job.mode == AdaptationMode::Unsupervised {
        if !model.has_speech_encoder() {
            return Err(Error::Capability("unsupervised adaptation needs a model with a speech encoder".into()));
        }
        if !model.speech_encoder_trained() {
            return Err(Error::Capability("unsupervised adaptation needs a trained speech encoder".into()));
        }
    }
    job.early_stop.validate()?;

    let init = init_new_speaker(model, job.init)?;
    let mut items = Vec::with_capacity(job.utterances.len());
    for u in &job.utterances {
        items.push(prepare(model, job.mode, u, &init)?);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    order.shuffle(&mut rng);
    let n_valid = validation_count(items.len());
    let (valid_idx, train_idx) = if n_valid == 0 {
        (order.clone(), order)
    } else {
        (order[..n_valid].to_vec(), order[n_valid..].to_vec())
    };
    let valid: Vec<Item<'_>> = valid_idx.iter().map(|&i| items[i].clone()).collect();
    let train: Vec<Item<'_>> = train_idx.iter().map(|&i| items[i].clone()).collect();

    let id = model.add_speaker(&job.speaker, init.clone())?;
    let scope = ParamScope::EmbeddingOnly(id);
    let mut result = AdaptedSpeaker {
        label: job.speaker.clone(),
        embedding: init,
        mode: job.mode,
        num_utterances: job.utterances.len(),
        history: Vec::new(),
        best_epoch: 0,
        stop_reason: None,
    };
    if job.early_stop.max_epochs == 0 {
        return Ok((id, result));
    }

    let mut adam = AdamState::new(job.adam);
    let mut stopper = EarlyStopper::new(job.early_stop);
    let mut order: Vec<usize> = (0..train.len()).collect();
    loop {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &i in &order {
            let (loss, grads) = item_loss(model, id, &train[i], Some(&scope))?;
            let grads = grads.expect("requested");
            observer(stopper.epoch() + 1, &grads.keys().cloned().collect::<Vec<_>>());
            adam.step(model, &grads)?;
            sum += loss;
        }
        let valid_loss = mean_loss(model, id, &valid)?;
        let (improved, decision) = stopper.observe(valid_loss);
        result.history.push(AdaptationEpoch {
            epoch: stopper.epoch(),
            train_loss: sum / train.len() as f64,
            valid_loss,
        });
        if improved {
            result.embedding = model.embedding(id)?.to_vec();
            result.best_epoch = stopper.epoch();
        }
        if let Decision::Stop(reason) = decision {
            result.stop_reason = Some(reason);
            break;
        }
    }
    model.set_embedding(id, &result.embedding)?;
    log::debug!(
        "adapted {} ({}, {} utterances): best epoch {} of {}",
        result.label,
        result.mode,
        result.num_utterances,
        result.best_epoch,
        result.history.len()
    );
    Ok((id, result))
}

/// Text-path synthesis with an arbitrary embedding vector, e.g. one estimated
/// by either adaptation mode.
pub fn synthesize_features(model: &MultimodalModel, linguistic: &Matrix, embedding: &[f64]) -> Result<Matrix> {
    Ok(model.forward_text(linguistic, SpeakerRef::Raw(embedding))?.prediction().clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub speaker: String,
    pub mode: AdaptationMode,
    pub config_hash: String,
    pub dim: usize,
    pub utterances: usize,
}

/// `MMEV1`: magic, little-endian `u32` header length, JSON header, then the
/// embedding as `dim` little-endian `f64`.
pub fn write_embedding(path: &Path, model: &MultimodalModel, adapted: &AdaptedSpeaker) -> Result<()> {
    if adapted.embedding.len() != model.config().embedding_dim {
        return Err(Error::shape("write_embedding", model.config().embedding_dim, adapted.embedding.len()));
    }
    let header = EmbeddingHeader {
        speaker: adapted.label.clone(),
        mode: adapted.mode,
        config_hash: config_hash(model.config()),
        dim: adapted.embedding.len(),
        utterances: adapted.num_utterances,
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut buf = Vec::with_capacity(9 + json.len() + 8 * header.dim);
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in &adapted.embedding {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_embedding(path: &Path) -> Result<(EmbeddingHeader, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 9 || &bytes[..5] != EMBEDDING_MAGIC {
        return Err(Error::corrupt(path, "bad magic, expected MMEV1"));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(9..9 + len).ok_or_else(|| Error::corrupt(path, "truncated header"))?;
    let header: EmbeddingHeader =
        serde_json::from_slice(body).map_err(|e| Error::corrupt(path, format!("header: {e}")))?;
    let data = &bytes[9 + len..];
    if data.len() != 8 * header.dim {
        return Err(Error::corrupt(path, format!("expected {} embedding bytes, found {}", 8 * header.dim, data.len())));
    }
    let values = data.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    Ok((header, values))
}

/// Reads an embedding file and checks it was estimated against `model`'s
/// configuration.
pub fn load_embedding_for(path: &Path, model: &MultimodalModel) -> Result<(EmbeddingHeader, Vec<f64>)> {
    let (header, values) = read_embedding(path)?;
    let expect = config_hash(model.config());
    if header.config_hash != expect {
        return Err(Error::Config(format!(
            "{} was estimated for a different model configuration",
            path.display()
        )));
    }
    Ok((header, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, Dataset, SpeakerRole, Split, SyntheticTaskSpec};
    use crate::model::{build_model, ConvConfig, ModelConfig};
    use crate::numerics::ParameterStore;
    use crate::training::{fit, Strategy, TrainingData, TrainingPlan};

    fn config() -> ModelConfig {
        ModelConfig {
            hidden_width: 16,
            embedding_dim: 4,
            conv: ConvConfig::centered(160, 80, 16),
            ..ModelConfig::desk(30, 26)
        }
    }

    fn corpus(seed: u64) -> Dataset {
        generate_dataset(&SyntheticTaskSpec {
            num_train_speakers: 3,
            num_adapt_speakers: 1,
            utterances_per_speaker: 4,
            adapt_utterances_per_speaker: 6,
            valid_per_speaker: 1,
            test_per_speaker: 1,
            min_frames: 8,
            max_frames: 12,
            seed,
            ..SyntheticTaskSpec::default()
        })
        .unwrap()
    }

    fn trained(d: &Dataset, strategy: Strategy, cfg: ModelConfig) -> MultimodalModel {
        let mut m = MultimodalModel::build(cfg, d.speaker_labels(SpeakerRole::Train), 3).unwrap();
        let plan = TrainingPlan {
            early_stop: EarlyStopPolicy { patience: 5, max_epochs: 3 },
            ..TrainingPlan::for_strategy(strategy, 3)
        };
        fit(&mut m, &TrainingData::from_dataset(d), &plan).unwrap();
        m
    }

    fn job<'a>(d: &'a Dataset, mode: AdaptationMode, epochs: usize) -> AdaptationJob<'a> {
        AdaptationJob {
            early_stop: EarlyStopPolicy { patience: 5, max_epochs: epochs },
            ..AdaptationJob::new(mode, "new01", d.speaker_utterances("new01", Split::Train), 9)
        }
    }

    fn bits(m: &MultimodalModel, ids: &[ParamId]) -> Vec<Vec<u64>> {
        ids.iter().map(|id| m.param(id).unwrap().iter().map(|v| v.to_bits()).collect()).collect()
    }

    #[test]
    fn init_policies() {
        let mut m = build_model(config(), 1, 0).unwrap();
        assert_eq!(init_new_speaker(&m, InitPolicy::Zeros).unwrap(), vec![0.0; 4]);
        let e = m.embedding(SpeakerId(0)).unwrap().to_vec();
        let neg: Vec<f64> = e.iter().map(|v| -v).collect();
        m.add_speaker("neg", neg).unwrap();
        assert!(init_new_speaker(&m, InitPolicy::MeanOfTrained).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(
            init_new_speaker(&m, InitPolicy::Random(4)).unwrap(),
            init_new_speaker(&m, InitPolicy::Random(4)).unwrap()
        );
    }

    #[test]
    fn mean_of_many_rows_matches_direct_average() {
        let m = build_model(config(), 44, 5).unwrap();
        let got = init_new_speaker(&m, InitPolicy::MeanOfTrained).unwrap();
        for (d, g) in got.iter().enumerate() {
            let direct: f64 = (0..44).map(|s| m.embedding(SpeakerId(s)).unwrap()[d]).sum::<f64>() / 44.0;
            assert!((g - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn validation_holdout_sizes() {
        assert_eq!(validation_count(1), 0);
        assert_eq!(validation_count(5), 1);
        assert_eq!(validation_count(10), 1);
        assert_eq!(validation_count(40), 4);
        assert_eq!(validation_count(160), 16);
    }

    #[test]
    fn zero_epochs_returns_init() {
        let d = corpus(1);
        let m = trained(&d, Strategy::JointGoal, config());
        let a = adapt(&m, &job(&d, AdaptationMode::Unsupervised, 0)).unwrap();
        assert_eq!(a.embedding, init_new_speaker(&m, InitPolicy::MeanOfTrained).unwrap());
        assert!(a.history.is_empty());
    }

    #[test]
    fn only_the_new_row_changes_in_either_mode() {
        let d = corpus(2);
        let m = trained(&d, Strategy::JointGoal, config());
        let ids = m.param_ids();
        let before = bits(&m, &ids);
        for mode in [AdaptationMode::Supervised, AdaptationMode::Unsupervised] {
            let mut copy = m.clone();
            let mut keys = std::collections::BTreeSet::new();
            let (id, a) = adapt_in_place_observed(&mut copy, &job(&d, mode, 4), &mut |_, k| keys.extend(k.iter().cloned())).unwrap();
            assert_eq!(bits(&copy, &ids), before);
            assert_eq!(keys.into_iter().collect::<Vec<_>>(), vec![ParamId::Embedding(id)]);
            assert_eq!(copy.embedding(id).unwrap(), a.embedding.as_slice());
            assert_ne!(a.embedding, init_new_speaker(&m, InitPolicy::MeanOfTrained).unwrap());
            assert_eq!(a.num_utterances, 6);
        }
    }

    #[test]
    fn adaptation_is_deterministic() {
        let d = corpus(3);
        let m = trained(&d, Strategy::TiedLayers, config());
        let j = job(&d, AdaptationMode::Unsupervised, 3);
        assert_eq!(adapt(&m, &j).unwrap(), adapt(&m, &j).unwrap());
    }

    #[test]
    fn capability_and_data_errors() {
        let d = corpus(4);
        let vl = trained(&d, Strategy::Vanilla, config().vanilla());
        assert!(matches!(adapt(&vl, &job(&d, AdaptationMode::Unsupervised, 1)), Err(Error::Capability(_))));
        adapt(&vl, &job(&d, AdaptationMode::Supervised, 1)).unwrap();

        let untrained = MultimodalModel::build(config(), d.speaker_labels(SpeakerRole::Train), 1).unwrap();
        assert!(matches!(adapt(&untrained, &job(&d, AdaptationMode::Unsupervised, 1)), Err(Error::Capability(_))));

        let m = trained(&d, Strategy::JointGoal, config());
        let mut stripped = d.speaker_utterances("new01", Split::Train)[0].clone();
        stripped.linguistic = None;
        let j = AdaptationJob::new(AdaptationMode::Supervised, "new01", vec![&stripped], 0);
        assert!(matches!(adapt(&m, &j), Err(Error::MissingData(_))));
        let j = AdaptationJob::new(AdaptationMode::Supervised, "new01", vec![], 0);
        assert!(matches!(adapt(&m, &j), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn single_utterance_job_runs() {
        let d = corpus(5);
        let m = trained(&d, Strategy::JointGoal, config());
        let one = vec![d.speaker_utterances("new01", Split::Train)[0]];
        let j = AdaptationJob {
            early_stop: EarlyStopPolicy { patience: 2, max_epochs: 3 },
            ..AdaptationJob::new(AdaptationMode::Unsupervised, "new01", one, 0)
        };
        assert!(!adapt(&m, &j).unwrap().history.is_empty());
    }

    #[test]
    fn synthesis_with_a_table_row_matches_the_text_path() {
        let d = corpus(6);
        let m = trained(&d, Strategy::JointGoal, config());
        let u = d.speaker_utterances("spk02", Split::Test)[0];
        let row = m.embedding(SpeakerId(1)).unwrap().to_vec();
        let out = synthesize_features(&m, u.linguistic().unwrap(), &row).unwrap();
        assert_eq!(&out, m.forward_text(u.linguistic().unwrap(), SpeakerId(1).into()).unwrap().prediction());
        assert_eq!(out.shape(), (u.frames(), 26));
        assert!(matches!(synthesize_features(&m, u.linguistic().unwrap(), &[0.0; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn embedding_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = corpus(7);
        let m = trained(&d, Strategy::JointGoal, config());
        let a = adapt(&m, &job(&d, AdaptationMode::Supervised, 2)).unwrap();
        let p = dir.path().join("new01.mmev");
        write_embedding(&p, &m, &a).unwrap();
        let (h, v) = load_embedding_for(&p, &m).unwrap();
        assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), a.embedding.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!((h.speaker.as_str(), h.mode, h.dim, h.utterances), ("new01", AdaptationMode::Supervised, 4, 6));
        let bytes = fs::read(&p).unwrap();
        write_embedding(&p, &m, &a).unwrap();
        assert_eq!(fs::read(&p).unwrap(), bytes);
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_embedding(&p), Err(Error::Corrupt { .. })));

        let other = build_model(ModelConfig { embedding_dim: 4, hidden_width: 12, ..config() }, 3, 0).unwrap();
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_embedding_for(&p, &other), Err(Error::Config(_))));
    }
}
