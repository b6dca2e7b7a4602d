use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ParamId, ParamScope, Part, SpeakerId, SpeakerRef};
use crate::error::{Error, Result};
use crate::numerics::{Activation, Conv1DLayer, DenseLayer, GradientSet, Matrix, ParameterStore};

const EMBEDDING_INIT_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Text,
    Speech,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeechEncoder {
    pub conv: Conv1DLayer,
    pub dense: DenseLayer,
}

/// Input actually fed to a dense layer (after any embedding concatenation)
/// and the layer's output.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRecord {
    pub input: Matrix,
    pub output: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderTrace {
    Text { layers: Vec<LayerRecord> },
    Speech { wave: Vec<f64>, conv_out: Matrix, dense: LayerRecord },
}

impl EncoderTrace {
    pub fn modality(&self) -> Modality {
        match self {
            EncoderTrace::Text { .. } => Modality::Text,
            EncoderTrace::Speech { .. } => Modality::Speech,
        }
    }

    /// Encoder output, i.e. the input to common layer 1.
    pub fn output(&self) -> &Matrix {
        match self {
            EncoderTrace::Text { layers } => &layers.last().expect("at least one text layer").output,
            EncoderTrace::Speech { dense, .. } => &dense.output,
        }
    }
}

/// Activations of the common stack for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CommonTrace {
    layers: Vec<LayerRecord>,
    output: LayerRecord,
}

impl CommonTrace {
    /// Output `h^l` of common layer `l` (1-based).
    pub fn hidden(&self, layer: usize) -> Option<&Matrix> {
        layer.checked_sub(1).and_then(|i| self.layers.get(i)).map(|r| &r.output)
    }

    pub fn prediction(&self) -> &Matrix {
        &self.output.output
    }

    pub fn frames(&self) -> usize {
        self.output.output.rows()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}

/// Everything one forward pass needs to be differentiated: the encoder's
/// records, the common stack's records, and which speaker code was used.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenTrace {
    speaker: Option<SpeakerId>,
    encoder: EncoderTrace,
    common: CommonTrace,
}

impl HiddenTrace {
    pub fn modality(&self) -> Modality {
        self.encoder.modality()
    }

    /// Table row used, or `None` when a raw embedding vector was supplied.
    pub fn speaker(&self) -> Option<SpeakerId> {
        self.speaker
    }

    pub fn hidden(&self, layer: usize) -> Option<&Matrix> {
        self.common.hidden(layer)
    }

    pub fn encoder_output(&self) -> &Matrix {
        self.encoder.output()
    }

    pub fn prediction(&self) -> &Matrix {
        self.common.prediction()
    }

    pub fn frames(&self) -> usize {
        self.common.frames()
    }

    pub fn common(&self) -> &CommonTrace {
        &self.common
    }

    pub fn encoder(&self) -> &EncoderTrace {
        &self.encoder
    }
}

#[derive(Clone, Debug, PartialEq)]
struct EmbeddingTable {
    labels: Vec<String>,
    rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalModel {
    config: ModelConfig,
    text_encoder: Vec<DenseLayer>,
    speech_encoder: Option<SpeechEncoder>,
    common: Vec<DenseLayer>,
    output: DenseLayer,
    embeddings: EmbeddingTable,
    speech_encoder_trained: bool,
}

/// Builds a model for `num_speakers` speakers labelled `spk0`, `spk1`, ….
pub fn build_model(config: ModelConfig, num_speakers: usize, seed: u64) -> Result<MultimodalModel> {
    let labels = (0..num_speakers).map(|i| format!("spk{i}")).collect();
    MultimodalModel::build(config, labels, seed)
}

impl MultimodalModel {
    /// Deterministic initialisation from `seed`: Glorot-uniform weights, zero
    /// biases, embeddings drawn from N(0, 0.1²).
    pub fn build(config: ModelConfig, speakers: Vec<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        if speakers.is_empty() {
            return Err(Error::Config("model needs at least one speaker".into()));
        }
        let unique: BTreeSet<&String> = speakers.iter().collect();
        if unique.len() != speakers.len() {
            return Err(Error::Config("speaker labels must be unique".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden_width;
        let e = config.embedding_dim;

        let text_encoder = (0..config.num_text_ff)
            .map(|i| {
                let base = if i == 0 { config.linguistic_dim } else { h };
                let extra = if config.speaker_aware_text_encoder { e } else { 0 };
                DenseLayer::glorot(base + extra, h, Activation::Sigmoid, &mut rng)
            })
            .collect();

        let speech_encoder = if config.speech_encoder {
            let c = &config.conv;
            let conv = Conv1DLayer::glorot(c.filters, c.width, c.stride, c.pad_left, c.pad_right, &mut rng)?;
            let dense = DenseLayer::glorot(c.filters, h, Activation::Sigmoid, &mut rng);
            Some(SpeechEncoder { conv, dense })
        } else {
            None
        };

        let common = (1..=config.num_common_ff)
            .map(|l| {
                let extra = if config.is_speaker_aware(l) { e } else { 0 };
                DenseLayer::glorot(h + extra, h, Activation::Sigmoid, &mut rng)
            })
            .collect();
        let output = DenseLayer::glorot(h, config.acoustic_dim, Activation::Linear, &mut rng);

        let normal = Normal::new(0.0, EMBEDDING_INIT_STD).expect("valid std");
        let rows = speakers.iter().map(|_| (0..e).map(|_| normal.sample(&mut rng)).collect()).collect();

        Ok(Self {
            config,
            text_encoder,
            speech_encoder,
            common,
            output,
            embeddings: EmbeddingTable { labels: speakers, rows },
            speech_encoder_trained: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn has_speech_encoder(&self) -> bool {
        self.speech_encoder.is_some()
    }

    /// Whether any training phase has optimised the speech encoder. Freshly
    /// initialised encoders are useless for unsupervised adaptation.
    pub fn speech_encoder_trained(&self) -> bool {
        self.speech_encoder.is_some() && self.speech_encoder_trained
    }

    pub fn mark_speech_encoder_trained(&mut self) {
        self.speech_encoder_trained = self.speech_encoder.is_some();
    }

    pub fn speech_encoder(&self) -> Option<&SpeechEncoder> {
        self.speech_encoder.as_ref()
    }

    pub fn num_speakers(&self) -> usize {
        self.embeddings.rows.len()
    }

    pub fn speaker_labels(&self) -> &[String] {
        &self.embeddings.labels
    }

    pub fn speaker_id(&self, label: &str) -> Result<SpeakerId> {
        self.embeddings
            .labels
            .iter()
            .position(|l| l == label)
            .map(SpeakerId)
            .ok_or_else(|| Error::UnknownSpeaker(label.to_string()))
    }

    pub fn embedding(&self, id: SpeakerId) -> Result<&[f64]> {
        self.embeddings
            .rows
            .get(id.0)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownSpeaker(format!("#{}", id.0)))
    }

    pub fn embedding_rows(&self) -> &[Vec<f64>] {
        &self.embeddings.rows
    }

    /// Appends a new speaker row and returns its id.
    pub fn add_speaker(&mut self, label: &str, embedding: Vec<f64>) -> Result<SpeakerId> {
        if embedding.len() != self.config.embedding_dim {
            return Err(Error::shape("add_speaker", self.config.embedding_dim, embedding.len()));
        }
        if self.embeddings.labels.iter().any(|l| l == label) {
            return Err(Error::Config(format!("speaker {label} already exists")));
        }
        self.embeddings.labels.push(label.to_string());
        self.embeddings.rows.push(embedding);
        Ok(SpeakerId(self.embeddings.rows.len() - 1))
    }

    pub fn set_embedding(&mut self, id: SpeakerId, values: &[f64]) -> Result<()> {
        if values.len() != self.config.embedding_dim {
            return Err(Error::shape("set_embedding", self.config.embedding_dim, values.len()));
        }
        self.embedding(id)?;
        self.embeddings.rows[id.0].copy_from_slice(values);
        Ok(())
    }

    /// Whether the given encoder reads the speaker embedding.
    pub fn encoder_is_speaker_aware(&self, modality: Modality) -> bool {
        modality == Modality::Text && self.config.speaker_aware_text_encoder
    }

    fn resolve<'a>(&'a self, speaker: SpeakerRef<'a>) -> Result<(&'a [f64], Option<SpeakerId>)> {
        match speaker {
            SpeakerRef::Id(id) => Ok((self.embedding(id)?, Some(id))),
            SpeakerRef::Raw(v) => {
                if v.len() != self.config.embedding_dim {
                    return Err(Error::shape("speaker embedding", self.config.embedding_dim, v.len()));
                }
                Ok((v, None))
            }
        }
    }

    fn run_dense(layer: &DenseLayer, input: &Matrix, embedding: Option<&[f64]>) -> Result<LayerRecord> {
        let input = match embedding {
            Some(e) => input.append_columns(e),
            None => input.clone(),
        };
        let output = layer.forward(&input)?;
        Ok(LayerRecord { input, output })
    }

    pub fn encode_text(&self, ling: &Matrix, speaker: SpeakerRef<'_>) -> Result<EncoderTrace> {
        if ling.cols() != self.config.linguistic_dim {
            return Err(Error::shape("forward_text", format!("linguistic dim {}", self.config.linguistic_dim), ling.cols()));
        }
        let (emb, _) = self.resolve(speaker)?;
        let emb = self.config.speaker_aware_text_encoder.then_some(emb);
        let mut layers: Vec<LayerRecord> = Vec::with_capacity(self.text_encoder.len());
        for layer in &self.text_encoder {
            let input = layers.last().map_or(ling, |r| &r.output);
            layers.push(Self::run_dense(layer, input, emb)?);
        }
        Ok(EncoderTrace::Text { layers })
    }

    pub fn encode_speech(&self, wave: &[f64]) -> Result<EncoderTrace> {
        let enc = self
            .speech_encoder
            .as_ref()
            .ok_or_else(|| Error::Capability("model has no speech encoder".into()))?;
        let conv_out = enc.conv.forward(wave)?;
        let dense = Self::run_dense(&enc.dense, &conv_out, None)?;
        Ok(EncoderTrace::Speech {
            wave: wave.to_vec(),
            conv_out,
            dense,
        })
    }

    /// Common stack on top of an encoder output, embedding concatenated to
    /// the input of each speaker-aware layer at every frame.
    pub fn forward_common(&self, encoded: &Matrix, speaker: SpeakerRef<'_>) -> Result<CommonTrace> {
        if encoded.cols() != self.config.hidden_width {
            return Err(Error::shape("forward_common", self.config.hidden_width, encoded.cols()));
        }
        let (emb, _) = self.resolve(speaker)?;
        let mut layers: Vec<LayerRecord> = Vec::with_capacity(self.common.len());
        for (i, layer) in self.common.iter().enumerate() {
            let input = layers.last().map_or(encoded, |r| &r.output);
            let e = self.config.is_speaker_aware(i + 1).then_some(emb);
            layers.push(Self::run_dense(layer, input, e)?);
        }
        let top = &layers.last().expect("at least one common layer").output;
        let output = Self::run_dense(&self.output, top, None)?;
        Ok(CommonTrace { layers, output })
    }

    pub fn forward_text(&self, ling: &Matrix, speaker: SpeakerRef<'_>) -> Result<HiddenTrace> {
        let (_, id) = self.resolve(speaker)?;
        let encoder = self.encode_text(ling, speaker)?;
        let common = self.forward_common(encoder.output(), speaker)?;
        Ok(HiddenTrace {
            speaker: id,
            encoder,
            common,
        })
    }

    pub fn forward_speech(&self, wave: &[f64], speaker: SpeakerRef<'_>) -> Result<HiddenTrace> {
        let (_, id) = self.resolve(speaker)?;
        let encoder = self.encode_speech(wave)?;
        let common = self.forward_common(encoder.output(), speaker)?;
        Ok(HiddenTrace {
            speaker: id,
            encoder,
            common,
        })
    }

    fn encoder_wanted(&self, modality: Modality, speaker: Option<SpeakerId>, scope: &ParamScope) -> bool {
        match modality {
            Modality::Text => {
                (1..=self.config.num_text_ff).any(|layer| {
                    scope.contains(&ParamId::Text { layer, part: Part::Weight })
                        || scope.contains(&ParamId::Text { layer, part: Part::Bias })
                }) || (self.config.speaker_aware_text_encoder
                    && speaker.is_some_and(|s| scope.contains(&ParamId::Embedding(s))))
            }
            Modality::Speech => {
                self.speech_encoder.is_some()
                    && [Part::Weight, Part::Bias]
                        .iter()
                        .any(|&p| scope.contains(&ParamId::SpeechConv(p)) || scope.contains(&ParamId::SpeechDense(p)))
            }
        }
    }

    fn insert_dense_grads(
        grads: &mut GradientSet<ParamId>,
        scope: &ParamScope,
        weight_id: ParamId,
        bias_id: ParamId,
        dw: Option<Matrix>,
        db: Option<Vec<f64>>,
    ) {
        if let Some(dw) = dw {
            if scope.contains(&weight_id) {
                grads.accumulate(weight_id, dw.as_slice());
            }
        }
        if let Some(db) = db {
            if scope.contains(&bias_id) {
                grads.accumulate(bias_id, &db);
            }
        }
    }

    /// Backpropagates through the common stack. `extra_dh[l]` is added to
    /// the gradient at the output of common layer `l` before continuing down.
    /// Returns the gradient set and, if `want_input`, the gradient at the
    /// encoder output. Embedding gradients land in `embedding_grad`.
    pub fn backward_common(
        &self,
        trace: &CommonTrace,
        speaker: Option<SpeakerId>,
        d_pred: &Matrix,
        extra_dh: &BTreeMap<usize, Matrix>,
        scope: &ParamScope,
        want_input: bool,
    ) -> Result<(GradientSet<ParamId>, Option<Matrix>)> {
        if trace.layers.len() != self.common.len() {
            return Err(Error::Config("trace does not match this model's common stack".into()));
        }
        if d_pred.shape() != trace.prediction().shape() {
            return Err(Error::shape(
                "backward_path",
                format!("{:?}", trace.prediction().shape()),
                format!("{:?}", d_pred.shape()),
            ));
        }
        for (&l, m) in extra_dh {
            let h = trace
                .hidden(l)
                .ok_or_else(|| Error::Config(format!("extra gradient for nonexistent common layer {l}")))?;
            if h.shape() != m.shape() {
                return Err(Error::shape("backward_path extra_dh", format!("{:?}", h.shape()), format!("{:?}", m.shape())));
            }
        }

        let h = self.config.hidden_width;
        let emb_id = speaker.map(ParamId::Embedding);
        let want_emb = emb_id.is_some_and(|id| scope.contains(&id));
        let wants_layer = |l: usize| {
            scope.contains(&ParamId::Common { layer: l, part: Part::Weight })
                || scope.contains(&ParamId::Common { layer: l, part: Part::Bias })
                || (want_emb && self.config.is_speaker_aware(l))
        };
        let below_needed = |l: usize| want_input || (1..l).any(wants_layer);

        let mut grads = GradientSet::new();
        let mut emb_grad = vec![0.0; self.config.embedding_dim];

        let want_out = scope.contains(&ParamId::Output(Part::Weight)) || scope.contains(&ParamId::Output(Part::Bias));
        let g = self.output.backward_parts(&trace.output.input, &trace.output.output, d_pred, want_out, true)?;
        Self::insert_dense_grads(&mut grads, scope, ParamId::Output(Part::Weight), ParamId::Output(Part::Bias), g.dw, g.db);
        let mut d = g.dx.expect("requested");

        for l in (1..=self.common.len()).rev() {
            if let Some(extra) = extra_dh.get(&l) {
                d.add_assign(extra)?;
            }
            let rec = &trace.layers[l - 1];
            let layer = &self.common[l - 1];
            let aware = self.config.is_speaker_aware(l);
            let want_params = scope.contains(&ParamId::Common { layer: l, part: Part::Weight })
                || scope.contains(&ParamId::Common { layer: l, part: Part::Bias });
            let need_below = below_needed(l);
            let want_dx = need_below || (aware && want_emb);
            if !want_params && !want_dx {
                return Ok(Self::finish_common(grads, emb_id, want_emb, emb_grad, None));
            }
            let g = layer.backward_parts(&rec.input, &rec.output, &d, want_params, want_dx)?;
            Self::insert_dense_grads(
                &mut grads,
                scope,
                ParamId::Common { layer: l, part: Part::Weight },
                ParamId::Common { layer: l, part: Part::Bias },
                g.dw,
                g.db,
            );
            if !need_below {
                if aware && want_emb {
                    let dx = g.dx.expect("requested");
                    add_tail_column_sums(&mut emb_grad, &dx, h);
                }
                return Ok(Self::finish_common(grads, emb_id, want_emb, emb_grad, None));
            }
            let dx = g.dx.expect("requested");
            d = if aware {
                if want_emb {
                    add_tail_column_sums(&mut emb_grad, &dx, h);
                }
                dx.columns(0, h)
            } else {
                dx
            };
        }
        Ok(Self::finish_common(grads, emb_id, want_emb, emb_grad, want_input.then_some(d)))
    }

    fn finish_common(
        mut grads: GradientSet<ParamId>,
        emb_id: Option<ParamId>,
        want_emb: bool,
        emb_grad: Vec<f64>,
        d_input: Option<Matrix>,
    ) -> (GradientSet<ParamId>, Option<Matrix>) {
        if let (Some(id), true) = (emb_id, want_emb) {
            grads.accumulate(id, &emb_grad);
        }
        (grads, d_input)
    }

    /// Gradients of `⟨d_pred, prediction⟩ + Σ_l ⟨extra_dh[l], h^l⟩` for every
    /// parameter in `scope` that lies on the trace's path.
    pub fn backward_path(
        &self,
        trace: &HiddenTrace,
        d_pred: &Matrix,
        extra_dh: &BTreeMap<usize, Matrix>,
        scope: &ParamScope,
    ) -> Result<GradientSet<ParamId>> {
        let modality = trace.modality();
        let want_encoder = self.encoder_wanted(modality, trace.speaker, scope);
        let (mut grads, d_enc) = self.backward_common(&trace.common, trace.speaker, d_pred, extra_dh, scope, want_encoder)?;
        let Some(mut d) = d_enc else {
            return Ok(grads);
        };

        match &trace.encoder {
            EncoderTrace::Text { layers } => {
                if layers.len() != self.text_encoder.len() {
                    return Err(Error::Config("trace does not match this model's text encoder".into()));
                }
                let aware = self.config.speaker_aware_text_encoder;
                let emb_id = trace.speaker.map(ParamId::Embedding).filter(|id| scope.contains(id));
                let mut emb_grad = vec![0.0; self.config.embedding_dim];
                for k in (1..=layers.len()).rev() {
                    let rec = &layers[k - 1];
                    let layer = &self.text_encoder[k - 1];
                    let w_id = ParamId::Text { layer: k, part: Part::Weight };
                    let b_id = ParamId::Text { layer: k, part: Part::Bias };
                    let want_params = scope.contains(&w_id) || scope.contains(&b_id);
                    let lower_params = (1..k).any(|j| {
                        scope.contains(&ParamId::Text { layer: j, part: Part::Weight })
                            || scope.contains(&ParamId::Text { layer: j, part: Part::Bias })
                    });
                    let need_below = lower_params || (aware && emb_id.is_some() && k > 1);
                    let want_dx = need_below || (aware && emb_id.is_some());
                    let g = layer.backward_parts(&rec.input, &rec.output, &d, want_params, want_dx)?;
                    Self::insert_dense_grads(&mut grads, scope, w_id, b_id, g.dw, g.db);
                    let Some(dx) = g.dx else { break };
                    let base = layer.in_dim() - if aware { self.config.embedding_dim } else { 0 };
                    if aware && emb_id.is_some() {
                        add_tail_column_sums(&mut emb_grad, &dx, base);
                    }
                    if !need_below {
                        break;
                    }
                    d = if aware { dx.columns(0, base) } else { dx };
                }
                if let Some(id) = emb_id {
                    if aware {
                        grads.accumulate(id, &emb_grad);
                    }
                }
            }
            EncoderTrace::Speech { wave, conv_out, dense } => {
                let enc = self
                    .speech_encoder
                    .as_ref()
                    .ok_or_else(|| Error::Capability("model has no speech encoder".into()))?;
                let want_conv = scope.contains(&ParamId::SpeechConv(Part::Weight)) || scope.contains(&ParamId::SpeechConv(Part::Bias));
                let want_dense = scope.contains(&ParamId::SpeechDense(Part::Weight)) || scope.contains(&ParamId::SpeechDense(Part::Bias));
                let g = enc.dense.backward_parts(&dense.input, &dense.output, &d, want_dense, want_conv)?;
                Self::insert_dense_grads(
                    &mut grads,
                    scope,
                    ParamId::SpeechDense(Part::Weight),
                    ParamId::SpeechDense(Part::Bias),
                    g.dw,
                    g.db,
                );
                if let Some(d_conv) = g.dx {
                    debug_assert_eq!(d_conv.shape(), conv_out.shape());
                    let cg = enc.conv.backward(wave, &d_conv)?;
                    if scope.contains(&ParamId::SpeechConv(Part::Weight)) {
                        grads.accumulate(ParamId::SpeechConv(Part::Weight), cg.dkernels.as_slice());
                    }
                    if scope.contains(&ParamId::SpeechConv(Part::Bias)) {
                        grads.accumulate(ParamId::SpeechConv(Part::Bias), &cg.dbias);
                    }
                }
            }
        }
        Ok(grads)
    }

    /// Every parameter id of this model in canonical order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for layer in 1..=self.text_encoder.len() {
            ids.push(ParamId::Text { layer, part: Part::Weight });
            ids.push(ParamId::Text { layer, part: Part::Bias });
        }
        if self.speech_encoder.is_some() {
            ids.extend([
                ParamId::SpeechConv(Part::Weight),
                ParamId::SpeechConv(Part::Bias),
                ParamId::SpeechDense(Part::Weight),
                ParamId::SpeechDense(Part::Bias),
            ]);
        }
        for layer in 1..=self.common.len() {
            ids.push(ParamId::Common { layer, part: Part::Weight });
            ids.push(ParamId::Common { layer, part: Part::Bias });
        }
        ids.push(ParamId::Output(Part::Weight));
        ids.push(ParamId::Output(Part::Bias));
        ids.extend((0..self.num_speakers()).map(|s| ParamId::Embedding(SpeakerId(s))));
        ids
    }

    /// Exact parameter id set selected by `scope`.
    pub fn select_params(&self, scope: &ParamScope) -> Result<BTreeSet<ParamId>> {
        if let ParamScope::EmbeddingOnly(s) = scope {
            self.embedding(*s)?;
        }
        let set: BTreeSet<ParamId> = self.param_ids().into_iter().filter(|id| scope.contains(id)).collect();
        if set.is_empty() {
            return Err(Error::Config(format!("scope {scope:?} selects no parameters of this model")));
        }
        Ok(set)
    }

    pub fn num_parameters(&self) -> usize {
        self.param_ids().iter().map(|id| self.param(id).map_or(0, <[f64]>::len)).sum()
    }

    /// Shape of a parameter tensor, rows first.
    pub fn param_shape(&self, id: &ParamId) -> Option<Vec<usize>> {
        let dense_shape = |l: &DenseLayer, part: Part| match part {
            Part::Weight => vec![l.in_dim(), l.out_dim()],
            Part::Bias => vec![l.out_dim()],
        };
        match *id {
            ParamId::Text { layer, part } => self.text_encoder.get(layer.checked_sub(1)?).map(|l| dense_shape(l, part)),
            ParamId::SpeechConv(part) => self.speech_encoder.as_ref().map(|e| match part {
                Part::Weight => vec![e.conv.filters(), e.conv.width()],
                Part::Bias => vec![e.conv.filters()],
            }),
            ParamId::SpeechDense(part) => self.speech_encoder.as_ref().map(|e| dense_shape(&e.dense, part)),
            ParamId::Common { layer, part } => self.common.get(layer.checked_sub(1)?).map(|l| dense_shape(l, part)),
            ParamId::Output(part) => Some(dense_shape(&self.output, part)),
            ParamId::Embedding(s) => self.embeddings.rows.get(s.0).map(|r| vec![r.len()]),
        }
    }
}

fn add_tail_column_sums(acc: &mut [f64], dx: &Matrix, start: usize) {
    for r in 0..dx.rows() {
        for (a, v) in acc.iter_mut().zip(&dx.row(r)[start..]) {
            *a += v;
        }
    }
}

fn dense_part(layer: &DenseLayer, part: Part) -> &[f64] {
    match part {
        Part::Weight => layer.weight().as_slice(),
        Part::Bias => layer.bias(),
    }
}

fn dense_part_mut(layer: &mut DenseLayer, part: Part) -> &mut [f64] {
    match part {
        Part::Weight => layer.weight_mut(),
        Part::Bias => layer.bias_mut(),
    }
}

impl ParameterStore<ParamId> for MultimodalModel {
    fn param(&self, id: &ParamId) -> Option<&[f64]> {
        match *id {
            ParamId::Text { layer, part } => self.text_encoder.get(layer.checked_sub(1)?).map(|l| dense_part(l, part)),
            ParamId::SpeechConv(part) => self.speech_encoder.as_ref().map(|e| match part {
                Part::Weight => e.conv.kernels().as_slice(),
                Part::Bias => e.conv.bias(),
            }),
            ParamId::SpeechDense(part) => self.speech_encoder.as_ref().map(|e| dense_part(&e.dense, part)),
            ParamId::Common { layer, part } => self.common.get(layer.checked_sub(1)?).map(|l| dense_part(l, part)),
            ParamId::Output(part) => Some(dense_part(&self.output, part)),
            ParamId::Embedding(s) => self.embeddings.rows.get(s.0).map(Vec::as_slice),
        }
    }

    fn param_mut(&mut self, id: &ParamId) -> Option<&mut [f64]> {
        match *id {
            ParamId::Text { layer, part } => self.text_encoder.get_mut(layer.checked_sub(1)?).map(|l| dense_part_mut(l, part)),
            ParamId::SpeechConv(part) => self.speech_encoder.as_mut().map(|e| match part {
                Part::Weight => e.conv.kernels_mut(),
                Part::Bias => e.conv.bias_mut(),
            }),
            ParamId::SpeechDense(part) => self.speech_encoder.as_mut().map(|e| dense_part_mut(&mut e.dense, part)),
            ParamId::Common { layer, part } => self.common.get_mut(layer.checked_sub(1)?).map(|l| dense_part_mut(l, part)),
            ParamId::Output(part) => Some(dense_part_mut(&mut self.output, part)),
            ParamId::Embedding(s) => self.embeddings.rows.get_mut(s.0).map(Vec::as_mut_slice),
        }
    }
}
