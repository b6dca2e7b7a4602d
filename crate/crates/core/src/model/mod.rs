//! The two-encoder acoustic model: linguistic encoder, raw-waveform speech
//! encoder, shared common stack with a linear output layer, and the speaker
//! embedding table. Both encoders feed the very same common-stack storage.

mod checkpoint;
mod config;
mod graph;
mod params;

pub use checkpoint::{
    config_hash, load_checkpoint, read_checkpoint, read_checkpoint_header, save_checkpoint, write_checkpoint, CheckpointHeader,
    TensorEntry, CHECKPOINT_MAGIC,
};
pub use config::{ConvConfig, ModelConfig};
pub use graph::{build_model, CommonTrace, EncoderTrace, HiddenTrace, LayerRecord, Modality, MultimodalModel, SpeechEncoder};
pub use params::{ParamId, ParamScope, Part};

use serde::{Deserialize, Serialize};

/// Row index into the speaker embedding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpeakerId(pub usize);

/// Which speaker code conditions a forward pass: a table row, or a free
/// vector (used for synthesis with adapted embeddings).
#[derive(Clone, Copy, Debug)]
pub enum SpeakerRef<'a> {
    Id(SpeakerId),
    Raw(&'a [f64]),
}

impl From<SpeakerId> for SpeakerRef<'_> {
    fn from(id: SpeakerId) -> Self {
        SpeakerRef::Id(id)
    }
}

impl<'a> From<&'a [f64]> for SpeakerRef<'a> {
    fn from(v: &'a [f64]) -> Self {
        SpeakerRef::Raw(v)
    }
}
