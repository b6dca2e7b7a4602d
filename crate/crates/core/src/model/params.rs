use std::fmt;

use super::SpeakerId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Part {
    Weight,
    Bias,
}

impl Part {
    fn name(self) -> &'static str {
        match self {
            Part::Weight => "weight",
            Part::Bias => "bias",
        }
    }
}

/// Identifier of one parameter tensor. Layers are numbered from 1. The
/// derived ordering is the canonical tensor order used by checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Text { layer: usize, part: Part },
    SpeechConv(Part),
    SpeechDense(Part),
    Common { layer: usize, part: Part },
    Output(Part),
    Embedding(SpeakerId),
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::Text { layer, part } => write!(f, "text.{layer}.{}", part.name()),
            ParamId::SpeechConv(Part::Weight) => write!(f, "speech.conv.kernels"),
            ParamId::SpeechConv(Part::Bias) => write!(f, "speech.conv.bias"),
            ParamId::SpeechDense(part) => write!(f, "speech.dense.{}", part.name()),
            ParamId::Common { layer, part } => write!(f, "common.{layer}.{}", part.name()),
            ParamId::Output(part) => write!(f, "output.{}", part.name()),
            ParamId::Embedding(SpeakerId(s)) => write!(f, "embedding.{s}"),
        }
    }
}

impl ParamId {
    pub fn is_embedding(&self) -> bool {
        matches!(self, ParamId::Embedding(_))
    }

    pub fn is_speech_encoder(&self) -> bool {
        matches!(self, ParamId::SpeechConv(_) | ParamId::SpeechDense(_))
    }

    pub fn is_text_encoder(&self) -> bool {
        matches!(self, ParamId::Text { .. })
    }

    pub fn is_common(&self) -> bool {
        matches!(self, ParamId::Common { .. } | ParamId::Output(_))
    }
}

/// Named parameter subsets used to freeze parts of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamScope {
    All,
    SharedNoEmbedding,
    SpeechEncoderOnly,
    EmbeddingOnly(SpeakerId),
    CommonOnly,
    TextEncoderOnly,
}

impl ParamScope {
    pub fn contains(&self, id: &ParamId) -> bool {
        match self {
            ParamScope::All => true,
            ParamScope::SharedNoEmbedding => !id.is_embedding(),
            ParamScope::SpeechEncoderOnly => id.is_speech_encoder(),
            ParamScope::EmbeddingOnly(s) => *id == ParamId::Embedding(*s),
            ParamScope::CommonOnly => id.is_common(),
            ParamScope::TextEncoderOnly => id.is_text_encoder(),
        }
    }
}
