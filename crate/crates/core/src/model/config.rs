use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub width: usize,
    pub stride: usize,
    pub filters: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Default for ConvConfig {
    /// 400-sample window, 80-sample hop, 64 filters, and `(width - stride) / 2`
    /// zero padding per side so 16 kHz audio yields one frame per 5 ms.
    fn default() -> Self {
        Self {
            width: 400,
            stride: 80,
            filters: 64,
            pad_left: 160,
            pad_right: 160,
        }
    }
}

impl ConvConfig {
    /// Symmetric padding of `(width - stride) / 2` samples on each side.
    pub fn centered(width: usize, stride: usize, filters: usize) -> Self {
        let pad = width.saturating_sub(stride) / 2;
        Self {
            width,
            stride,
            filters,
            pad_left: pad,
            pad_right: pad,
        }
    }
}

/// Layer sizes and speaker-conditioning layout. Common-stack layers are
/// numbered from 1 at the bottom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub linguistic_dim: usize,
    pub acoustic_dim: usize,
    pub hidden_width: usize,
    pub embedding_dim: usize,
    pub num_text_ff: usize,
    pub num_common_ff: usize,
    pub conv: ConvConfig,
    /// Whether the raw-waveform encoder exists at all.
    pub speech_encoder: bool,
    /// Whether every linguistic-encoder layer also receives the embedding.
    pub speaker_aware_text_encoder: bool,
    /// Common-stack layers whose input is augmented with the embedding.
    pub speaker_aware_layers: Vec<usize>,
    /// Common-stack layers whose outputs are tied between the two paths.
    pub tied_layer_indices: Vec<usize>,
}

impl ModelConfig {
    /// Small dims for CPU experiments: hidden 128, embedding 16.
    pub fn desk(linguistic_dim: usize, acoustic_dim: usize) -> Self {
        Self {
            linguistic_dim,
            acoustic_dim,
            hidden_width: 128,
            embedding_dim: 16,
            num_text_ff: 2,
            num_common_ff: 3,
            conv: ConvConfig::default(),
            speech_encoder: true,
            speaker_aware_text_encoder: false,
            speaker_aware_layers: vec![2, 3],
            tied_layer_indices: vec![1],
        }
    }

    /// Full-size dims: hidden 1024, embedding 128.
    pub fn paper(linguistic_dim: usize, acoustic_dim: usize) -> Self {
        Self {
            hidden_width: 1024,
            embedding_dim: 128,
            ..Self::desk(linguistic_dim, acoustic_dim)
        }
    }

    /// Text-only baseline: every sigmoid layer is speaker-aware and there is
    /// no speech encoder.
    pub fn vanilla(mut self) -> Self {
        self.speech_encoder = false;
        self.speaker_aware_text_encoder = true;
        self.speaker_aware_layers = (1..=self.num_common_ff).collect();
        self
    }

    pub fn is_speaker_aware(&self, common_layer: usize) -> bool {
        self.speaker_aware_layers.contains(&common_layer)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("linguistic_dim", self.linguistic_dim),
            ("acoustic_dim", self.acoustic_dim),
            ("hidden_width", self.hidden_width),
            ("embedding_dim", self.embedding_dim),
            ("num_text_ff", self.num_text_ff),
            ("num_common_ff", self.num_common_ff),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        let range = 1..=self.num_common_ff;
        for (name, set) in [
            ("speaker_aware_layers", &self.speaker_aware_layers),
            ("tied_layer_indices", &self.tied_layer_indices),
        ] {
            if let Some(bad) = set.iter().find(|l| !range.contains(l)) {
                return Err(Error::Config(format!(
                    "{name} entry {bad} outside common layers 1..={}",
                    self.num_common_ff
                )));
            }
            let mut sorted = set.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted != *set {
                return Err(Error::Config(format!("{name} must be strictly ascending")));
            }
        }
        if self.speech_encoder {
            let c = &self.conv;
            if c.stride == 0 || c.width < c.stride || c.filters == 0 {
                return Err(Error::Config(format!(
                    "conv requires width >= stride >= 1 and filters >= 1, got {c:?}"
                )));
            }
        }
        Ok(())
    }
}
