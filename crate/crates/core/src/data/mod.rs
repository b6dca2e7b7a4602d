//! Utterance-level corpora: the in-memory [`Dataset`], the deterministic
//! synthetic multi-speaker generator, the binary feature/waveform formats and
//! the TOML manifest that ties them together.

mod io;
mod manifest;
mod subsets;
mod synth;

pub use io::{read_features, read_waveform, write_features, write_waveform, FEATURE_MAGIC, WAVEFORM_MAGIC};
pub use manifest::{load_corpus, save_corpus, CorpusManifest, UtteranceRecord, MANIFEST_FORMAT};
pub use subsets::split_adaptation_subsets;
pub use synth::{generate_corpus, generate_dataset, SpeakerParams, SyntheticTaskSpec, SyntheticWorld};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// `Train` speakers form the embedding table; `Adapt` speakers are held out
/// and only ever reached through adaptation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeakerRole {
    Train,
    Adapt,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerEntry {
    pub label: String,
    pub role: SpeakerRole,
}

/// One utterance: frame-aligned linguistic and acoustic features plus the
/// waveform (`frames × samples_per_frame` samples). Either input modality
/// may be absent, e.g. untranscribed adaptation speech has no linguistic
/// features.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub split: Split,
    pub linguistic: Option<Matrix>,
    pub acoustic: Matrix,
    pub waveform: Option<Vec<f64>>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.acoustic.rows()
    }

    pub fn linguistic(&self) -> Result<&Matrix> {
        self.linguistic
            .as_ref()
            .ok_or_else(|| Error::MissingData(format!("utterance {} has no linguistic features", self.id)))
    }

    pub fn waveform(&self) -> Result<&[f64]> {
        self.waveform
            .as_deref()
            .ok_or_else(|| Error::MissingData(format!("utterance {} has no waveform", self.id)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub speakers: Vec<SpeakerEntry>,
    pub utterances: Vec<Utterance>,
    pub samples_per_frame: usize,
    pub task: Option<SyntheticTaskSpec>,
}

impl Dataset {
    pub fn speaker_labels(&self, role: SpeakerRole) -> Vec<String> {
        self.speakers.iter().filter(|s| s.role == role).map(|s| s.label.clone()).collect()
    }

    pub fn role_of(&self, speaker: &str) -> Option<SpeakerRole> {
        self.speakers.iter().find(|s| s.label == speaker).map(|s| s.role)
    }

    /// Utterances of speakers with `role` in `split`, in corpus order.
    pub fn select(&self, role: SpeakerRole, split: Split) -> Vec<&Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.split == split && self.role_of(&u.speaker) == Some(role))
            .collect()
    }

    pub fn speaker_utterances(&self, speaker: &str, split: Split) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == split && u.speaker == speaker).collect()
    }

    /// Acoustic dimension shared by every utterance.
    pub fn acoustic_dim(&self) -> Option<usize> {
        self.utterances.first().map(|u| u.acoustic.cols())
    }

    pub fn linguistic_dim(&self) -> Option<usize> {
        self.utterances.iter().find_map(|u| u.linguistic.as_ref().map(Matrix::cols))
    }

    /// Checks the structural invariants: known speakers, frame/sample
    /// alignment, consistent dims, and non-empty validation and test splits
    /// for every speaker.
    pub fn validate(&self) -> Result<()> {
        let ad = self.acoustic_dim();
        let ld = self.linguistic_dim();
        for u in &self.utterances {
            if self.role_of(&u.speaker).is_none() {
                return Err(Error::UnknownSpeaker(format!("{} (utterance {})", u.speaker, u.id)));
            }
            if Some(u.acoustic.cols()) != ad {
                return Err(Error::shape("dataset acoustic dim", ad.unwrap_or(0), u.acoustic.cols()));
            }
            if let Some(l) = &u.linguistic {
                if l.rows() != u.frames() {
                    return Err(Error::Alignment(format!(
                        "utterance {}: {} linguistic frames vs {} acoustic frames",
                        u.id,
                        l.rows(),
                        u.frames()
                    )));
                }
                if Some(l.cols()) != ld {
                    return Err(Error::shape("dataset linguistic dim", ld.unwrap_or(0), l.cols()));
                }
            }
            if let Some(w) = &u.waveform {
                if w.len() != u.frames() * self.samples_per_frame {
                    return Err(Error::Alignment(format!(
                        "utterance {}: {} samples, expected {} frames x {} = {}",
                        u.id,
                        w.len(),
                        u.frames(),
                        self.samples_per_frame,
                        u.frames() * self.samples_per_frame
                    )));
                }
            }
        }
        for s in &self.speakers {
            for split in [Split::Valid, Split::Test] {
                if !self.utterances.iter().any(|u| u.speaker == s.label && u.split == split) {
                    return Err(Error::EmptySplit(format!("speaker {} has no {split:?} utterances", s.label)));
                }
            }
        }
        Ok(())
    }
}
