//! `manifest.toml`: the corpus index.
//!
//! ```toml
//! format = "modaladapt-corpus/1"
//! samples_per_frame = 80
//!
//! [task]            # optional snapshot of the generator settings
//! seed = 1
//! # ...
//!
//! [[speakers]]
//! label = "spk01"
//! role = "train"    # or "adapt"
//!
//! [[utterances]]
//! id = "spk01_0001"
//! speaker = "spk01"
//! split = "train"   # "train" | "valid" | "test"
//! frames = 27
//! linguistic = "linguistic/spk01_0001.mmaf"  # optional
//! acoustic = "acoustic/spk01_0001.mmaf"
//! waveform = "waveform/spk01_0001.mmwv"      # optional
//! ```
//!
//! Paths are relative to the manifest's directory. Externally produced
//! features can be dropped in with the same layout; the acoustic dimension
//! is then opaque to everything except the metrics layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    read_features, read_waveform, write_features, write_waveform, Dataset, SpeakerEntry, Split, SyntheticTaskSpec,
    Utterance,
};
use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "modaladapt-corpus/1";
const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtteranceRecord {
    pub id: String,
    pub speaker: String,
    pub split: Split,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linguistic: Option<PathBuf>,
    pub acoustic: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waveform: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format: String,
    pub samples_per_frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<SyntheticTaskSpec>,
    pub speakers: Vec<SpeakerEntry>,
    pub utterances: Vec<UtteranceRecord>,
}

impl CorpusManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: CorpusManifest = toml::from_str(&text).map_err(|e| Error::corrupt(path, e.to_string()))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::corrupt(
                path,
                format!("unsupported format {:?}, expected {MANIFEST_FORMAT:?}", manifest.format),
            ));
        }
        Ok(manifest)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))
    }
}

/// Writes every utterance of `dataset` plus `manifest.toml` into `dir`.
pub fn save_corpus(dataset: &Dataset, dir: &Path) -> Result<CorpusManifest> {
    dataset.validate()?;
    for sub in ["linguistic", "acoustic", "waveform"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut records = Vec::with_capacity(dataset.utterances.len());
    for u in &dataset.utterances {
        let mut record = UtteranceRecord {
            id: u.id.clone(),
            speaker: u.speaker.clone(),
            split: u.split,
            frames: u.frames(),
            linguistic: None,
            acoustic: PathBuf::from(format!("acoustic/{}.mmaf", u.id)),
            waveform: None,
        };
        write_features(&dir.join(&record.acoustic), &u.acoustic)?;
        if let Some(l) = &u.linguistic {
            let rel = PathBuf::from(format!("linguistic/{}.mmaf", u.id));
            write_features(&dir.join(&rel), l)?;
            record.linguistic = Some(rel);
        }
        if let Some(w) = &u.waveform {
            let rel = PathBuf::from(format!("waveform/{}.mmwv", u.id));
            write_waveform(&dir.join(&rel), w)?;
            record.waveform = Some(rel);
        }
        records.push(record);
    }
    let manifest = CorpusManifest {
        format: MANIFEST_FORMAT.to_string(),
        samples_per_frame: dataset.samples_per_frame,
        task: dataset.task.clone(),
        speakers: dataset.speakers.clone(),
        utterances: records,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Eagerly loads and validates a corpus. `path` may be the manifest itself
/// or the directory containing `manifest.toml`.
pub fn load_corpus(path: &Path) -> Result<Dataset> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let manifest = CorpusManifest::read(&manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut utterances = Vec::with_capacity(manifest.utterances.len());
    for r in &manifest.utterances {
        let acoustic = read_features(&root.join(&r.acoustic))?;
        if acoustic.rows() != r.frames {
            return Err(Error::Alignment(format!(
                "utterance {}: manifest says {} frames, acoustic file has {}",
                r.id,
                r.frames,
                acoustic.rows()
            )));
        }
        let linguistic = r.linguistic.as_ref().map(|p| read_features(&root.join(p))).transpose()?;
        let waveform = r.waveform.as_ref().map(|p| read_waveform(&root.join(p))).transpose()?;
        utterances.push(Utterance {
            id: r.id.clone(),
            speaker: r.speaker.clone(),
            split: r.split,
            linguistic,
            acoustic,
            waveform,
        });
    }
    let dataset = Dataset {
        speakers: manifest.speakers,
        utterances,
        samples_per_frame: manifest.samples_per_frame,
        task: manifest.task,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_corpus;

    fn tiny() -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            num_train_speakers: 2,
            num_adapt_speakers: 1,
            utterances_per_speaker: 2,
            adapt_utterances_per_speaker: 2,
            valid_per_speaker: 1,
            test_per_speaker: 1,
            ..SyntheticTaskSpec::default()
        }
    }

    #[test]
    fn generate_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_corpus(&tiny(), dir.path()).unwrap();
        assert_eq!(manifest.utterances.len(), 12);
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded, crate::data::generate_dataset(&tiny()).unwrap());
        assert_eq!(load_corpus(&dir.path().join("manifest.toml")).unwrap(), loaded);
    }

    #[test]
    fn misaligned_waveform_names_the_utterance() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_corpus(&tiny(), dir.path()).unwrap();
        let r = &manifest.utterances[1];
        let wave_path = dir.path().join(r.waveform.as_ref().unwrap());
        let mut wave = read_waveform(&wave_path).unwrap();
        wave.pop();
        write_waveform(&wave_path, &wave).unwrap();
        match load_corpus(dir.path()) {
            Err(Error::Alignment(msg)) => assert!(msg.contains(&r.id), "{msg}"),
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_feature_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_corpus(&tiny(), dir.path()).unwrap();
        let p = dir.path().join(&manifest.utterances[0].acoustic);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_corpus(&tiny(), dir.path()).unwrap();
        fs::remove_file(dir.path().join(manifest.utterances[2].linguistic.as_ref().unwrap())).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = generate_corpus(&tiny(), a.path()).unwrap();
        generate_corpus(&tiny(), b.path()).unwrap();
        let mut files = vec![PathBuf::from("manifest.toml")];
        for r in &m.utterances {
            files.push(r.acoustic.clone());
            files.extend(r.linguistic.clone());
            files.extend(r.waveform.clone());
        }
        for f in files {
            assert_eq!(fs::read(a.path().join(&f)).unwrap(), fs::read(b.path().join(&f)).unwrap(), "{f:?}");
        }
    }

    #[test]
    fn missing_validation_split_rejected() {
        let mut d = crate::data::generate_dataset(&tiny()).unwrap();
        d.utterances.retain(|u| !(u.speaker == "spk02" && u.split == Split::Valid));
        assert!(matches!(d.validate(), Err(Error::EmptySplit(_))));
    }
}
