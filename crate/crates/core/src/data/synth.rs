//! Seeded synthetic stand-in for a multi-speaker vocoder corpus.
//!
//! Per frame, a linguistic vector `x_t` is mapped to acoustic features
//! `y_t = A_s·tanh(B·x_t) + c_s + ε` where `A_s`, `c_s` vary over a low-rank
//! speaker space. Channel 24 carries log-F0 and channel 25 a 0/1 voicing
//! flag. The waveform block for frame `t` is `(y_t − m)·D` for a fixed
//! full-row-rank decode matrix `D` (acoustic_dim × samples_per_frame), so
//! the features are recoverable from the waveform.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorpusManifest, Dataset, SpeakerEntry, SpeakerRole, Split, Utterance};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const CEPSTRAL_DIMS: usize = 24;
const LF0_CHANNEL: usize = 24;
const VOICING_CHANNEL: usize = 25;
const RANK: usize = 16;
const AR_COEFF: f64 = 0.85;
const SPEAKER_SPREAD: f64 = 0.35;
const DECODE_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub num_train_speakers: usize,
    pub num_adapt_speakers: usize,
    /// Training-split utterances per training speaker.
    pub utterances_per_speaker: usize,
    /// Adaptation-pool utterances (train split) per held-out speaker.
    pub adapt_utterances_per_speaker: usize,
    pub valid_per_speaker: usize,
    pub test_per_speaker: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub linguistic_dim: usize,
    pub acoustic_dim: usize,
    pub samples_per_frame: usize,
    pub noise_std: f64,
    pub speaker_factors: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            num_train_speakers: 8,
            num_adapt_speakers: 2,
            utterances_per_speaker: 30,
            adapt_utterances_per_speaker: 160,
            valid_per_speaker: 10,
            test_per_speaker: 10,
            min_frames: 20,
            max_frames: 40,
            linguistic_dim: 30,
            acoustic_dim: 26,
            samples_per_frame: 80,
            noise_std: 0.01,
            speaker_factors: 3,
            seed: 1,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.acoustic_dim != CEPSTRAL_DIMS + 2 {
            return bad(format!(
                "synthetic acoustic_dim must be {} (cepstra + log-F0 + voicing), got {}",
                CEPSTRAL_DIMS + 2,
                self.acoustic_dim
            ));
        }
        if self.linguistic_dim < 2 {
            return bad(format!("linguistic_dim must be >= 2, got {}", self.linguistic_dim));
        }
        if self.samples_per_frame < self.acoustic_dim {
            return bad(format!(
                "samples_per_frame ({}) must be >= acoustic_dim ({}) for the waveform to be invertible",
                self.samples_per_frame, self.acoustic_dim
            ));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!("bad frame range {}..={}", self.min_frames, self.max_frames));
        }
        if self.num_train_speakers == 0 {
            return bad("need at least one training speaker".into());
        }
        if self.num_train_speakers + self.num_adapt_speakers < 2 {
            return bad("need at least two speakers".into());
        }
        if self.valid_per_speaker == 0 || self.test_per_speaker == 0 {
            return bad("every speaker needs validation and test utterances".into());
        }
        if self.utterances_per_speaker == 0 {
            return bad("utterances_per_speaker must be >= 1".into());
        }
        if self.speaker_factors == 0 {
            return bad("speaker_factors must be >= 1".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std must be finite and >= 0, got {}", self.noise_std));
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed must fit in 63 bits, got {}", self.seed));
        }
        Ok(())
    }

    pub fn train_labels(&self) -> Vec<String> {
        (1..=self.num_train_speakers).map(|i| format!("spk{i:02}")).collect()
    }

    pub fn adapt_labels(&self) -> Vec<String> {
        (1..=self.num_adapt_speakers).map(|i| format!("new{i:02}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerParams {
    pub label: String,
    pub role: SpeakerRole,
    /// CEPSTRAL_DIMS × RANK mixing matrix.
    pub mix: Matrix,
    pub offset: Vec<f64>,
    pub log_f0_base: f64,
}

/// Everything drawn from the master seed: the shared linguistic projection,
/// per-speaker transforms and the decode matrix.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    spec: SyntheticTaskSpec,
    /// RANK × linguistic_dim.
    projection: Matrix,
    lf0_weight: Vec<f64>,
    speakers: Vec<SpeakerParams>,
    /// acoustic_dim × samples_per_frame.
    decode: Matrix,
    decode_offset: Vec<f64>,
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let normal = Normal::new(0.0, std).expect("finite std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("nonzero dims")
}

/// Cholesky solve of the symmetric positive-definite system `a·x = b`.
/// Returns `None` when `a` is not numerically positive definite.
fn cholesky_solve(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 1e-12 * a.get(i, i).abs().max(1.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

/// First eight bytes of SHA-256 over `"{seed}:{id}"`.
fn derived_seed(seed: u64, id: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{id}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl SyntheticWorld {
    pub fn new(spec: &SyntheticTaskSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let l = spec.linguistic_dim;
        let projection = gaussian_matrix(RANK, l, 1.0 / (l as f64).sqrt(), &mut rng);
        let lf0_weight: Vec<f64> = (0..RANK).map(|_| 0.08 * rng.sample::<f64, _>(StandardNormal)).collect();
        let base_mix = gaussian_matrix(CEPSTRAL_DIMS, RANK, 1.0 / (RANK as f64).sqrt(), &mut rng);
        let factor_mixes: Vec<Matrix> = (0..spec.speaker_factors)
            .map(|_| gaussian_matrix(CEPSTRAL_DIMS, RANK, 1.0 / (RANK as f64).sqrt(), &mut rng))
            .collect();
        let offset_loadings = gaussian_matrix(CEPSTRAL_DIMS, spec.speaker_factors, 0.3, &mut rng);
        let decode = gaussian_matrix(spec.acoustic_dim, spec.samples_per_frame, DECODE_STD, &mut rng);

        let roster: Vec<(String, SpeakerRole)> = spec
            .train_labels()
            .into_iter()
            .map(|s| (s, SpeakerRole::Train))
            .chain(spec.adapt_labels().into_iter().map(|s| (s, SpeakerRole::Adapt)))
            .collect();
        let mut speakers = Vec::with_capacity(roster.len());
        for (label, role) in roster {
            let z: Vec<f64> = (0..spec.speaker_factors).map(|_| rng.sample(StandardNormal)).collect();
            let g: f64 = rng.sample(StandardNormal);
            let mut mix = base_mix.clone();
            for (zj, fm) in z.iter().zip(&factor_mixes) {
                mix.add_assign(&fm.scaled(SPEAKER_SPREAD * zj))?;
            }
            let offset = (0..CEPSTRAL_DIMS)
                .map(|d| z.iter().enumerate().map(|(j, zj)| offset_loadings.get(d, j) * zj).sum())
                .collect();
            speakers.push(SpeakerParams {
                label,
                role,
                mix,
                offset,
                log_f0_base: 150f64.ln() + 0.25 * g,
            });
        }

        let mut decode_offset = vec![0.0; spec.acoustic_dim];
        decode_offset[LF0_CHANNEL] = 150f64.ln();
        decode_offset[VOICING_CHANNEL] = 0.5;

        let world = Self {
            spec: spec.clone(),
            projection,
            lf0_weight,
            speakers,
            decode,
            decode_offset,
        };
        world.check_separable()?;
        world.check_invertible()?;
        Ok(world)
    }

    pub fn spec(&self) -> &SyntheticTaskSpec {
        &self.spec
    }

    pub fn speakers(&self) -> &[SpeakerParams] {
        &self.speakers
    }

    pub fn decode_matrix(&self) -> &Matrix {
        &self.decode
    }

    pub fn decode_offset(&self) -> &[f64] {
        &self.decode_offset
    }

    fn speaker(&self, label: &str) -> Result<&SpeakerParams> {
        self.speakers
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::UnknownSpeaker(label.to_string()))
    }

    fn check_separable(&self) -> Result<()> {
        for (i, a) in self.speakers.iter().enumerate() {
            for b in &self.speakers[i + 1..] {
                let d_mix: f64 = a.mix.as_slice().iter().zip(b.mix.as_slice()).map(|(x, y)| (x - y).powi(2)).sum();
                let d_off: f64 = a.offset.iter().zip(&b.offset).map(|(x, y)| (x - y).powi(2)).sum();
                if (d_mix + d_off).sqrt() < 1e-6 {
                    return Err(Error::Config(format!("speakers {} and {} coincide", a.label, b.label)));
                }
            }
        }
        Ok(())
    }

    /// Least-squares recovery of a probe frame from its decoded block.
    fn check_invertible(&self) -> Result<()> {
        let mut probe: Vec<f64> = (0..self.spec.acoustic_dim).map(|d| ((d * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
        probe[VOICING_CHANNEL] = 1.0;
        let recovered = self.recover_frame(&self.decode_block(&probe))?;
        let residual = probe.iter().zip(&recovered).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if residual >= 1e-8 {
            return Err(Error::Config(format!("decode matrix is not invertible (residual {residual:e})")));
        }
        Ok(())
    }

    /// `(y − m)·D` for one acoustic frame.
    pub fn decode_block(&self, frame: &[f64]) -> Vec<f64> {
        let mut block = vec![0.0; self.spec.samples_per_frame];
        for (d, (&y, &m)) in frame.iter().zip(&self.decode_offset).enumerate() {
            let c = y - m;
            for (s, w) in block.iter_mut().zip(self.decode.row(d)) {
                *s += c * w;
            }
        }
        block
    }

    /// Least-squares inverse of [`decode_block`](Self::decode_block).
    pub fn recover_frame(&self, block: &[f64]) -> Result<Vec<f64>> {
        let gram = self.decode.matmul(&self.decode.transpose())?;
        let rhs: Vec<f64> = (0..self.spec.acoustic_dim)
            .map(|d| self.decode.row(d).iter().zip(block).map(|(a, b)| a * b).sum())
            .collect();
        let mut y = cholesky_solve(&gram, &rhs)
            .ok_or_else(|| Error::Config("decode matrix does not have full row rank".into()))?;
        for (v, m) in y.iter_mut().zip(&self.decode_offset) {
            *v += m;
        }
        Ok(y)
    }

    /// Noise-free acoustic frames for a speaker given linguistic frames
    /// (channel 0 of the linguistic input is the voicing flag).
    pub fn clean_acoustic(&self, speaker: &str, linguistic: &Matrix) -> Result<Matrix> {
        let sp = self.speaker(speaker)?;
        if linguistic.cols() != self.spec.linguistic_dim {
            return Err(Error::shape("clean_acoustic", self.spec.linguistic_dim, linguistic.cols()));
        }
        let hidden = linguistic.matmul(&self.projection.transpose())?.map(f64::tanh);
        let cep = hidden.matmul(&sp.mix.transpose())?;
        let mut out = Matrix::zeros(linguistic.rows(), self.spec.acoustic_dim);
        for t in 0..linguistic.rows() {
            let row = out.row_mut(t);
            for d in 0..CEPSTRAL_DIMS {
                row[d] = cep.get(t, d) + sp.offset[d];
            }
            let modulation: f64 = hidden.row(t).iter().zip(&self.lf0_weight).map(|(h, w)| h * w).sum();
            row[LF0_CHANNEL] = sp.log_f0_base + modulation;
            row[VOICING_CHANNEL] = linguistic.get(t, 0);
        }
        Ok(out)
    }

    fn linguistic_trajectory(&self, frames: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let l = self.spec.linguistic_dim;
        let period = rng.random_range(6..=14usize);
        let duty = rng.random_range(0.4..0.8);
        let phase = rng.random_range(0..period);
        let innovation = (1.0 - AR_COEFF * AR_COEFF).sqrt();
        let mut x = Matrix::zeros(frames, l);
        let mut state: Vec<f64> = (0..l - 1).map(|_| rng.sample(StandardNormal)).collect();
        for t in 0..frames {
            let pos = (t + phase) % period;
            let voiced = (pos as f64) < duty * period as f64;
            let row = x.row_mut(t);
            row[0] = if voiced { 1.0 } else { 0.0 };
            for (j, s) in state.iter_mut().enumerate() {
                if t > 0 {
                    let e: f64 = rng.sample(StandardNormal);
                    *s = AR_COEFF * *s + innovation * e;
                }
                row[j + 1] = *s;
            }
        }
        x
    }

    /// One utterance, fully determined by `(master seed, id)`.
    pub fn utterance(&self, id: &str, speaker: &str, split: Split) -> Result<Utterance> {
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(self.spec.seed, id));
        let frames = rng.random_range(self.spec.min_frames..=self.spec.max_frames);
        let linguistic = self.linguistic_trajectory(frames, &mut rng);
        let mut acoustic = self.clean_acoustic(speaker, &linguistic)?;
        let noise = self.spec.noise_std;
        if noise > 0.0 {
            for t in 0..frames {
                for v in &mut acoustic.row_mut(t)[..VOICING_CHANNEL] {
                    *v += noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        let mut waveform = Vec::with_capacity(frames * self.spec.samples_per_frame);
        for t in 0..frames {
            waveform.extend(self.decode_block(acoustic.row(t)));
        }
        if noise > 0.0 {
            for s in &mut waveform {
                *s += 0.05 * noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if let Some(bad) = waveform.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
            return Err(Error::Config(format!("utterance {id}: waveform sample {bad} outside [-1, 1]")));
        }
        Ok(Utterance {
            id: id.to_string(),
            speaker: speaker.to_string(),
            split,
            linguistic: Some(linguistic),
            acoustic,
            waveform: Some(waveform),
        })
    }

    /// The in-memory corpus: per speaker, training (or adaptation-pool)
    /// utterances, then validation, then test.
    pub fn dataset(&self) -> Result<Dataset> {
        let mut utterances = Vec::new();
        for sp in &self.speakers {
            let n_train = match sp.role {
                SpeakerRole::Train => self.spec.utterances_per_speaker,
                SpeakerRole::Adapt => self.spec.adapt_utterances_per_speaker,
            };
            let plan = [
                (Split::Train, n_train),
                (Split::Valid, self.spec.valid_per_speaker),
                (Split::Test, self.spec.test_per_speaker),
            ];
            let mut idx = 0;
            for (split, n) in plan {
                for _ in 0..n {
                    idx += 1;
                    utterances.push(self.utterance(&format!("{}_{idx:04}", sp.label), &sp.label, split)?);
                }
            }
        }
        let dataset = Dataset {
            speakers: self
                .speakers
                .iter()
                .map(|s| SpeakerEntry {
                    label: s.label.clone(),
                    role: s.role,
                })
                .collect(),
            utterances,
            samples_per_frame: self.spec.samples_per_frame,
            task: Some(self.spec.clone()),
        };
        dataset.validate()?;
        Ok(dataset)
    }
}

pub fn generate_dataset(spec: &SyntheticTaskSpec) -> Result<Dataset> {
    SyntheticWorld::new(spec)?.dataset()
}

/// Generates the corpus and writes it (feature files, waveforms and
/// `manifest.toml`) under `dir`.
pub fn generate_corpus(spec: &SyntheticTaskSpec, dir: &Path) -> Result<CorpusManifest> {
    let dataset = generate_dataset(spec)?;
    super::save_corpus(&dataset, dir)
}
