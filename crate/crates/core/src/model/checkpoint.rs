//! `MMCK1` checkpoints: the 5-byte magic, a little-endian `u32` header
//! length, a UTF-8 JSON header (config, speaker labels, tensor manifest),
//! then every tensor as little-endian `f64` in manifest order. Offsets in the
//! manifest are byte offsets from the start of the tensor data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, MultimodalModel, ParamId};
use crate::error::{Error, Result};
use crate::numerics::ParameterStore;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MMCK1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub speakers: Vec<String>,
    #[serde(default)]
    pub speech_encoder_trained: bool,
    pub tensors: Vec<TensorEntry>,
}

/// Hex SHA-256 of the JSON-serialised config; ties embedding files to the
/// model layout they were estimated against.
pub fn config_hash(config: &ModelConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serialises");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn header_for(model: &MultimodalModel) -> (CheckpointHeader, Vec<ParamId>) {
    let ids = model.param_ids();
    let mut offset = 0u64;
    let tensors = ids
        .iter()
        .map(|id| {
            let shape = model.param_shape(id).expect("own parameter");
            let entry = TensorEntry {
                name: id.to_string(),
                shape: shape.clone(),
                offset,
            };
            offset += 8 * shape.iter().product::<usize>() as u64;
            entry
        })
        .collect();
    (
        CheckpointHeader {
            config: model.config().clone(),
            speakers: model.speaker_labels().to_vec(),
            speech_encoder_trained: model.speech_encoder_trained(),
            tensors,
        },
        ids,
    )
}

pub fn write_checkpoint<W: Write>(model: &MultimodalModel, mut w: W) -> std::io::Result<()> {
    let (header, ids) = header_for(model);
    let header = serde_json::to_vec(&header).expect("header serialises");
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for id in &ids {
        for v in model.param(id).expect("own parameter") {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn save_checkpoint(model: &MultimodalModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Parses just the header; `origin` names the source in errors.
pub fn read_checkpoint_header(bytes: &[u8], origin: &Path) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < 9 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(Error::corrupt(origin, "bad magic, expected MMCK1"));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(9..9 + len)
        .ok_or_else(|| Error::corrupt(origin, "truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| Error::corrupt(origin, format!("header: {e}")))?;
    Ok((header, 9 + len))
}

pub fn read_checkpoint<R: Read>(mut r: R, origin: &Path) -> Result<MultimodalModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(origin, e))?;
    let (header, data_start) = read_checkpoint_header(&bytes, origin)?;
    let data = &bytes[data_start..];

    let mut model = MultimodalModel::build(header.config.clone(), header.speakers.clone(), 0)?;
    if header.speech_encoder_trained {
        model.mark_speech_encoder_trained();
    }
    let (expected, ids) = header_for(&model);
    if expected.tensors.len() != header.tensors.len() {
        return Err(Error::corrupt(
            origin,
            format!("expected {} tensors, manifest lists {}", expected.tensors.len(), header.tensors.len()),
        ));
    }
    for ((want, got), id) in expected.tensors.iter().zip(&header.tensors).zip(&ids) {
        if want.name != got.name || want.shape != got.shape {
            return Err(Error::corrupt(
                origin,
                format!("tensor {} {:?} does not match model layout {} {:?}", got.name, got.shape, want.name, want.shape),
            ));
        }
        let n: usize = got.shape.iter().product();
        let start = got.offset as usize;
        let chunk = data
            .get(start..start + 8 * n)
            .ok_or_else(|| Error::corrupt(origin, format!("truncated data for {}", got.name)))?;
        let dst = model.param_mut(id).expect("own parameter");
        for (d, b) in dst.iter_mut().zip(chunk.chunks_exact(8)) {
            *d = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    }
    let total: u64 = header
        .tensors
        .last()
        .map_or(0, |t| t.offset + 8 * t.shape.iter().product::<usize>() as u64);
    if data.len() as u64 != total {
        return Err(Error::corrupt(origin, format!("{} data bytes, manifest implies {total}", data.len())));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<MultimodalModel> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file), path)
}
