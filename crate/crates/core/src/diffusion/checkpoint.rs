//! Binary checkpoint: `PPLUS1`, a little-endian u64 header length, a JSON
//! header, then every parameter block as raw little-endian f64 values in
//! declaration order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::UNetConfig;
use super::model::ToyModel;
use super::schedule::NoiseSchedule;
use crate::conditioning::Vocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"PPLUS1";

#[derive(Serialize, Deserialize)]
struct Block {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: UNetConfig,
    registry: Vec<String>,
    schedule: NoiseSchedule,
    vocabulary: Vocabulary,
    blocks: Vec<Block>,
}

pub fn to_bytes(model: &ToyModel) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config().clone(),
        registry: model.registry().to_names(),
        schedule: model.schedule().clone(),
        vocabulary: model.vocab().clone(),
        blocks: model
            .params()
            .iter()
            .map(|(n, t)| Block {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(json.len() + 14 + 8 * model.params().element_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params().tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ToyModel> {
    let mut r = bytes;
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint is truncated".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| Error::Format("checkpoint is truncated".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    if r.len() < len {
        return Err(Error::Format("checkpoint header is truncated".into()));
    }
    let header: Header = serde_json::from_slice(&r[..len])?;
    r = &r[len..];
    let mut schedule = header.schedule;
    schedule.rebuild();
    let vocab = header.vocabulary.reindexed();
    let mut model = ToyModel::new(header.config, vocab, schedule, 0)?;
    if model.registry().to_names() != header.registry {
        return Err(Error::RegistryMismatch(
            "checkpoint registry does not match its configuration".into(),
        ));
    }
    let mut entries = Vec::with_capacity(header.blocks.len());
    for b in header.blocks {
        let n: usize = b.shape.iter().product();
        if r.len() < 8 * n {
            return Err(Error::Format(format!("parameter block {} is truncated", b.name)));
        }
        let data = r[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        r = &r[8 * n..];
        entries.push((b.name, Tensor::new(b.shape, data)?));
    }
    if !r.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after parameters", r.len())));
    }
    model.params_mut().load_from(entries)?;
    Ok(model)
}

pub fn save(model: &ToyModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ToyModel> {
    from_bytes(&std::fs::read(path)?)
}
