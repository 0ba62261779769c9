//! Binary checkpoint files.
//!
//! Layout, little-endian:
//!
//! ```text
//! "ADDC"          4 bytes magic
//! version         u16 (= 1)
//! meta_len        u32, then meta_len bytes of JSON (model, train config, epoch, val loss, rng)
//! n_params        u32
//! per parameter:  name_len u32, name, ndims u8, ndims × u32, product(dims) × f32
//! crc32           u32 over every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featureio::write_atomic;
use crate::model::ModelConfig;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::{Checkpoint, RngState, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ADDC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    val_loss: f64,
    rng: RngState,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let meta = Meta {
        model: ck.model.clone(),
        train: ck.train.clone(),
        epoch: ck.epoch,
        val_loss: ck.val_loss,
        rng: ck.rng.clone(),
    };
    let meta = serde_json::to_vec(&meta).map_err(|e| Error::Validation(format!("checkpoint metadata: {e}")))?;
    let mut out = Vec::with_capacity(64 + meta.len() + 4 * ck.params.num_scalars());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(ck.params.len() as u32).to_le_bytes());
    for p in ck.params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            path: self.path.to_path_buf(),
            what: format!("{what} runs past the end"),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let truncated = |what: &str| Error::Truncated { path: path.to_path_buf(), what: what.into() };
    let format = |what: String| Error::Format { path: path.to_path_buf(), what };
    if bytes.len() < 4 {
        return Err(truncated("no magic"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: "ADDC" });
    }
    if bytes.len() < 6 {
        return Err(truncated("no version"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { path: path.to_path_buf(), found: version, supported: CHECKPOINT_VERSION });
    }
    if bytes.len() < 10 {
        return Err(truncated("no checksum"));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { path: path.to_path_buf(), stored, computed });
    }

    let mut r = Reader { bytes: body, pos: 6, path };
    let meta_len = r.u32("metadata length")? as usize;
    let meta: Meta = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| format(format!("metadata: {e}")))?;
    let n = r.u32("parameter count")? as usize;
    let mut params = ParamStore::<f32>::new();
    for i in 0..n {
        let name_len = r.u32("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| format(format!("parameter {i} name is not UTF-8")))?
            .to_owned();
        let ndims = r.take(1, "rank")?[0] as usize;
        let shape = (0..ndims).map(|_| r.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| format("shape overflows".into()))?;
        let raw = r.take(count.checked_mul(4).ok_or_else(|| format("shape overflows".into()))?, "parameter data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.add(name, Tensor::new(&shape, data)?);
    }
    if r.pos != body.len() {
        return Err(format(format!("{} unexpected trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint { model: meta.model, train: meta.train, epoch: meta.epoch, val_loss: meta.val_loss, rng: meta.rng, params })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// True when both stores hold the same names, shapes and bit patterns.
pub fn params_bitwise_equal(a: &ParamStore<f32>, b: &ParamStore<f32>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b.iter()).all(|(x, y)| {
            x.name == y.name
                && x.shape == y.shape
                && x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits())
        })
}
