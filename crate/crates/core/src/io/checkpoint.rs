//! Checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SSRNCKPT"  u32 version  u64 body_len  body  sha256(body)
//! body: u32 config_len, config text (key = value)
//!       u32 param_count, then per param: u32 name_len, name, u32 rows, u32 cols, f64 data
//!       u8 has_optimizer [u64 step, per param: f64 first moment, f64 second moment]
//! ```
//!
//! The whole file is read and verified before any state is built, so a
//! damaged file never yields a partially loaded model.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Ssrn};
use crate::numcore::Matrix;
use crate::training::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSRNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 8 + 4 + 8;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Ssrn,
    pub adam: Option<AdamState>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_matrix_data(out: &mut Vec<u8>, m: &Matrix) {
    for &x in m.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &Ssrn, adam: Option<&AdamState>) -> Vec<u8> {
    let mut body = Vec::new();
    let config = model.config.to_text();
    put_u32(&mut body, config.len());
    body.extend_from_slice(config.as_bytes());
    put_u32(&mut body, model.params.len());
    for (_, name, m) in model.params.iter() {
        put_u32(&mut body, name.len());
        body.extend_from_slice(name.as_bytes());
        put_u32(&mut body, m.rows());
        put_u32(&mut body, m.cols());
        put_matrix_data(&mut body, m);
    }
    match adam {
        Some(state) => {
            body.push(1);
            body.extend_from_slice(&state.step.to_le_bytes());
            for (m, v) in state.m.iter().zip(&state.v) {
                put_matrix_data(&mut body, m);
                put_matrix_data(&mut body, v);
            }
        }
        None => body.push(0),
    }
    let mut out = Vec::with_capacity(PREFIX_LEN + body.len() + DIGEST_LEN);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&Sha256::digest(&body));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Integrity {
            path: self.path.into(),
            message: format!("body ends early at byte {}", self.at),
        })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let len = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| Error::Integrity {
            path: self.path.into(),
            message: format!("implausible shape {rows} x {cols}"),
        })?;
        let data = self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|e| Error::Integrity {
            path: self.path.into(),
            message: e.to_string(),
        })
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            path: path.into(),
            expected: "magic SSRNCKPT".into(),
            found: format!("{:?}", String::from_utf8_lossy(&bytes[..bytes.len().min(8)])),
        });
    }
    if bytes.len() < PREFIX_LEN {
        return Err(Error::Integrity {
            path: path.into(),
            message: "truncated header".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let body_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = (PREFIX_LEN as u64).saturating_add(body_len).saturating_add(DIGEST_LEN as u64);
    if bytes.len() as u64 != expected {
        return Err(Error::Integrity {
            path: path.into(),
            message: format!("file is {} bytes, header implies {expected}", bytes.len()),
        });
    }
    let body = &bytes[PREFIX_LEN..bytes.len() - DIGEST_LEN];
    if Sha256::digest(body).as_slice() != &bytes[bytes.len() - DIGEST_LEN..] {
        return Err(Error::Integrity {
            path: path.into(),
            message: "checksum mismatch".into(),
        });
    }

    let mut r = Reader { bytes: body, at: 0, path };
    let config = ModelConfig::from_text(r.text()?, path)?;
    let mut model = Ssrn::new(config, 0)?;
    let count = r.u32()?;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "{} holds {count} parameters, configuration defines {}",
            path.display(),
            model.params.len()
        )));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for &id in &ids {
        let name = r.text()?.to_string();
        let (rows, cols) = (r.u32()?, r.u32()?);
        let value = r.matrix(rows, cols)?;
        let expected = model.params.name(id);
        if name != expected {
            return Err(Error::Checkpoint(format!("parameter {name:?} found where {expected:?} was expected")));
        }
        model.params.set(id, value)?;
    }
    let adam = match r.take(1)?[0] {
        0 => None,
        1 => {
            let mut state = AdamState::new(&model.params);
            state.step = r.u64()?;
            for (i, &id) in ids.iter().enumerate() {
                let (rows, cols) = model.params.get(id).shape();
                state.m[i] = r.matrix(rows, cols)?;
                state.v[i] = r.matrix(rows, cols)?;
            }
            Some(state)
        }
        flag => {
            return Err(Error::Integrity {
                path: path.into(),
                message: format!("invalid optimizer flag {flag}"),
            })
        }
    };
    if r.at != body.len() {
        return Err(Error::Integrity {
            path: path.into(),
            message: format!("{} trailing bytes", body.len() - r.at),
        });
    }
    Ok(Checkpoint { model, adam })
}

pub fn save_checkpoint(model: &Ssrn, adam: Option<&AdamState>, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model, adam)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

impl Checkpoint {
    /// Rejects a run configuration that disagrees with the stored model.
    /// A different sampled length is a shape error; other fields are
    /// checkpoint errors.
    pub fn check_compatible(&self, config: &ModelConfig) -> Result<()> {
        let stored = &self.model.config;
        if stored.length != config.length {
            return Err(Error::shape(
                "checkpoint sampled length",
                (stored.length, stored.d_raw),
                (config.length, config.d_raw),
            ));
        }
        if stored != config {
            let diffs: Vec<String> = stored
                .entries()
                .into_iter()
                .zip(config.entries())
                .filter(|(a, b)| a.1 != b.1)
                .map(|(a, b)| format!("{}: checkpoint {} vs config {}", a.0, a.1, b.1))
                .collect();
            return Err(Error::Checkpoint(format!("configuration mismatch ({})", diffs.join(", "))));
        }
        Ok(())
    }
}
