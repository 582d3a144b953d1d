//! Binary model container, little-endian:
//!
//! ```text
//! magic   "TOPM"
//! version u8           (MODEL_FORMAT_VERSION)
//! cfg_len u32          length of the JSON config that follows
//! cfg     [u8; cfg_len] MlpConfig as JSON (layer sizes, dropout, scaling)
//! count   u64          number of parameters
//! params  [f64; count] W1 b1 W2 b2 W3 b3, weights row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::neural::{MlpConfig, PolicyModel};

pub const MODEL_MAGIC: &[u8; 4] = b"TOPM";
pub const MODEL_FORMAT_VERSION: u8 = 1;

pub fn encode_model(model: &PolicyModel) -> Result<Vec<u8>> {
    let cfg = serde_json::to_vec(model.config())?;
    let params = model.params();
    let mut out = Vec::with_capacity(4 + 1 + 4 + cfg.len() + 8 + 8 * params.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.push(MODEL_FORMAT_VERSION);
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Corrupt(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<PolicyModel> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::Corrupt("not a model file (bad magic)".into()));
    }
    let version = c.take(1, "version")?[0];
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let cfg_len = u32::from_le_bytes(c.take(4, "config length")?.try_into().unwrap()) as usize;
    let config: MlpConfig = serde_json::from_slice(c.take(cfg_len, "config")?)
        .map_err(|e| Error::Corrupt(format!("bad config: {e}")))?;
    let count = u64::from_le_bytes(c.take(8, "parameter count")?.try_into().unwrap()) as usize;
    let raw = c.take(
        count
            .checked_mul(8)
            .ok_or_else(|| Error::Corrupt("parameter count overflow".into()))?,
        "parameters",
    )?;
    if c.pos != bytes.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    let params = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    PolicyModel::from_parts(config, params).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn save_model(model: &PolicyModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<PolicyModel> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
