//! Checkpoint container.
//!
//! ```text
//! CONVLSTM-CKPT v1\n
//! key = value\n            network configuration, one entry per line
//! ...
//! \n                       blank line ends the preamble
//! u32 tensor_count
//! repeated tensor_count times:
//!   u32 name_len, name (UTF-8), u32 rank, rank x u32 dims,
//!   prod(dims) x f32 values
//! ```
//!
//! All integers and floats are little-endian. Values are stored as 32-bit
//! floats, so saving rounds each parameter to the nearest `f32`; a loaded
//! checkpoint saves back to identical bytes.

use std::fs;
use std::path::Path;

use super::config::NetworkConfig;
use super::model::{Model, ModelParams};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "CONVLSTM-CKPT v1";

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(model.config.to_kv().render().as_bytes());
    out.push(b'\n');
    let named = model.params.named();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn line(&mut self) -> std::result::Result<&'a str, String> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| "unterminated header line".to_string())?;
        let s = std::str::from_utf8(&rest[..end]).map_err(|e| e.to_string())?;
        self.pos += end + 1;
        Ok(s)
    }
}

/// Parse checkpoint bytes; `origin` only labels errors.
pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<Model> {
    let fail = |msg: String| Error::format(origin, msg);
    let mut r = Reader { bytes, pos: 0 };
    if r.line().map_err(fail)? != CHECKPOINT_MAGIC {
        return Err(fail(format!("missing `{CHECKPOINT_MAGIC}` header")));
    }
    let mut preamble = String::new();
    loop {
        let line = r.line().map_err(fail)?;
        if line.is_empty() {
            break;
        }
        preamble.push_str(line);
        preamble.push('\n');
    }
    let doc = KvDoc::parse(&preamble).map_err(|e| fail(e.to_string()))?;
    doc.reject_unknown(|k| super::config::NETWORK_KEYS.contains(&k))
        .map_err(|e| fail(e.to_string()))?;
    let config = NetworkConfig::from_kv(&doc).map_err(|e| fail(e.to_string()))?;

    let count = r.u32().map_err(fail)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32().map_err(fail)? as usize;
        let name = std::str::from_utf8(r.take(nlen).map_err(fail)?)
            .map_err(|e| fail(e.to_string()))?
            .to_string();
        let rank = r.u32().map_err(fail)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32().map_err(fail)? as usize);
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * 4).map_err(fail)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| fail(format!("tensor {name}: {e}")))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    // Fill a correctly-shaped skeleton by name.
    let mut params = ModelParams::zeros(&config)?;
    let expected: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    if expected.len() != tensors.len() {
        return Err(fail(format!(
            "expected {} tensors for this configuration, found {}",
            expected.len(),
            tensors.len()
        )));
    }
    for ((want, slot), (name, t)) in expected.iter().zip(params.tensors_mut()).zip(tensors) {
        if *want != name {
            return Err(fail(format!("expected tensor `{want}`, found `{name}`")));
        }
        if slot.shape() != t.shape() {
            return Err(fail(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    Ok(Model { config, params })
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
