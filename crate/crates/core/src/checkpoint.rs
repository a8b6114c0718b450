//! Model checkpoints.
//!
//! ```text
//! "DEFM" u32 version=1
//! u32 header_len, header_len bytes of JSON {"model": ModelConfig, "vocab": [[token, freq], ...]}
//! u32 tensor_count
//! per tensor, in declaration order:
//!     u32 name_len, name bytes, u32 rank, u32 dims[rank], f64 data[prod(dims)]
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::lm::{LanguageModel, ModelConfig};

pub const MAGIC: &[u8; 4] = b"DEFM";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocab: Vec<(String, u64)>,
}

pub fn to_bytes(model: &LanguageModel, vocab: &Vocab) -> Result<Vec<u8>> {
    if vocab.len() != model.vocab_size() {
        return Err(Error::Contract(format!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            model.vocab_size()
        )));
    }
    let header = Header {
        model: model.config.clone(),
        vocab: vocab
            .tokens()
            .iter()
            .cloned()
            .zip(vocab.freqs().iter().copied())
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Contract(e.to_string()))?;
    let mut out = Vec::with_capacity(json.len() + model.store.scalar_count() * 8 + 64);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);
    put_u32(&mut out, model.store.len() as u32);
    for (name, t) in model.store.names().iter().zip(model.store.tensors()) {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(LanguageModel, Vocab)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "not a model checkpoint (bad magic)".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported checkpoint version {version}"),
        });
    }
    let header_len = r.u32("header length")? as usize;
    let header_at = r.pos;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?).map_err(|e| {
        Error::Format {
            offset: header_at,
            reason: format!("bad header: {e}"),
        }
    })?;
    let vocab = Vocab::from_pairs(header.vocab).map_err(|e| Error::Format {
        offset: header_at,
        reason: e.to_string(),
    })?;
    let mut model = LanguageModel::new(header.model).map_err(|e| Error::Format {
        offset: header_at,
        reason: e.to_string(),
    })?;

    let count_at = r.pos;
    let count = r.u32("tensor count")? as usize;
    if count != model.store.len() {
        return Err(Error::Format {
            offset: count_at,
            reason: format!("expected {} tensors, found {count}", model.store.len()),
        });
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let at = r.pos;
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?).map_err(|_| Error::Format {
            offset: at,
            reason: "tensor name is not UTF-8".into(),
        })?;
        let rank = r.u32("tensor rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("tensor shape").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let expected = &model.store.tensors()[i];
        if name != model.store.names()[i] || shape != expected.shape() {
            return Err(Error::Format {
                offset: at,
                reason: format!(
                    "tensor {i}: found {name} {shape:?}, expected {} {:?}",
                    model.store.names()[i],
                    expected.shape()
                ),
            });
        }
        let raw = r.take(expected.len() * 8, "tensor data")?;
        data.push(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    model.store.replace_data(data);
    Ok((model, vocab))
}

pub fn save(path: impl AsRef<Path>, model: &LanguageModel, vocab: &Vocab) -> Result<()> {
    std::fs::write(path, to_bytes(model, vocab)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(LanguageModel, Vocab)> {
    from_bytes(&std::fs::read(path)?)
}
