//! Inference-time embedding cache.
//!
//! After training, every token's output embedding depends only on the token,
//! so the whole unit collapses into a `V × m` lookup table.
//!
//! File layout (all integers and floats little-endian):
//!
//! ```text
//! "DEFC"  u32 version=1  u32 V  u32 m  f32[V·m] rows  u32 crc32(rows)
//! ```

use std::path::Path;

use crate::embedder::{DefineUnit, Embedder};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DEFC";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Row-major `V × m` table. Values are held as `f64` but are always exactly
/// representable as `f32`, so saving and loading is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingCache {
    vocab_size: usize,
    dim: usize,
    rows: Vec<f64>,
}

impl EmbeddingCache {
    /// Rounds `rows` to 32-bit precision.
    pub fn from_rows(vocab_size: usize, dim: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != vocab_size * dim || vocab_size == 0 || dim == 0 {
            return Err(Error::Shape {
                op: "embedding cache",
                left: vec![vocab_size, dim],
                right: vec![rows.len()],
            });
        }
        Ok(EmbeddingCache {
            vocab_size,
            dim,
            rows: rows.iter().map(|&x| x as f32 as f64).collect(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id * self.dim..(id + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    /// Plain table lookup, `[ids.len() × m]`.
    pub fn cached_embed(&self, ids: &[usize]) -> Result<Tensor> {
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for &id in ids {
            if id >= self.vocab_size {
                return Err(Error::Index {
                    context: "cached_embed",
                    index: id,
                    bound: self.vocab_size,
                });
            }
            out.extend_from_slice(self.row(id));
        }
        Tensor::matrix(ids.len(), self.dim, out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.rows.len() * 4 + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        let payload_start = out.len();
        for &x in &self.rows {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        let crc = crc32fast::hash(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format {
                offset: bytes.len(),
                reason: format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len()),
            });
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format {
                offset: 0,
                reason: format!("bad magic {:?}", &bytes[0..4]),
            });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let (vocab_size, dim) = (word(8) as usize, word(12) as usize);
        if vocab_size == 0 || dim == 0 {
            return Err(Error::Format {
                offset: 8,
                reason: format!("empty table {vocab_size}x{dim}"),
            });
        }
        let payload_len = vocab_size
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format {
                offset: 8,
                reason: "table size overflows".into(),
            })?;
        let expected = HEADER_LEN + payload_len + 4;
        if bytes.len() != expected {
            return Err(Error::Format {
                offset: bytes.len().min(expected),
                reason: format!("expected {expected} bytes, found {}", bytes.len()),
            });
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
        let stored = word(HEADER_LEN + payload_len);
        let actual = crc32fast::hash(payload);
        if stored != actual {
            return Err(Error::Format {
                offset: HEADER_LEN + payload_len,
                reason: format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}"),
            });
        }
        let rows = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(EmbeddingCache {
            vocab_size,
            dim,
            rows,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        EmbeddingCache::from_bytes(&std::fs::read(path)?)
    }
}

/// Embeds every vocabulary entry, in id order, with gradients off.
pub fn embed_vocab(unit: &DefineUnit, store: &ParamStore) -> Result<Tensor> {
    let ids: Vec<usize> = (0..unit.config.vocab_size).collect();
    let mut tape = Tape::new();
    let bound = store.bind_frozen(&mut tape);
    let out = unit.forward_embed(&mut tape, &bound, &ids)?;
    Ok(tape.tensor(out))
}

pub fn export_cache(unit: &DefineUnit, store: &ParamStore) -> Result<EmbeddingCache> {
    let table = embed_vocab(unit, store)?;
    EmbeddingCache::from_rows(unit.config.vocab_size, unit.output_dim(), table.data())
}

impl Embedder {
    pub fn export_cache(&self) -> Result<EmbeddingCache> {
        export_cache(&self.unit, &self.store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{DefineConfig, ExpansionVariant};

    fn toy() -> Embedder {
        Embedder::new(DefineConfig {
            vocab_size: 3,
            n: 4,
            k: 8,
            m: 4,
            depth: 2,
            g_max: 2,
            variant: ExpansionVariant::Define,
            seed: 5,
            ..DefineConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn rows_equal_single_token_embeddings() {
        let e = toy();
        let cache = e.export_cache().unwrap();
        assert_eq!(cache.vocab_size(), 3);
        for v in 0..3 {
            let live = e.embed(&[v]).unwrap();
            for (a, b) in live.data().iter().zip(cache.row(v)) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let cache = toy().export_cache().unwrap();
        let bytes = cache.to_bytes();
        assert_eq!(&bytes[..4], b"DEFC");
        assert_eq!(bytes.len(), 16 + 3 * 4 * 4 + 4);
        let back = EmbeddingCache::from_bytes(&bytes).unwrap();
        assert_eq!(back, cache);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let bytes = toy().export_cache().unwrap().to_bytes();
        let err = EmbeddingCache::from_bytes(&bytes[..10]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 10, .. }), "{err}");

        let err = EmbeddingCache::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");

        let mut flipped = bytes.clone();
        flipped[20] ^= 0x40;
        let err = EmbeddingCache::from_bytes(&flipped).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 64, .. }), "{err}");

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(
            EmbeddingCache::from_bytes(&magic),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn cached_embed_checks_range() {
        let cache = toy().export_cache().unwrap();
        let t = cache.cached_embed(&[2, 0]).unwrap();
        assert_eq!(t.row(0), cache.row(2));
        assert!(cache.cached_embed(&[3]).is_err());
    }
}
