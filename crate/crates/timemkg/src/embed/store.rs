//! On-disk store of per-variable prompt vectors.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "TMKG"
//! version u32      1
//! n       u32      record count
//! d       u32      vector length
//! record * n:
//!   id_len u32, id bytes (UTF-8)
//!   hash   32 bytes (raw SHA-256 of the prompt text)
//!   values d x f64
//! ```
//!
//! Records are sorted by variable id. Loading against the current prompt
//! set compares stored hashes and fails with `StaleCache` naming the
//! first variable whose prompt text changed since the store was built.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::PromptRecord;

pub const STORE_MAGIC: &[u8; 4] = b"TMKG";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntry {
    pub variable_id: String,
    /// Hex SHA-256 of the prompt text this vector was computed from.
    pub prompt_hash: String,
    pub vector: Vec<f64>,
}

/// Per-variable prompt vectors keyed by variable id and prompt hash.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub entries: Vec<StoreEntry>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, mut entries: Vec<StoreEntry>) -> Self {
        entries.sort_by(|a, b| a.variable_id.cmp(&b.variable_id));
        Self { dim, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn vector(&self, variable_id: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|e| e.variable_id == variable_id)
            .map(|e| e.vector.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for e in &self.entries {
            let id = e.variable_id.as_bytes();
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id);
            out.extend_from_slice(&decode_hex32(&e.prompt_hash));
            for v in &e.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decode without hash validation.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != STORE_MAGIC {
            return Err(Error::parse(0, "bad magic, not an embedding store"));
        }
        let version = r.u32()?;
        if version != STORE_VERSION {
            return Err(Error::parse(0, format!("unsupported store version {version}")));
        }
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        if n.saturating_mul(d) > 100_000_000 {
            return Err(Error::parse(0, "store header describes an implausible size"));
        }
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let id_len = r.u32()? as usize;
            if id_len > 1_000_000 {
                return Err(Error::parse(0, "implausible id length"));
            }
            let id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| Error::parse(0, "variable id is not UTF-8"))?
                .to_string();
            let hash = encode_hex(r.take(32)?);
            let mut vector = Vec::with_capacity(d);
            for _ in 0..d {
                let chunk = r.take(8)?;
                vector.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
            }
            entries.push(StoreEntry {
                variable_id: id,
                prompt_hash: hash,
                vector,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::parse(0, "trailing bytes after last record"));
        }
        Ok(Self { dim: d, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Check stored hashes against the current prompt set. Any variable
    /// whose prompt changed, disappeared, or is missing from the store is
    /// stale and needs re-embedding.
    pub fn validate_against(&self, prompts: &[PromptRecord]) -> Result<()> {
        for p in prompts {
            match self.entries.iter().find(|e| e.variable_id == p.variable_id) {
                Some(e) if e.prompt_hash == p.hash => {}
                _ => {
                    return Err(Error::StaleCache {
                        variable: p.variable_id.clone(),
                    })
                }
            }
        }
        if let Some(extra) = self
            .entries
            .iter()
            .find(|e| !prompts.iter().any(|p| p.variable_id == e.variable_id))
        {
            return Err(Error::StaleCache {
                variable: extra.variable_id.clone(),
            });
        }
        Ok(())
    }
}

/// Load and validate against the prompts the caller expects to be cached.
pub fn load_prompt_store(path: &Path, expected: &[PromptRecord]) -> Result<EmbeddingStore> {
    let store = EmbeddingStore::read(path)?;
    store.validate_against(expected)?;
    Ok(store)
}

/// Run the whole prompt pipeline (tokenize, embed, compress) and collect
/// the resulting per-variable vectors into a store keyed by prompt hash.
pub fn build_prompt_store(
    prompts: &[PromptRecord],
    embedder: &crate::embed::Embedder,
    params: &crate::embed::Token2VectorParams,
    activation: crate::embed::Activation,
) -> Result<EmbeddingStore> {
    let l_max = params.l_max();
    let mut tokenizer = crate::embed::Tokenizer::new();
    let mut entries = Vec::with_capacity(prompts.len());
    for p in prompts {
        let ids = tokenizer.tokenize(&p.text, l_max);
        let matrix = embedder.embed(&ids, l_max)?.to_tensor();
        let vector = crate::embed::token2vector(&matrix, params, activation)?;
        entries.push(StoreEntry {
            variable_id: p.variable_id.clone(),
            prompt_hash: p.hash.clone(),
            vector: vector.to_vec(),
        });
    }
    Ok(EmbeddingStore::new(params.out_dim(), entries))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(0, "unexpected end of store file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

fn decode_hex32(hex: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    let bytes = hex.as_bytes();
    for (i, o) in out.iter_mut().enumerate() {
        let hi = hex_val(bytes.get(2 * i).copied().unwrap_or(b'0'));
        let lo = hex_val(bytes.get(2 * i + 1).copied().unwrap_or(b'0'));
        *o = hi << 4 | lo;
    }
    out
}

fn hex_val(c: u8) -> u8 {
    match c {
        b'0'..=b'9' => c - b'0',
        b'a'..=b'f' => c - b'a' + 10,
        b'A'..=b'F' => c - b'A' + 10,
        _ => 0,
    }
}

fn encode_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
