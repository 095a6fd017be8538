//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic      4 bytes  "RKG1"
//! version    u32
//! scorer     u8       0 = DistMult, 1 = ConvE
//! dims       5 × u64  D, d, n, C, |R|
//! relations  |R| × u8 relation codes, embedding-row order
//! blocks     5 × (u64 count, count × f64)   Wx, Ef, Er, kernels, Wc
//! metadata   u64 byte length, UTF-8 `key=value\n` lines sorted by key
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kg::RelationKind;
use crate::scoring::{EmbeddingModel, ModelDims, ScorerKind};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RKG1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EmbeddingModel,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(model: EmbeddingModel) -> Self {
        Self {
            model,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let model = &self.model;
        let dims = model.dims();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(model.kind().code());
        for v in [
            dims.feature_dim,
            dims.embed_dim,
            dims.findings,
            dims.channels,
            dims.relations.len(),
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend(dims.relations.iter().map(|r| r.code()));
        for block in model.blocks() {
            out.extend_from_slice(&(block.len() as u64).to_le_bytes());
            for v in block.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("metadata entry `{k}` cannot be encoded")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes, not a checkpoint".into()));
        }
        let version = u32::from_le_bytes(r.array("version")?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let kind_code = r.take(1, "scorer kind")?[0];
        let kind = ScorerKind::from_code(kind_code)
            .ok_or_else(|| Error::Checkpoint(format!("unknown scorer code {kind_code}")))?;
        let mut dims = [0usize; 5];
        for (slot, name) in dims.iter_mut().zip(["D", "d", "n", "C", "|R|"]) {
            *slot = r.usize(name)?;
        }
        let relations = r
            .take(dims[4], "relation codes")?
            .iter()
            .map(|c| RelationKind::from_code(*c).ok_or_else(|| Error::Checkpoint(format!("unknown relation code {c}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut blocks: [Vec<f64>; 5] = Default::default();
        for block in &mut blocks {
            let len = r.usize("block length")?;
            let raw = r.take(
                len.checked_mul(8)
                    .ok_or_else(|| Error::Checkpoint("block length overflow".into()))?,
                "parameter block",
            )?;
            *block = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
        }
        let meta_len = r.usize("metadata length")?;
        let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;
        let mut metadata = BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed metadata line `{line}`")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let dims = ModelDims::new(dims[0], dims[1], dims[2], dims[3], relations);
        let model = EmbeddingModel::from_blocks(kind, dims, blocks)
            .map_err(|e| Error::Checkpoint(format!("inconsistent parameters: {e}")))?;
        Ok(Self { model, metadata })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.array(what)?);
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} too large")))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
