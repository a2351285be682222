//! `SQ2C` checkpoint files.
//!
//! Layout: magic `SQ2C`, u32-LE format version, 32-byte SHA-256 of the
//! metadata text, u32-LE metadata length and the UTF-8 `key=value` metadata,
//! u32-LE tensor count, then per tensor a u16-LE name length, the name, and
//! the tensor in `SQ2T` form. Payloads are always 32-bit.

use std::io::{Cursor, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ModelConfig, ParamSet, Translator};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SQ2C";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// `key=value` lines; includes the model config.
    pub metadata: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn config_hash(metadata: &str) -> [u8; 32] {
    Sha256::digest(metadata.as_bytes()).into()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&config_hash(&self.metadata));
        let meta = self.metadata.as_bytes();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let n = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&t.to_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |d: String| Error::format("checkpoint", d);
        let mut r = Cursor::new(bytes);
        fn read(r: &mut Cursor<&[u8]>, n: usize, what: &str) -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf)
                .map_err(|_| Error::format("checkpoint", format!("truncated {what}")))?;
            Ok(buf)
        }
        let mut take = |n: usize, what: &str| read(&mut r, n, what);
        if take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic (expected SQ2C)".into()));
        }
        let u32_at = |b: Vec<u8>| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        let version = u32_at(take(4, "version")?);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hash = take(32, "config hash")?;
        let meta_len = u32_at(take(4, "metadata length")?) as usize;
        let metadata = String::from_utf8(take(meta_len, "metadata")?).map_err(|_| bad("metadata is not UTF-8".into()))?;
        if hash != config_hash(&metadata) {
            return Err(bad("config hash does not match metadata".into()));
        }
        let count = u32_at(take(4, "tensor count")?) as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nb = read(&mut r, 2, "name length")?;
            let n = u16::from_le_bytes([nb[0], nb[1]]) as usize;
            let name = String::from_utf8(read(&mut r, n, "name")?).map_err(|_| bad("tensor name is not UTF-8".into()))?;
            let t = Tensor::read_from(&mut r)?;
            tensors.push((name, t));
        }
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Value of a metadata key.
    pub fn meta(&self, key: &str) -> Option<String> {
        KvMap::parse("checkpoint metadata", &self.metadata)
            .ok()?
            .take_raw(key)
    }
}

impl<T: Scalar> Translator<T> {
    /// Checkpoint with the model config followed by `extra` metadata lines.
    pub fn to_checkpoint(&self, extra: &str) -> Checkpoint {
        let mut metadata = self.config.to_kv();
        metadata.push_str(extra);
        let tensors = [&self.f, &self.a, &self.d]
            .into_iter()
            .flat_map(|p| p.iter().map(|(n, t)| (n.to_string(), t.cast::<f32>())))
            .collect();
        Checkpoint { metadata, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut kv = KvMap::parse("checkpoint metadata", &ckpt.metadata)?;
        let config = ModelConfig::take_from(&mut kv, &ModelConfig::desk())?;
        let mut model = Self::new(config, 0)?;
        let split = |prefixes: &[&str]| -> Vec<(String, Tensor<T>)> {
            ckpt.tensors
                .iter()
                .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect()
        };
        let load = |p: &mut ParamSet<T>, prefixes: &[&str]| p.load(&split(prefixes));
        load(&mut model.f, &["enc.", "dec."])?;
        load(&mut model.a, &["att."])?;
        load(&mut model.d, &["disc."])?;
        let known = model.f.len() + model.a.len() + model.d.len();
        if known != ckpt.tensors.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} tensors present, model has {known}", ckpt.tensors.len()),
            ));
        }
        Ok(model)
    }
}
