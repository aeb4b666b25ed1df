//! Little-endian checkpoint container.
//!
//! ```text
//! "GCAM" | version u32 | count u32
//! per entry: name_len u32 | name (UTF-8) | dtype u8 | shape 4×u32 | payload
//! crc32 u32 over every preceding byte
//! ```
//! dtype 0 is an `f32` tensor; dtype 1 is an opaque byte blob with shape
//! `[len, 1, 1, 1]` (configs and counters).

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{MattingModel, ModelConfig};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"GCAM";
pub const VERSION: u32 = 1;
pub const MODEL_CONFIG_KEY: &str = "meta/model_config";
pub const PARAM_PREFIX: &str = "param/";

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Tensor<f32>),
    Bytes(Vec<u8>),
}

/// Named entries in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Payload)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

impl Checkpoint {
    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.entries.push((name.into(), Payload::F32(t)));
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, b: Vec<u8>) {
        self.entries.push((name.into(), Payload::Bytes(b)));
    }

    pub fn get(&self, name: &str) -> Option<&Payload> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        match self.get(name) {
            Some(Payload::F32(t)) => Ok(t),
            _ => Err(Error::Format(format!("checkpoint has no tensor {name}"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name) {
            Some(Payload::Bytes(b)) => Ok(b),
            _ => Err(Error::Format(format!("checkpoint has no blob {name}"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        std::str::from_utf8(self.bytes(name)?).map_err(|_| Error::Format(format!("{name} is not UTF-8")))
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        let b = self.bytes(name)?;
        Ok(u64::from_le_bytes(b.try_into().map_err(|_| Error::Format(format!("{name} is not a u64")))?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, p) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (tag, dims) = match p {
                Payload::F32(t) => (0u8, t.shape().0),
                Payload::Bytes(b) => (1u8, [b.len(), 1, 1, 1]),
            };
            out.push(tag);
            for d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match p {
                Payload::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Payload::Bytes(b) => out.extend_from_slice(b),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 16 {
            return Err(Error::Format("checkpoint too short".into()));
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::default();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
            let shape = Shape(dims);
            match tag {
                0 => {
                    let raw = r.take(shape.numel() * 4)?;
                    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
                    ck.push_tensor(name, Tensor::from_vec(shape, data)?);
                }
                1 => ck.push_bytes(name, r.take(dims[0])?.to_vec()),
                t => return Err(Error::Format(format!("unknown dtype tag {t} for {name}"))),
            }
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after last entry".into()));
        }
        Ok(ck)
    }

    /// Writes to a sibling temporary file first, so a crash never leaves a
    /// half-written checkpoint under `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Config plus every parameter and state tensor of `model`.
pub fn model_checkpoint(model: &MattingModel<f32>) -> Result<Checkpoint> {
    let mut ck = Checkpoint::default();
    let cfg = toml::to_string(model.cfg()).map_err(|e| Error::Config(e.to_string()))?;
    ck.push_bytes(MODEL_CONFIG_KEY, cfg.into_bytes());
    for (_, e) in model.store.iter() {
        ck.push_tensor(format!("{PARAM_PREFIX}{}", e.name), e.value.clone());
    }
    Ok(ck)
}

/// Rebuilds a model from [`model_checkpoint`] output. Every tensor of the
/// architecture must be present.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<MattingModel<f32>> {
    let cfg: ModelConfig = toml::from_str(ck.text(MODEL_CONFIG_KEY)?).map_err(|e| Error::Format(format!("model config: {e}")))?;
    let mut model = MattingModel::new(cfg, 0)?;
    let names: Vec<String> = model.store.iter().map(|(_, e)| e.name.clone()).collect();
    for name in names {
        let t = ck.tensor(&format!("{PARAM_PREFIX}{name}"))?;
        model.store.assign(&name, t.clone())?;
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<MattingModel<f32>> {
    model_from_checkpoint(&Checkpoint::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let mut ck = Checkpoint::default();
        ck.push_tensor("a", Tensor::from_fn(Shape::new(1, 2, 3, 4), |[_, c, y, x]| (c * 12 + y * 4 + x) as f32 * 0.5));
        ck.push_bytes("meta/step", 7u64.to_le_bytes().to_vec());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.u64("meta/step").unwrap(), 7);
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    }
}
