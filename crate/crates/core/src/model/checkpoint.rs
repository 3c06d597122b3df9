//! Binary checkpoint layout (all integers little endian):
//!
//! ```text
//! magic        8 bytes  "SOFTMVCK"
//! version      u32
//! scalar width u8       4 = f32, 8 = f64
//! vocab_size   u32
//! d_model      u32
//! layers       u32
//! heads        u32
//! ffn_dim      u32
//! max_seq_len  u32
//! head_tying   u8       0 = tied, 1 = untied
//! soft_slots   u32
//! prompt flag  u8
//! param count  u64
//! params       param count * scalar width, in layout declaration order
//! ```

use std::fs;
use std::path::Path;

use super::{HeadTying, ModelConfig, ModelState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SOFTMVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(state: &ModelState<T>) -> Vec<u8> {
    let c = &state.config;
    let mut out = Vec::with_capacity(64 + state.params.len() * T::BYTES);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    for v in [c.vocab_size, c.d_model, c.layers, c.heads, c.ffn_dim, c.max_seq_len] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match c.head_tying {
        HeadTying::TiedToEmbeddings => 0,
        HeadTying::Untied => 1,
    });
    out.extend_from_slice(&(c.soft_slots as u32).to_le_bytes());
    out.push(state.prompt_trainable as u8);
    out.extend_from_slice(&(state.params.len() as u64).to_le_bytes());
    for &p in &state.params {
        p.write_le(&mut out);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated checkpoint: needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ModelState<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let width = r.u8()? as usize;
    if width != T::BYTES {
        return Err(Error::Format(format!(
            "checkpoint stores {width}-byte scalars, requested {}-byte",
            T::BYTES
        )));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let head_tying = match r.u8()? {
        0 => HeadTying::TiedToEmbeddings,
        1 => HeadTying::Untied,
        other => return Err(Error::Format(format!("unknown head tying tag {other}"))),
    };
    let soft_slots = r.u32()? as usize;
    let prompt_trainable = r.u8()? != 0;
    let count = r.u64()? as usize;
    let config = ModelConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        layers: dims[2],
        heads: dims[3],
        ffn_dim: dims[4],
        max_seq_len: dims[5],
        head_tying,
        soft_slots,
    };
    let raw = r.take(count.checked_mul(T::BYTES).ok_or_else(|| Error::Format("parameter count overflow".into()))?)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let params = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
    let mut state = ModelState::from_params(&config, params).map_err(|e| Error::Format(e.to_string()))?;
    state.prompt_trainable = prompt_trainable;
    Ok(state)
}

pub fn save_checkpoint<T: Scalar>(state: &ModelState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelState<T>> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads and checks the stored config against `expected`, naming the first
/// differing field.
pub fn load_checkpoint_matching<T: Scalar>(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<ModelState<T>> {
    let state = load_checkpoint::<T>(path)?;
    let c = &state.config;
    let fields: [(&'static str, String, String); 8] = [
        ("vocab_size", expected.vocab_size.to_string(), c.vocab_size.to_string()),
        ("d_model", expected.d_model.to_string(), c.d_model.to_string()),
        ("layers", expected.layers.to_string(), c.layers.to_string()),
        ("heads", expected.heads.to_string(), c.heads.to_string()),
        ("ffn_dim", expected.ffn_dim.to_string(), c.ffn_dim.to_string()),
        ("max_seq_len", expected.max_seq_len.to_string(), c.max_seq_len.to_string()),
        ("head_tying", format!("{:?}", expected.head_tying), format!("{:?}", c.head_tying)),
        ("soft_slots", expected.soft_slots.to_string(), c.soft_slots.to_string()),
    ];
    for (field, want, got) in fields {
        if want != got {
            return Err(Error::ConfigMismatch {
                field,
                expected: want,
                found: got,
            });
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, tests::tiny_config};

    #[test]
    fn bytes_round_trip() {
        let m: ModelState<f64> = init_model(&tiny_config(), 9).unwrap();
        let back: ModelState<f64> = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_bad_magic_version_width_and_truncation() {
        let m: ModelState<f64> = init_model(&tiny_config(), 9).unwrap();
        let good = encode_checkpoint(&m);

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint::<f64>(&bad), Err(Error::Format(m)) if m.contains("magic")));

        let mut bad = good.clone();
        bad[8] = 99;
        assert!(matches!(decode_checkpoint::<f64>(&bad), Err(Error::Format(m)) if m.contains("version")));

        assert!(decode_checkpoint::<f32>(&good).is_err());
        assert!(matches!(
            decode_checkpoint::<f64>(&good[..good.len() - 3]),
            Err(Error::Format(m)) if m.contains("truncated")
        ));
    }

    #[test]
    fn mismatched_config_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m: ModelState<f64> = init_model(&tiny_config(), 9).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let other = ModelConfig {
            d_model: 16,
            ..tiny_config()
        };
        match load_checkpoint_matching::<f64>(&path, &other) {
            Err(Error::ConfigMismatch { field, .. }) => assert_eq!(field, "d_model"),
            other => panic!("expected mismatch, got {other:?}"),
        }
        assert!(load_checkpoint_matching::<f64>(&path, &tiny_config()).is_ok());
    }
}
