//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "VXSTCKPT"
//! version   u32      1
//! cfg_len   u32      then cfg_len bytes of UTF-8 configuration text
//! count     u32      number of tensors
//! per tensor:
//!   name_len u16, name bytes (UTF-8)
//!   dtype    u8   0 = f32, 1 = f64
//!   kind     u8   0 = trainable, 1 = buffer
//!   ndim     u8,  then ndim × u64 dims
//!   data     numel × (4 | 8) bytes
//! ```
//!
//! Tensors are stored in name order.

use std::fs;
use std::path::Path;

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Entry, ParamStore};

pub const MAGIC: &[u8; 8] = b"VXSTCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn of<T: Real>() -> Self {
        if std::mem::size_of::<T>() == 4 {
            Dtype::F32
        } else {
            Dtype::F64
        }
    }
}

pub fn encode_checkpoint<T: Real>(store: &ParamStore<T>, config: &str, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, e) in store.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(match dtype {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        });
        out.push(if e.trainable { 0 } else { 1 });
        out.push(e.tensor.shape().len() as u8);
        for d in e.tensor.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in e.tensor.data() {
            match dtype {
                Dtype::F32 => out.extend_from_slice(&(v.f64() as f32).to_le_bytes()),
                Dtype::F64 => out.extend_from_slice(&v.f64().to_le_bytes()),
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Parses a checkpoint into a store of `T` and the configuration text.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<(ParamStore<T>, String)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let cfg_len = r.u32()? as usize;
    let config = r.string(cfg_len)?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.string(name_len)?;
        let width = match r.u8()? {
            0 => 4,
            1 => 8,
            d => return Err(Error::Format(format!("{name}: unknown dtype {d}"))),
        };
        let trainable = match r.u8()? {
            0 => true,
            1 => false,
            k => return Err(Error::Format(format!("{name}: unknown kind {k}"))),
        };
        let ndim = r.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .ok_or_else(|| Error::Format(format!("{name}: shape overflow")))?;
        let raw = r.take(
            numel
                .checked_mul(width)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        let data: Vec<T> = raw
            .chunks_exact(width)
            .map(|c| {
                T::of(if width == 4 {
                    f32::from_le_bytes(c.try_into().unwrap()) as f64
                } else {
                    f64::from_le_bytes(c.try_into().unwrap())
                })
            })
            .collect();
        store.insert_entry(
            name,
            Entry {
                tensor: Tensor::new(shape, data)?,
                trainable,
            },
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((store, config))
}

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    store: &ParamStore<T>,
    config: &str,
    dtype: Dtype,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(store, config, dtype)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(ParamStore<T>, String)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(
            "a.weight",
            Tensor::from_fn(&[2, 3], |i| i as f64 * 0.1 - 0.2),
        );
        s.insert_buffer("a.bn.running_var", Tensor::full(&[3], 1.5));
        s
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let s = store();
        let (back, cfg) =
            decode_checkpoint::<f64>(&encode_checkpoint(&s, "x = 1\n", Dtype::F64)).unwrap();
        assert_eq!(back, s);
        assert_eq!(cfg, "x = 1\n");
    }

    #[test]
    fn f32_round_trip_rounds() {
        let s = store();
        let (back, _) = decode_checkpoint::<f64>(&encode_checkpoint(&s, "", Dtype::F32)).unwrap();
        assert!(
            back.get("a.weight")
                .unwrap()
                .max_abs_diff(s.get("a.weight").unwrap())
                < 1e-7
        );
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = encode_checkpoint(&store(), "", Dtype::F64);
        assert!(matches!(
            decode_checkpoint::<f64>(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_checkpoint::<f64>(b"garbage!garbage!"),
            Err(Error::Format(_))
        ));
    }
}
