//! Little-endian tensor checkpoints.
//!
//! ```text
//! magic    8 bytes  "WBPRUNE1"
//! count    u32
//! repeated count times:
//!   name_len u16, name (UTF-8)
//!   rank     u8, dims u64 x rank
//!   payload  product(dims) IEEE-754 values of the element type
//! ```
//!
//! The element type is not recorded; a checkpoint must be read back with the
//! scalar type it was written with.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"WBPRUNE1";

pub fn encode<T: Scalar>(tensors: &[(String, Tensor<T>)]) -> Result<Vec<u8>> {
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| Error::Checkpoint(format!("rank too large for `{name}`")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            ))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes tensors in file order.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint(format!("non-UTF-8 name at byte {}", r.pos)))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?)
                .map_err(|_| Error::Checkpoint(format!("dimension overflow in `{name}`")))?;
            shape.push(d);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint(format!("size overflow in `{name}`")))?;
        let bytes = numel
            .checked_mul(T::BYTES)
            .ok_or_else(|| Error::Checkpoint(format!("size overflow in `{name}`")))?;
        let payload = r.take(bytes)?;
        let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor<T>>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new([2], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&[("w".to_string(), t)]).unwrap();
        assert_eq!(&bytes[..8], b"WBPRUNE1");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..14], &1u16.to_le_bytes());
        assert_eq!(bytes[14], b'w');
        assert_eq!(bytes[15], 1);
        assert_eq!(&bytes[16..24], &2u64.to_le_bytes());
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 32);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode::<f32>(b"NOTMAGIC\0\0\0\0").is_err());
        let t = Tensor::<f64>::ones([3]);
        let bytes = encode(&[("x".into(), t)]).unwrap();
        assert!(decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in prop::collection::vec(any::<u32>().prop_map(f32::from_bits), 0..48),
            name in "[a-z.0-9]{1,20}",
        ) {
            let n = values.len();
            let t = Tensor::new([n], values).unwrap();
            let bytes = encode(&[(name.clone(), t.clone())]).unwrap();
            let back = decode::<f32>(&bytes).unwrap();
            prop_assert_eq!(&back[0].0, &name);
            let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back[0].1.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
