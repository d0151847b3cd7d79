//! WTEN: a minimal named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "WTEN"  u16 version=1  u32 count
//! repeat count:
//!     u16 name_len  name (UTF-8)  u8 dtype (0 = f32)  u8 ndim  ndim × u32 dims
//!     product(dims) × f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WTEN";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

/// Serializes named tensors; values are stored as `f32`.
pub fn write<T: Scalar, W: Write>(mut w: W, tensors: &[(&str, &Tensor<T>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let nb = name.as_bytes();
        let name_len = u16::try_from(nb.len())
            .map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&[DTYPE_F32, t.ndim() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&(v.to_f64c() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn to_bytes<T: Scalar>(tensors: &[(&str, &Tensor<T>)]) -> Vec<u8> {
    let mut v = Vec::new();
    write(&mut v, tensors).expect("writing to a Vec cannot fail");
    v
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, tensors: &[(&str, &Tensor<T>)]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Wten {
                offset: self.pos as u64,
                detail: format!("truncated while reading {what} ({n} bytes needed, {} left)", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn err(&self, at: usize, detail: impl Into<String>) -> Error {
        Error::Wten {
            offset: at as u64,
            detail: detail.into(),
        }
    }
}

/// Parses a WTEN byte buffer into `(name, tensor)` pairs in file order.
pub fn from_bytes(buf: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut c = Cursor { buf, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(c.err(0, format!("bad magic {magic:?}, expected \"WTEN\"")));
    }
    let at = c.pos;
    let version = c.u16("version")?;
    if version != VERSION {
        return Err(c.err(at, format!("unsupported version {version}")));
    }
    let count = c.u32("tensor count")?;
    let mut out = Vec::with_capacity(count.min(4096) as usize);
    for i in 0..count {
        let name_len = c.u16("name length")? as usize;
        let at = c.pos;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| c.err(at, format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let at = c.pos;
        let dtype = c.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(c.err(at, format!("tensor `{name}`: unknown dtype code {dtype}")));
        }
        let at = c.pos;
        let ndim = c.u8("ndim")? as usize;
        if ndim == 0 {
            return Err(c.err(at, format!("tensor `{name}`: ndim must be positive")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let at = c.pos;
            let d = c.u32("dimension")? as usize;
            if d == 0 {
                return Err(c.err(at, format!("tensor `{name}`: zero dimension")));
            }
            dims.push(d);
        }
        let at = c.pos;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= (buf.len() - c.pos) / 4)
            .ok_or_else(|| c.err(at, format!("tensor `{name}`: dims {dims:?} exceed remaining payload")))?;
        let raw = c.take(n * 4, "payload")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_parts(dims, data)));
    }
    if c.pos != buf.len() {
        return Err(c.err(c.pos, format!("{} trailing bytes after last tensor", buf.len() - c.pos)));
    }
    Ok(out)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::from_f64(&[2], &[1.0, -2.0]).unwrap();
        let b = to_bytes(&[("ab", &t)]);
        let mut want = b"WTEN".to_vec();
        want.extend([1, 0, 1, 0, 0, 0, 2, 0, b'a', b'b', 0, 1, 2, 0, 0, 0]);
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let e = from_bytes(b"WTEX\x01\x00\x00\x00\x00\x00").unwrap_err();
        assert!(matches!(e, Error::Wten { offset: 0, .. }), "{e}");
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let t = Tensor::<f32>::ones(&[3, 2]);
        let b = to_bytes(&[("w", &t)]);
        let e = from_bytes(&b[..b.len() - 3]).unwrap_err();
        match e {
            Error::Wten { offset, .. } => assert_eq!(offset, 4 + 2 + 4 + 2 + 1 + 2 + 8),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn absurd_dims_are_rejected_without_allocating() {
        let mut b = b"WTEN".to_vec();
        b.extend([1, 0, 1, 0, 0, 0, 1, 0, b'x', 0, 2]);
        b.extend(u32::MAX.to_le_bytes());
        b.extend(u32::MAX.to_le_bytes());
        assert!(matches!(from_bytes(&b), Err(Error::Wten { .. })));
    }
}
