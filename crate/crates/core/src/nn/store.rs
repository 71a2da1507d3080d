//! Binary tensor files: `SNBT` magic, little-endian `u32` tensor count,
//! then per tensor a `u32` rank, `u64` dims and raw `f64` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SNBT";

pub fn encode_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_tensors(bytes: &[u8]) -> std::result::Result<Vec<Tensor>, String> {
    struct Cursor<'a>(&'a [u8]);
    impl Cursor<'_> {
        fn take<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
            if self.0.len() < N {
                return Err("truncated tensor file".into());
            }
            let (head, rest) = self.0.split_at(N);
            self.0 = rest;
            Ok(head.try_into().expect("length checked"))
        }
    }
    let mut c = Cursor(bytes);
    if &c.take::<4>()? != MAGIC {
        return Err("bad magic".into());
    }
    let count = u32::from_le_bytes(c.take()?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = u32::from_le_bytes(c.take()?) as usize;
        let shape = (0..rank)
            .map(|_| c.take().map(|b| u64::from_le_bytes(b) as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| c.take().map(f64::from_le_bytes))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        out.push(Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?);
    }
    if !c.0.is_empty() {
        return Err("trailing bytes".into());
    }
    Ok(out)
}

pub fn write_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    fs::write(path, encode_tensors(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes).map_err(|msg| Error::Decode {
        path: path.to_path_buf(),
        msg,
    })
}
