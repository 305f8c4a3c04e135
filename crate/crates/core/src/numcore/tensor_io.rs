//! Binary tensor records.
//!
//! Layout of one record, all integers little-endian:
//!
//! | bytes        | content                         |
//! |--------------|---------------------------------|
//! | 4            | magic `PRSM`                    |
//! | 2            | format version (`u16`, = 1)     |
//! | 2            | dtype code (`u16`, f64 = 1)     |
//! | 8            | rank (`u64`)                    |
//! | 8 × rank     | dims (`u64` each)               |
//! | 8 × Π dims   | payload, `f64` row-major        |
//!
//! A file holds one or more records back to back.

use std::fs;
use std::path::Path;

use super::Matrix;
use crate::error::{PrismError, Result};

pub const MAGIC: &[u8; 4] = b"PRSM";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F64: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(PrismError::dim(format!(
                "dims {dims:?} hold {n} values but payload has {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn into_matrix(self) -> Result<Matrix> {
        match self.dims.as_slice() {
            [r, c] => Matrix::new(*r, *c, self.data),
            other => Err(PrismError::dim(format!(
                "expected a rank-2 tensor, got dims {other:?}"
            ))),
        }
    }
}

impl From<&Matrix> for Tensor {
    fn from(m: &Matrix) -> Self {
        Self {
            dims: vec![m.rows(), m.cols()],
            data: m.data().to_vec(),
        }
    }
}

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    out.extend_from_slice(&(t.dims.len() as u64).to_le_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in &t.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    for t in tensors {
        encode_tensor(t, &mut out);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                PrismError::data(format!("truncated tensor record at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decode every record in `bytes`.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let start = cur.pos;
        if cur.take(4)? != MAGIC {
            return Err(PrismError::data(format!("bad magic at byte {start}")));
        }
        let version = cur.u16()?;
        if version != FORMAT_VERSION {
            return Err(PrismError::data(format!(
                "unsupported tensor format version {version}"
            )));
        }
        let dtype = cur.u16()?;
        if dtype != DTYPE_F64 {
            return Err(PrismError::data(format!("unsupported dtype code {dtype}")));
        }
        let rank = cur.u64()?;
        if rank > 8 {
            return Err(PrismError::data(format!("implausible tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(
                usize::try_from(cur.u64()?)
                    .map_err(|_| PrismError::data("dimension overflows usize"))?,
            );
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| PrismError::data("tensor size overflows"))?;
        let payload = cur.take(
            n.checked_mul(8)
                .ok_or_else(|| PrismError::data("tensor size overflows"))?,
        )?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Tensor { dims, data });
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    fs::write(path, encode_tensors(tensors)).map_err(|e| PrismError::io(path, e))
}

pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = fs::read(path).map_err(|e| PrismError::io(path, e))?;
    decode_tensors(&bytes).map_err(|e| PrismError::io(path, e))
}

pub fn save_matrix(path: &Path, m: &Matrix) -> Result<()> {
    save_tensors(path, &[Tensor::from(m)])
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    let mut ts = load_tensors(path)?;
    if ts.len() != 1 {
        return Err(PrismError::io(
            path,
            format!("expected one tensor, found {}", ts.len()),
        ));
    }
    ts.pop()
        .unwrap()
        .into_matrix()
        .map_err(|e| PrismError::io(path, e))
}
