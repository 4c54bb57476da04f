//! Binary tensor (`DTEN1`) and factor model (`DFAC1`) files.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! DTEN1: "DTEN1" | N: u32 | I_1..I_N: u64 | ∏I_n × f64 (mode 1 fastest)
//! DFAC1: "DFAC1" | N: u32 | F: u64 | N × (rows: u64 | cols: u64 | rows·cols × f64 row-major)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{CpdError, Result};
use crate::model::FactorModel;
use crate::tensor::DenseTensor;

pub const TENSOR_MAGIC: &[u8; 5] = b"DTEN1";
pub const MODEL_MAGIC: &[u8; 5] = b"DFAC1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CpdError::format(
                self.pos as u64,
                format!(
                    "truncated {what}: expected {n} bytes, {} available",
                    self.buf.len() - self.pos
                ),
            )),
        }
    }

    fn magic(&mut self, magic: &[u8; 5]) -> Result<()> {
        let got = self.take(5, "magic")?;
        if got != magic {
            return Err(CpdError::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let at = self.pos as u64;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| CpdError::format(at, format!("{what} {v} does not fit in memory")))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let at = self.pos;
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| CpdError::format(at as u64, format!("{what} length overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CpdError::format(
                self.pos as u64,
                format!("{} trailing bytes after payload", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn product(dims: &[usize], at: u64) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CpdError::format(at, format!("shape {dims:?} overflows")))
}

pub fn encode_tensor(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 8 * t.order() + 8 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.order() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(buf: &[u8]) -> Result<DenseTensor> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(TENSOR_MAGIC)?;
    let n = r.u32("mode count")? as usize;
    if n == 0 {
        return Err(CpdError::format(5, "tensor has zero modes"));
    }
    let shape_at = r.pos as u64;
    let shape = (0..n).map(|_| r.usize("shape entry")).collect::<Result<Vec<_>>>()?;
    if shape.contains(&0) {
        return Err(CpdError::format(shape_at, format!("shape {shape:?} has an empty mode")));
    }
    let len = product(&shape, shape_at)?;
    let values = r.f64s(len, "tensor values")?;
    r.finish()?;
    DenseTensor::new(shape, values)
}

pub fn encode_model(m: &FactorModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(m.order() as u32).to_le_bytes());
    out.extend_from_slice(&(m.rank() as u64).to_le_bytes());
    for a in m.factors() {
        out.extend_from_slice(&(a.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(a.ncols() as u64).to_le_bytes());
        for v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(buf: &[u8]) -> Result<FactorModel> {
    let mut r = Reader { buf, pos: 0 };
    r.magic(MODEL_MAGIC)?;
    let n = r.u32("factor count")? as usize;
    if n == 0 {
        return Err(CpdError::format(5, "model has zero factors"));
    }
    let rank = r.usize("rank")?;
    if rank == 0 {
        return Err(CpdError::format(9, "rank must be at least 1"));
    }
    let mut factors = Vec::with_capacity(n);
    for k in 0..n {
        let at = r.pos as u64;
        let rows = r.usize("factor rows")?;
        let cols = r.usize("factor columns")?;
        if cols != rank {
            return Err(CpdError::format(
                at + 8,
                format!("factor {} has {cols} columns, header rank is {rank}", k + 1),
            ));
        }
        if rows == 0 {
            return Err(CpdError::format(at, format!("factor {} has no rows", k + 1)));
        }
        let len = product(&[rows, cols], at)?;
        let values = r.f64s(len, "factor values")?;
        factors.push(Array2::from_shape_vec((rows, cols), values).expect("length checked"));
    }
    r.finish()?;
    FactorModel::new(factors)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn save_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensor(t))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn save_model(path: impl AsRef<Path>, m: &FactorModel) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(m))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FactorModel> {
    decode_model(&fs::read(path)?)
}
