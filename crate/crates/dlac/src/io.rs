//! Binary tensor files and atomic output.
//!
//! `TNSR`: magic `TNSR`, version 1, dtype byte (0 fp32, 1 fp16sim), rank
//! byte, `rank` little-endian u32 dims, then little-endian f32 values.
//!
//! `TERN`: magic `TERN`, version 1, rank byte, `rank` little-endian u32
//! dims, then the packed 2-bit codes.

use std::io::Write;
use std::path::Path;

use dlac_core::ternary::packed_len;
use dlac_core::{DType, Tensor, TernaryTensor};

use crate::error::{Error, Result};

pub const TNSR_MAGIC: &[u8; 4] = b"TNSR";
pub const TERN_MAGIC: &[u8; 4] = b"TERN";
const VERSION: u8 = 1;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(TNSR_MAGIC);
    out.push(VERSION);
    out.push(match t.dtype() {
        DType::F32 => 0,
        DType::F16Sim => 1,
    });
    push_dims(&mut out, t.shape());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_ternary(t: &TernaryTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.shape().len() + t.codes().len());
    out.extend_from_slice(TERN_MAGIC);
    out.push(VERSION);
    push_dims(&mut out, t.shape());
    out.extend_from_slice(t.codes());
    out
}

fn push_dims(out: &mut Vec<u8>, shape: &[usize]) {
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

/// Byte cursor that reports truncation against `path`.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, format!("truncated {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4, "magic")? != magic {
            return Err(Error::format(
                self.path,
                format!("not a {} file", String::from_utf8_lossy(magic)),
            ));
        }
        let v = self.take(1, "version")?[0];
        if v != VERSION {
            return Err(Error::format(self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let rank = self.take(1, "rank")?[0] as usize;
        if !(1..=4).contains(&rank) {
            return Err(Error::format(self.path, format!("rank {rank} outside 1..=4")));
        }
        (0..rank)
            .map(|_| {
                let b = self.take(4, "dims")?;
                Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            })
            .collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn element_count(path: &Path, shape: &[usize]) -> Result<usize> {
    shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::format(path, "element count overflows"))
}

/// Parses a TNSR image; `path` is only used in error messages.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut r = Reader { bytes, pos: 0, path };
    r.header(TNSR_MAGIC)?;
    let dtype = r.take(1, "dtype")?[0];
    let shape = r.dims()?;
    let n = element_count(path, &shape)?;
    let raw = r.take(
        n.checked_mul(4)
            .ok_or_else(|| Error::format(path, "payload too large"))?,
        "payload",
    )?;
    r.finish()?;
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let t = match dtype {
        0 => Tensor::new(&shape, data),
        1 => Tensor::new_f16sim(&shape, data),
        d => return Err(Error::format(path, format!("unknown dtype byte {d}"))),
    };
    t.map_err(|source| Error::CoreAt {
        path: path.to_path_buf(),
        source,
    })
}

pub fn decode_ternary(bytes: &[u8], path: &Path) -> Result<TernaryTensor> {
    let mut r = Reader { bytes, pos: 0, path };
    r.header(TERN_MAGIC)?;
    let shape = r.dims()?;
    let n = element_count(path, &shape)?;
    let codes = r.take(packed_len(n), "codes")?.to_vec();
    r.finish()?;
    TernaryTensor::from_codes(&shape, codes).map_err(|source| Error::CoreAt {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&read_bytes(path)?, path)
}

pub fn load_ternary(path: &Path) -> Result<TernaryTensor> {
    decode_ternary(&read_bytes(path)?, path)
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor(t))
}

pub fn save_ternary(path: &Path, t: &TernaryTensor) -> Result<()> {
    write_atomic(path, &encode_ternary(t))
}
