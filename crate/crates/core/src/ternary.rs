//! 2-bit packed ternary tensors.
//!
//! Element `e` lives in bits `2*(e % 4) ..= 2*(e % 4) + 1` of byte `e / 4`.
//! Codes: `0b00` = 0, `0b01` = +1, `0b10` = -1; `0b11` is reserved.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{check_shape, DType, Tensor};

const CODE_ZERO: u8 = 0b00;
const CODE_POS: u8 = 0b01;
const CODE_NEG: u8 = 0b10;
const CODE_RESERVED: u8 = 0b11;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TernaryTensor {
    shape: Vec<usize>,
    len: usize,
    codes: Vec<u8>,
}

#[inline]
fn encode(t: i8) -> u8 {
    match t {
        0 => CODE_ZERO,
        1 => CODE_POS,
        _ => CODE_NEG,
    }
}

#[inline]
fn decode(c: u8) -> i8 {
    match c {
        CODE_ZERO => 0,
        CODE_POS => 1,
        _ => -1,
    }
}

pub fn packed_len(n: usize) -> usize {
    n.div_ceil(4)
}

impl TernaryTensor {
    /// Packs trits in {-1, 0, +1}.
    pub fn from_trits(shape: &[usize], trits: &[i8]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != trits.len() {
            return Err(Error::Shape {
                shape: shape.to_vec(),
                reason: "trit count does not match shape",
            });
        }
        let mut codes = vec![0u8; packed_len(n)];
        for (e, &t) in trits.iter().enumerate() {
            if !(-1..=1).contains(&t) {
                return Err(Error::NotTernary {
                    index: e,
                    value: t as f32,
                });
            }
            codes[e / 4] |= encode(t) << (2 * (e % 4));
        }
        Ok(TernaryTensor {
            shape: shape.to_vec(),
            len: n,
            codes,
        })
    }

    /// Wraps already-packed bytes, rejecting reserved codes and dirty padding.
    pub fn from_codes(shape: &[usize], codes: Vec<u8>) -> Result<Self> {
        let n = check_shape(shape)?;
        if codes.len() != packed_len(n) {
            return Err(Error::Shape {
                shape: shape.to_vec(),
                reason: "packed byte count does not match shape",
            });
        }
        for (byte, &b) in codes.iter().enumerate() {
            let used = (n - 4 * byte).min(4);
            for slot in 0..4 {
                let c = (b >> (2 * slot)) & 0b11;
                if slot < used {
                    if c == CODE_RESERVED {
                        return Err(Error::CorruptCode { byte });
                    }
                } else if c != 0 {
                    return Err(Error::CorruptPadding { byte });
                }
            }
        }
        Ok(TernaryTensor {
            shape: shape.to_vec(),
            len: n,
            codes,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(TernaryTensor {
            shape: shape.to_vec(),
            len: n,
            codes: vec![0; packed_len(n)],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// Trit at flat index `e`.
    #[inline]
    pub fn get(&self, e: usize) -> i8 {
        decode((self.codes[e / 4] >> (2 * (e % 4))) & 0b11)
    }

    pub fn trits(&self) -> impl Iterator<Item = i8> + '_ {
        (0..self.len).map(move |e| self.get(e))
    }

    pub fn count_nonzero(&self) -> usize {
        // Each nonzero code has exactly one bit set within its slot.
        self.codes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.len {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn neg(&self) -> TernaryTensor {
        // Swapping the two bits of every slot maps 01 <-> 10 and keeps 00.
        let codes = self
            .codes
            .iter()
            .map(|&b| ((b & 0x55) << 1) | ((b & 0xaa) >> 1))
            .collect();
        TernaryTensor {
            shape: self.shape.clone(),
            len: self.len,
            codes,
        }
    }

    /// Transpose of a rank-2 ternary tensor.
    pub fn transpose(&self) -> Result<TernaryTensor> {
        let [r, c] = self.shape[..] else {
            return Err(Error::Shape {
                shape: self.shape.clone(),
                reason: "expected a rank-2 ternary tensor",
            });
        };
        let mut codes = vec![0u8; self.codes.len()];
        for i in 0..r {
            for j in 0..c {
                let src = i * c + j;
                let dst = j * r + i;
                let code = (self.codes[src / 4] >> (2 * (src % 4))) & 0b11;
                codes[dst / 4] |= code << (2 * (dst % 4));
            }
        }
        Ok(TernaryTensor {
            shape: vec![c, r],
            len: self.len,
            codes,
        })
    }

    /// Dense `F32` view with values in {-1.0, 0.0, +1.0}.
    pub fn to_dense(&self) -> Tensor {
        let data = self.trits().map(|t| t as f32).collect();
        Tensor::new(&self.shape, data).expect("shape already validated")
    }
}

/// Packs a tensor whose elements are exactly -1.0, 0.0 or +1.0.
pub fn pack_ternary(values: &Tensor) -> Result<TernaryTensor> {
    let mut trits = Vec::with_capacity(values.len());
    for (index, &v) in values.data().iter().enumerate() {
        let t = if v == 0.0 {
            0
        } else if v == 1.0 {
            1
        } else if v == -1.0 {
            -1
        } else {
            return Err(Error::NotTernary { index, value: v });
        };
        trits.push(t);
    }
    TernaryTensor::from_trits(values.shape(), &trits)
}

/// Inverse of [`pack_ternary`]. Re-validates codes so that tensors built from
/// raw bytes by other means still report corruption by byte offset.
pub fn unpack_ternary(t: &TernaryTensor) -> Result<Tensor> {
    for (byte, &b) in t.codes.iter().enumerate() {
        let used = (t.len - 4 * byte).min(4);
        if (0..used).any(|slot| (b >> (2 * slot)) & 0b11 == CODE_RESERVED) {
            return Err(Error::CorruptCode { byte });
        }
    }
    Ok(t.to_dense())
}

/// `a [M x K]` times ternary `w [K x N]` using only adds, subtracts and skips.
///
/// The result is bitwise equal to `matmul(a, w.to_dense())` for finite `a`:
/// skipped zero terms cannot change a sum that starts at `+0.0`, and a
/// product by ±1 is exact.
pub fn ternary_matmul(a: &Tensor, w: &TernaryTensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = match w.shape[..] {
        [r, c] => (r, c),
        _ => {
            return Err(Error::Shape {
                shape: w.shape.clone(),
                reason: "expected a rank-2 ternary tensor",
            })
        }
    };
    if k != k2 {
        return Err(Error::dim("ternary_matmul", a.shape(), w.shape()));
    }
    let dt = a.dtype();
    let ad = a.data();
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let mut acc = 0.0f32;
            for (p, &av) in arow.iter().enumerate() {
                acc = match w.get(p * n + j) {
                    1 => dt.round(acc + av),
                    -1 => dt.round(acc - av),
                    _ => continue,
                };
            }
            out[i * n + j] = acc;
        }
    }
    let out = Tensor::new(&[m, n], out)?;
    Ok(if dt == DType::F16Sim {
        out.with_dtype(DType::F16Sim)
    } else {
        out
    })
}
