//! Dense row-major tensors and density statistics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::half::{is_f16_exact, round_f16};

pub const MAX_RANK: usize = 4;

/// Storage tag. `F16Sim` values are `f32`s already rounded to binary16, and
/// arithmetic on them rounds every intermediate result to binary16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DType {
    #[default]
    F32,
    F16Sim,
}

impl DType {
    #[inline]
    pub fn round(self, x: f32) -> f32 {
        match self {
            DType::F32 => x,
            DType::F16Sim => round_f16(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f32>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::Shape {
            shape: shape.to_vec(),
            reason: "rank must be 1..=4",
        });
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::Shape {
            shape: shape.to_vec(),
            reason: "element count overflows",
        })
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::Shape {
                shape: shape.to_vec(),
                reason: "data length does not match shape",
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype: DType::F32,
            data,
        })
    }

    /// Builds an `F16Sim` tensor; every value must already be binary16-exact.
    pub fn new_f16sim(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let mut t = Tensor::new(shape, data)?;
        if let Some(i) = t.data.iter().position(|&x| !is_f16_exact(x)) {
            return Err(Error::invalid(
                alloc::format!("data[{i}]"),
                "value is not representable in binary16",
            ));
        }
        t.dtype = DType::F16Sim;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype: DType::F32,
            data: vec![0.0; n],
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let n = check_shape(shape)?;
        Tensor::new(shape, (0..n).map(&mut f).collect())
    }

    /// Rank-2 helper used heavily by tests and examples.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(&[rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Rounds every element to binary16 and tags the tensor `F16Sim`.
    pub fn to_f16sim(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            dtype: DType::F16Sim,
            data: self.data.iter().map(|&x| round_f16(x)).collect(),
        }
    }

    /// Retags as `F32` without touching the values.
    pub fn to_f32(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            dtype: DType::F32,
            data: self.data.clone(),
        }
    }

    pub(crate) fn with_dtype(mut self, dtype: DType) -> Tensor {
        if dtype == DType::F16Sim {
            for x in &mut self.data {
                *x = round_f16(*x);
            }
        }
        self.dtype = dtype;
        self
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape {
                shape: self.shape.clone(),
                reason: "expected a rank-2 tensor",
            }),
        }
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            dtype: self.dtype,
            data: out,
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data: self.data.iter().map(|&x| self.dtype.round(f(x))).collect(),
        }
    }

    pub fn count_nonzero(&self, eps: f32) -> usize {
        self.data.iter().filter(|x| x.abs() > eps).count()
    }
}

/// Row-major matrix product.
///
/// For `F16Sim` operands every product and every running-sum addition is
/// rounded to binary16. Accumulation runs over `k` in ascending order from
/// `+0.0`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    if a.dtype != b.dtype {
        return Err(Error::DType("matmul"));
    }
    let dt = a.dtype;
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (p, &av) in arow.iter().enumerate() {
                let prod = dt.round(av * b.data[p * n + j]);
                acc = dt.round(acc + prod);
            }
            *o = acc;
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        dtype: dt,
        data: out,
    })
}

/// Element or operand-pair counts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DensityStats {
    pub total: u64,
    pub nonzero: u64,
    pub density: f64,
}

impl DensityStats {
    pub fn new(total: u64, nonzero: u64) -> Self {
        debug_assert!(nonzero <= total);
        let density = if total == 0 { 0.0 } else { nonzero as f64 / total as f64 };
        DensityStats {
            total,
            nonzero,
            density,
        }
    }

    /// Pools two counts (totals and nonzeros add).
    pub fn merge(self, other: DensityStats) -> DensityStats {
        DensityStats::new(self.total + other.total, self.nonzero + other.nonzero)
    }
}

/// Fraction of elements with `|x| > eps`.
pub fn density(t: &Tensor, eps: f32) -> DensityStats {
    DensityStats::new(t.len() as u64, t.count_nonzero(eps) as u64)
}
