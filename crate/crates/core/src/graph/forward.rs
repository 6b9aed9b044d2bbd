use alloc::vec;
use alloc::vec::Vec;

use super::{check_weights, LayerSpec, LayerWeights, NetworkSpec};
use crate::error::{Error, Result};
use crate::graph::conv::im2col_batch;
use crate::quantize::relu_threshold;
use crate::tensor::{matmul, DType, Tensor};
use crate::ternary::ternary_matmul;

/// Pointwise operation classes of the accelerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PwKind {
    AddSub,
    MulAdd,
    TernarySelect,
}

impl PwKind {
    pub fn name(self) -> &'static str {
        match self {
            PwKind::AddSub => "add_sub",
            PwKind::MulAdd => "mul_add",
            PwKind::TernarySelect => "ternary_select",
        }
    }
}

/// Where an mmOp operand comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    /// The input of layer `i` (the network input for `i == 0`), flattened to
    /// `[batch, features]`.
    Activation(usize),
    /// The im2col matrix built for convolution layer `i`.
    Im2col(usize),
    /// The weights of layer `i`, as a matrix.
    Weights(usize),
}

/// One matrix multiply `lhs [m x k] * rhs [k x n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MmRecord {
    pub layer: usize,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub lhs: Operand,
    pub rhs: Operand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PwRecord {
    pub layer: usize,
    pub kind: PwKind,
    pub n_elems: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceRecord {
    Mm(MmRecord),
    Pw(PwRecord),
}

impl TraceRecord {
    pub fn layer(&self) -> usize {
        match self {
            TraceRecord::Mm(r) => r.layer,
            TraceRecord::Pw(r) => r.layer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OpTrace {
    pub records: Vec<TraceRecord>,
}

impl OpTrace {
    /// `sum(2*M*N*K) + sum(n_elems)`, independent of operand values.
    pub fn dense_flops(&self) -> u64 {
        self.records
            .iter()
            .map(|r| match r {
                TraceRecord::Mm(m) => 2 * (m.m * m.n * m.k) as u64,
                TraceRecord::Pw(p) => p.n_elems as u64,
            })
            .sum()
    }

    pub fn mm_records(&self) -> impl Iterator<Item = &MmRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Mm(m) => Some(m),
            _ => None,
        })
    }
}

/// Everything a forward pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub input: Tensor,
    /// Output of each layer, `[batch, ...]`. The softmax layer's output is the
    /// class probabilities.
    pub activations: Vec<Tensor>,
    /// Pre-softmax scores, `[batch, classes]`.
    pub logits: Tensor,
    pub trace: OpTrace,
    /// im2col matrices of convolution layers.
    pub cols: Vec<Option<Tensor>>,
}

impl ForwardPass {
    pub fn batch(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn layer_input(&self, i: usize) -> &Tensor {
        if i == 0 {
            &self.input
        } else {
            &self.activations[i - 1]
        }
    }

    /// Both operands of an mmOp as dense rank-2 matrices.
    pub fn mm_operands(&self, weights: &[Option<LayerWeights>], rec: &MmRecord) -> Result<(Tensor, Tensor)> {
        let fetch = |op: Operand, rows: usize, cols: usize| -> Result<Tensor> {
            match op {
                Operand::Activation(i) => self.layer_input(i).clone().reshape(&[rows, cols]),
                Operand::Im2col(i) => self.cols[i].clone().ok_or(Error::Missing("im2col matrix")),
                Operand::Weights(i) => weights
                    .get(i)
                    .and_then(|w| w.as_ref())
                    .ok_or(Error::MissingWeights(i))?
                    .to_dense()
                    .reshape(&[rows, cols]),
            }
        };
        Ok((fetch(rec.lhs, rec.m, rec.k)?, fetch(rec.rhs, rec.k, rec.n)?))
    }
}

fn flatten_batch(t: &Tensor) -> Result<Tensor> {
    let b = t.shape()[0];
    let rest = t.len().checked_div(b).unwrap_or(0);
    t.clone().reshape(&[b, rest])
}

/// Numerically stable row-wise softmax of a `[rows, cols]` matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (r, c) = logits.dims2()?;
    let mut out = vec![0.0f32; r * c];
    for i in 0..r {
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
            *o = libm::expf(x - max);
            sum += *o;
        }
        for o in &mut out[i * c..(i + 1) * c] {
            *o /= sum;
        }
    }
    Ok(Tensor::new(&[r, c], out)?.with_dtype(logits.dtype()))
}

fn cast_like(w: &Tensor, dtype: DType) -> Tensor {
    match dtype {
        DType::F32 => w.to_f32(),
        DType::F16Sim => w.to_f16sim(),
    }
}

/// Runs the network on a `[batch, ...input_shape]` tensor.
///
/// An `F16Sim` input switches the whole pass to binary16 arithmetic; full
/// precision weights are rounded to binary16 on the fly.
pub fn forward(net: &NetworkSpec, weights: &[Option<LayerWeights>], x: &Tensor) -> Result<ForwardPass> {
    net.validate()?;
    check_weights(net, weights)?;
    if x.rank() < 2 || x.shape()[1..] != net.input_shape[..] {
        return Err(Error::dim("forward input", x.shape(), &net.input_shape));
    }
    let batch = x.shape()[0];
    let dtype = x.dtype();
    let mut activations: Vec<Tensor> = Vec::with_capacity(net.layers.len());
    let mut cols = vec![None; net.layers.len()];
    let mut trace = OpTrace::default();
    let mut logits = None;

    for (i, layer) in net.layers.iter().enumerate() {
        let input = if i == 0 { x } else { &activations[i - 1] };
        let out = match layer {
            LayerSpec::Conv2d { conv, .. } => {
                let c = im2col_batch(input, conv).map_err(|e| Error::layer(i, alloc::format!("{e}")))?;
                let (patch, ncols) = c.dims2()?;
                let f = conv.out_ch;
                let y = match weights[i].as_ref().expect("checked") {
                    LayerWeights::Full(w) => {
                        let wf = cast_like(w, dtype).reshape(&[f, patch])?;
                        matmul(&wf, &c)?
                    }
                    LayerWeights::Ternary(w) => {
                        let wt = w.clone().reshape(&[f, patch])?.transpose()?;
                        ternary_matmul(&c.transpose()?, &wt)?.transpose()?
                    }
                };
                trace.records.push(TraceRecord::Mm(MmRecord {
                    layer: i,
                    m: f,
                    n: ncols,
                    k: patch,
                    lhs: Operand::Weights(i),
                    rhs: Operand::Im2col(i),
                }));
                cols[i] = Some(c);
                let [_, _, h, w] = input.shape()[..] else {
                    unreachable!("im2col_batch checked the rank")
                };
                let (ho, wo) = conv.out_hw(h, w)?;
                let hw = ho * wo;
                let mut data = vec![0.0f32; batch * f * hw];
                let yd = y.data();
                for b in 0..batch {
                    for ch in 0..f {
                        data[(b * f + ch) * hw..(b * f + ch + 1) * hw]
                            .copy_from_slice(&yd[ch * ncols + b * hw..ch * ncols + (b + 1) * hw]);
                    }
                }
                Tensor::new(&[batch, f, ho, wo], data)?.with_dtype(dtype)
            }
            LayerSpec::FullyConnected { in_dim, out_dim, .. } => {
                let a = flatten_batch(input)?;
                let y = match weights[i].as_ref().expect("checked") {
                    LayerWeights::Full(w) => matmul(&a, &cast_like(w, dtype))?,
                    LayerWeights::Ternary(w) => ternary_matmul(&a, w)?,
                };
                trace.records.push(TraceRecord::Mm(MmRecord {
                    layer: i,
                    m: batch,
                    n: *out_dim,
                    k: *in_dim,
                    lhs: Operand::Activation(i),
                    rhs: Operand::Weights(i),
                }));
                y
            }
            LayerSpec::ReluT { tau } => {
                trace.records.push(TraceRecord::Pw(PwRecord {
                    layer: i,
                    kind: PwKind::TernarySelect,
                    n_elems: input.len(),
                }));
                relu_threshold(input, *tau)
            }
            LayerSpec::BatchNormInf { scale, shift } => {
                let ch = scale.len();
                let inner = input.len() / (batch * ch).max(1);
                let mut y = input.clone();
                for (e, v) in y.data_mut().iter_mut().enumerate() {
                    let c = (e / inner) % ch;
                    *v = dtype.round(dtype.round(scale[c] * *v) + shift[c]);
                }
                trace.records.push(TraceRecord::Pw(PwRecord {
                    layer: i,
                    kind: PwKind::MulAdd,
                    n_elems: input.len(),
                }));
                y
            }
            LayerSpec::SoftmaxXent { .. } => {
                let l = flatten_batch(input)?;
                let p = softmax_rows(&l)?;
                trace.records.push(TraceRecord::Pw(PwRecord {
                    layer: i,
                    kind: PwKind::MulAdd,
                    n_elems: input.len(),
                }));
                logits = Some(l);
                p
            }
        };
        activations.push(out);
    }

    let logits = match logits {
        Some(l) => l,
        None => flatten_batch(activations.last().expect("non-empty"))?,
    };
    Ok(ForwardPass {
        input: x.clone(),
        activations,
        logits,
        trace,
        cols,
    })
}
