//! Network description, convolution lowering and the traced forward pass.

mod conv;
mod forward;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::ternary::TernaryTensor;

pub use conv::{col2im, conv2d_direct, conv_out_dim, im2col, im2col_batch, Conv2dParams};
pub use forward::{forward, softmax_rows, ForwardPass, MmRecord, OpTrace, Operand, PwKind, PwRecord, TraceRecord};

/// Weight precision of a parameterized layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    #[default]
    Full,
    Ternary,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        conv: Conv2dParams,
        precision: Precision,
    },
    FullyConnected {
        in_dim: usize,
        out_dim: usize,
        precision: Precision,
    },
    /// Thresholded ReLU: `x` where `x > tau`, else 0.
    ReluT {
        tau: f32,
    },
    /// Batch norm folded into a per-channel affine map.
    BatchNormInf {
        scale: Vec<f32>,
        shift: Vec<f32>,
    },
    /// Softmax with cross-entropy loss; its input is the logits.
    SoftmaxXent {
        classes: usize,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::ReluT { .. } => "relu_t",
            LayerSpec::BatchNormInf { .. } => "batch_norm_inf",
            LayerSpec::SoftmaxXent { .. } => "softmax_xent",
        }
    }

    pub fn precision(&self) -> Option<Precision> {
        match self {
            LayerSpec::Conv2d { precision, .. } | LayerSpec::FullyConnected { precision, .. } => Some(*precision),
            _ => None,
        }
    }

    pub fn set_precision(&mut self, p: Precision) {
        if let LayerSpec::Conv2d { precision, .. } | LayerSpec::FullyConnected { precision, .. } = self {
            *precision = p;
        }
    }

    pub fn is_parameterized(&self) -> bool {
        self.precision().is_some()
    }

    /// Shape of the weight tensor: `[out_ch, in_ch, kh, kw]` for convolutions,
    /// `[in_dim, out_dim]` for fully-connected layers.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self {
            LayerSpec::Conv2d { conv, .. } => Some(vec![conv.out_ch, conv.in_ch, conv.kh, conv.kw]),
            LayerSpec::FullyConnected { in_dim, out_dim, .. } => Some(vec![*in_dim, *out_dim]),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> core::result::Result<Vec<usize>, String> {
        let numel: usize = input.iter().product();
        match self {
            LayerSpec::Conv2d { conv, .. } => {
                let [c, h, w] = input[..] else {
                    return Err(format!("conv2d expects a [C, H, W] input, got {input:?}"));
                };
                if c != conv.in_ch {
                    return Err(format!("in_ch {} does not match input channels {c}", conv.in_ch));
                }
                let ho = conv_out_dim(h, conv.kh, conv.stride, conv.pad)
                    .ok_or_else(|| format!("kernel height {} exceeds padded input {h}", conv.kh))?;
                let wo = conv_out_dim(w, conv.kw, conv.stride, conv.pad)
                    .ok_or_else(|| format!("kernel width {} exceeds padded input {w}", conv.kw))?;
                Ok(vec![conv.out_ch, ho, wo])
            }
            LayerSpec::FullyConnected { in_dim, out_dim, .. } => {
                if numel != *in_dim {
                    return Err(format!("in_dim {in_dim} does not match input size {numel}"));
                }
                Ok(vec![*out_dim])
            }
            LayerSpec::ReluT { .. } => Ok(input.to_vec()),
            LayerSpec::BatchNormInf { scale, .. } => {
                let ch = input[0];
                if scale.len() != ch {
                    return Err(format!(
                        "{} channels of batch-norm parameters for {ch} input channels",
                        scale.len()
                    ));
                }
                Ok(input.to_vec())
            }
            LayerSpec::SoftmaxXent { classes } => {
                if numel != *classes {
                    return Err(format!("classes {classes} does not match input size {numel}"));
                }
                Ok(vec![*classes])
            }
        }
    }

    fn validate_params(&self) -> core::result::Result<(), (&'static str, String)> {
        let pos = |name: &'static str, v: usize| {
            if v == 0 {
                Err((name, String::from("must be positive")))
            } else {
                Ok(())
            }
        };
        match self {
            LayerSpec::Conv2d { conv, .. } => {
                pos("in_ch", conv.in_ch)?;
                pos("out_ch", conv.out_ch)?;
                pos("kh", conv.kh)?;
                pos("kw", conv.kw)?;
                pos("stride", conv.stride)
            }
            LayerSpec::FullyConnected { in_dim, out_dim, .. } => {
                pos("in_dim", *in_dim)?;
                pos("out_dim", *out_dim)
            }
            LayerSpec::ReluT { tau } => {
                if tau.is_finite() && *tau >= 0.0 {
                    Ok(())
                } else {
                    Err(("tau", String::from("must be a non-negative finite value")))
                }
            }
            LayerSpec::BatchNormInf { scale, shift } => {
                if scale.is_empty() {
                    return Err(("scale", String::from("must not be empty")));
                }
                if scale.len() != shift.len() {
                    return Err((
                        "shift",
                        format!("length {} differs from scale length {}", shift.len(), scale.len()),
                    ));
                }
                Ok(())
            }
            LayerSpec::SoftmaxXent { classes } => pos("classes", *classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    /// Per-sample input shape (no batch dimension).
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Checks parameters and shape composition; returns the per-sample output
    /// shape of every layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::invalid("input_shape", "extents must be positive"));
        }
        if self.layers.is_empty() {
            return Err(Error::invalid("layers", "network has no layers"));
        }
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            layer
                .validate_params()
                .map_err(|(field, reason)| Error::invalid(format!("layers[{i}].{field}"), reason))?;
            if matches!(layer, LayerSpec::SoftmaxXent { .. }) && i + 1 != self.layers.len() {
                return Err(Error::layer(i, "softmax_xent must be the last layer"));
            }
            shape = layer.output_shape(&shape).map_err(|r| Error::layer(i, r))?;
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.validate()?.pop().expect("non-empty"))
    }

    /// Indices of Conv2d / FullyConnected layers in order.
    pub fn parameterized_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].is_parameterized())
            .collect()
    }

    pub fn ends_with_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::SoftmaxXent { .. }))
    }
}

/// Weights of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Full(Tensor),
    Ternary(TernaryTensor),
}

impl LayerWeights {
    pub fn shape(&self) -> &[usize] {
        match self {
            LayerWeights::Full(t) => t.shape(),
            LayerWeights::Ternary(t) => t.shape(),
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            LayerWeights::Full(_) => Precision::Full,
            LayerWeights::Ternary(_) => Precision::Ternary,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        match self {
            LayerWeights::Full(t) => t.clone(),
            LayerWeights::Ternary(t) => t.to_dense(),
        }
    }
}

/// Per-layer weights, indexed by layer position (None for parameterless layers).
pub type WeightSet = Vec<Option<LayerWeights>>;

/// Checks that every parameterized layer has weights of the right shape and
/// precision.
pub fn check_weights(net: &NetworkSpec, weights: &[Option<LayerWeights>]) -> Result<()> {
    if weights.len() != net.layers.len() {
        return Err(Error::invalid(
            "weights",
            format!("{} entries for {} layers", weights.len(), net.layers.len()),
        ));
    }
    for (i, (layer, w)) in net.layers.iter().zip(weights).enumerate() {
        let Some(expect) = layer.weight_shape() else {
            continue;
        };
        let w = w.as_ref().ok_or(Error::MissingWeights(i))?;
        if w.shape() != &expect[..] {
            return Err(Error::layer(
                i,
                format!("weight shape {:?}, expected {expect:?}", w.shape()),
            ));
        }
        if Some(w.precision()) != layer.precision() {
            return Err(Error::layer(
                i,
                format!(
                    "{:?} weights on a {:?} layer",
                    w.precision(),
                    layer.precision().unwrap()
                ),
            ));
        }
    }
    Ok(())
}

/// Batch-norm inference parameters folded into `scale * x + shift`.
///
/// `scale = gamma / sqrt(var + eps)`, `shift = beta - gamma * mean / sqrt(var + eps)`.
pub fn fold_batchnorm(gamma: &[f32], beta: &[f32], mean: &[f32], var: &[f32], eps: f32) -> Result<LayerSpec> {
    let n = gamma.len();
    if beta.len() != n || mean.len() != n || var.len() != n {
        return Err(Error::invalid("batchnorm", "parameter lengths differ"));
    }
    if !(eps >= 0.0) {
        return Err(Error::invalid("eps", "must be non-negative"));
    }
    let mut scale = Vec::with_capacity(n);
    let mut shift = Vec::with_capacity(n);
    for c in 0..n {
        if !(var[c] >= 0.0) {
            return Err(Error::invalid(format!("var[{c}]"), "negative variance"));
        }
        let denom = libm::sqrt(var[c] as f64 + eps as f64);
        if denom == 0.0 {
            return Err(Error::invalid(format!("var[{c}]"), "zero variance with eps = 0"));
        }
        let g = gamma[c] as f64 / denom;
        scale.push(g as f32);
        shift.push((beta[c] as f64 - g * mean[c] as f64) as f32);
    }
    Ok(LayerSpec::BatchNormInf { scale, shift })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn conv(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> LayerSpec {
        LayerSpec::Conv2d {
            conv: Conv2dParams {
                in_ch,
                out_ch,
                kh: k,
                kw: k,
                stride,
                pad,
            },
            precision: Precision::Full,
        }
    }

    #[test]
    fn shape_chain() {
        let net = NetworkSpec {
            name: "t".into(),
            input_shape: vec![1, 8, 8],
            layers: vec![
                conv(1, 4, 3, 1, 1),
                LayerSpec::ReluT { tau: 0.0 },
                conv(4, 8, 3, 2, 1),
                LayerSpec::FullyConnected {
                    in_dim: 8 * 4 * 4,
                    out_dim: 3,
                    precision: Precision::Ternary,
                },
                LayerSpec::SoftmaxXent { classes: 3 },
            ],
        };
        let shapes = net.validate().unwrap();
        assert_eq!(shapes[0], vec![4, 8, 8]);
        assert_eq!(shapes[2], vec![8, 4, 4]);
        assert_eq!(shapes[4], vec![3]);
        assert_eq!(net.parameterized_layers(), vec![0, 2, 3]);

        let mut bad = net.clone();
        bad.layers[3] = LayerSpec::FullyConnected {
            in_dim: 100,
            out_dim: 3,
            precision: Precision::Full,
        };
        assert!(matches!(bad.validate(), Err(Error::Layer { layer: 3, .. })));

        let mut bad = net.clone();
        bad.layers[2] = conv(4, 8, 3, 0, 1);
        match bad.validate() {
            Err(Error::Invalid { field, .. }) => assert_eq!(field, "layers[2].stride"),
            other => panic!("{other:?}"),
        }

        let mut bad = net;
        bad.layers.swap(3, 4);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fold_examples() {
        let LayerSpec::BatchNormInf { scale, shift } = fold_batchnorm(&[1.0], &[0.0], &[0.0], &[1.0], 0.0).unwrap()
        else {
            unreachable!()
        };
        assert_eq!((scale[0], shift[0]), (1.0, 0.0));

        let LayerSpec::BatchNormInf { scale, shift } = fold_batchnorm(&[2.0], &[1.0], &[3.0], &[4.0], 0.0).unwrap()
        else {
            unreachable!()
        };
        assert_eq!((scale[0], shift[0]), (1.0, -2.0));

        assert!(fold_batchnorm(&[1.0], &[0.0], &[0.0], &[-1.0], 1e-5).is_err());
    }

    #[test]
    fn fold_matches_unfolded_formula() {
        let mut s = 12345u32;
        let mut r = || {
            s = s.wrapping_mul(1_103_515_245).wrapping_add(12345);
            ((s >> 8) as f32 / (1 << 24) as f32) * 4.0 - 2.0
        };
        for _ in 0..200 {
            let (g, b, m, v, x) = (r(), r(), r(), r().abs() + 0.01, r() * 3.0);
            let eps = 1e-5;
            let LayerSpec::BatchNormInf { scale, shift } = fold_batchnorm(&[g], &[b], &[m], &[v], eps).unwrap() else {
                unreachable!()
            };
            let folded = scale[0] * x + shift[0];
            let direct = g as f64 * (x as f64 - m as f64) / (v as f64 + eps as f64).sqrt() + b as f64;
            let scale_mag = (scale[0] as f64 * x as f64).abs() + (shift[0] as f64).abs();
            assert!(
                (folded as f64 - direct).abs() <= 1e-6 * (1.0 + scale_mag),
                "{folded} vs {direct}"
            );
        }
    }
}
