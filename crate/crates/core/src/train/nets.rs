//! Small reference networks for the synthetic tasks.
//!
//! Every parameterized layer is followed by a fixed batch-norm scale of
//! `sqrt(gain / fan_in)` (gain 2 before a ReLU, 1 before the softmax). The
//! weights are then drawn at unit variance, so unscaled ternary values and
//! their full-precision masters produce activations of the same magnitude.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::graph::{Conv2dParams, LayerSpec, NetworkSpec, Precision};
use crate::quantize::DEFAULT_RELU_TAU;

fn rescale(channels: usize, fan_in: usize, gain: f32) -> LayerSpec {
    LayerSpec::BatchNormInf {
        scale: vec![libm::sqrtf(gain / fan_in as f32); channels],
        shift: vec![0.0; channels],
    }
}

fn relu() -> LayerSpec {
    LayerSpec::ReluT { tau: DEFAULT_RELU_TAU }
}

/// `FC -> scale -> ReLU -> FC -> scale -> softmax`; the first layer is full
/// precision, the second ternary.
pub fn mlp(in_dim: usize, hidden: usize, classes: usize) -> NetworkSpec {
    NetworkSpec {
        name: String::from("mlp"),
        input_shape: vec![in_dim],
        layers: vec![
            LayerSpec::FullyConnected {
                in_dim,
                out_dim: hidden,
                precision: Precision::Full,
            },
            rescale(hidden, in_dim, 2.0),
            relu(),
            LayerSpec::FullyConnected {
                in_dim: hidden,
                out_dim: classes,
                precision: Precision::Ternary,
            },
            rescale(classes, hidden, 1.0),
            LayerSpec::SoftmaxXent { classes },
        ],
    }
}

/// Two-layer classifier for 2-D blob points.
pub fn blob_mlp() -> NetworkSpec {
    NetworkSpec {
        name: String::from("blob-mlp"),
        ..mlp(2, 16, 2)
    }
}

/// Two 3x3 convolutions (8 and 16 channels, the second with stride 2) and a
/// fully-connected classifier on 1x8x8 images. The first convolution is full
/// precision; the rest are ternary.
pub fn conv8x8_net(classes: usize) -> NetworkSpec {
    let conv = |in_ch, out_ch, stride, precision| LayerSpec::Conv2d {
        conv: Conv2dParams {
            in_ch,
            out_ch,
            kh: 3,
            kw: 3,
            stride,
            pad: 1,
        },
        precision,
    };
    let layers: Vec<LayerSpec> = vec![
        conv(1, 8, 1, Precision::Full),
        rescale(8, 9, 2.0),
        relu(),
        conv(8, 16, 2, Precision::Ternary),
        rescale(16, 72, 2.0),
        relu(),
        LayerSpec::FullyConnected {
            in_dim: 16 * 4 * 4,
            out_dim: classes,
            precision: Precision::Ternary,
        },
        rescale(classes, 256, 1.0),
        LayerSpec::SoftmaxXent { classes },
    ];
    NetworkSpec {
        name: String::from("conv8x8"),
        input_shape: vec![1, 8, 8],
        layers,
    }
}
