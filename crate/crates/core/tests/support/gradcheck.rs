#![allow(dead_code)]

//! Gradient checking: analytic gradients against central finite differences
//! of an independent f64 forward pass, on random small networks.

use dlac_core::graph::{forward, Conv2dParams, LayerSpec, LayerWeights, NetworkSpec, Precision};
use dlac_core::train::{backward, BackwardOptions};
use dlac_core::{Tensor, TernaryTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Family = (&'static str, u64, fn(&mut ChaCha8Rng) -> Instance);

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

/// Loss and the ReLU on/off pattern of a plain f64 evaluation.
pub fn reference(
    net: &NetworkSpec,
    weights: &[Option<Vec<f64>>],
    x: &[f64],
    batch: usize,
    labels: &[usize],
    lambda: f64,
) -> (f64, Vec<bool>) {
    let mut shape = net.input_shape.clone();
    let mut a = x.to_vec();
    let mut mask = Vec::new();
    let mut l1 = 0.0;
    let mut loss = 0.0;
    for (i, layer) in net.layers.iter().enumerate() {
        match layer {
            LayerSpec::FullyConnected { in_dim, out_dim, .. } => {
                let w = weights[i].as_ref().unwrap();
                let mut out = vec![0.0; batch * out_dim];
                for b in 0..batch {
                    for o in 0..*out_dim {
                        out[b * out_dim + o] = (0..*in_dim).map(|k| a[b * in_dim + k] * w[k * out_dim + o]).sum();
                    }
                }
                a = out;
                shape = vec![*out_dim];
            }
            LayerSpec::Conv2d { conv, .. } => {
                let w = weights[i].as_ref().unwrap();
                let (c, h, wd) = (shape[0], shape[1] as isize, shape[2] as isize);
                let ho = (h as usize + 2 * conv.pad - conv.kh) / conv.stride + 1;
                let wo = (wd as usize + 2 * conv.pad - conv.kw) / conv.stride + 1;
                let f = conv.out_ch;
                let mut out = vec![0.0; batch * f * ho * wo];
                for b in 0..batch {
                    for fi in 0..f {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let mut s = 0.0;
                                for ci in 0..c {
                                    for ky in 0..conv.kh {
                                        for kx in 0..conv.kw {
                                            let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                            let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                            if iy < 0 || ix < 0 || iy >= h || ix >= wd {
                                                continue;
                                            }
                                            let xv = a
                                                [((b * c + ci) * h as usize + iy as usize) * wd as usize + ix as usize];
                                            s += xv * w[((fi * c + ci) * conv.kh + ky) * conv.kw + kx];
                                        }
                                    }
                                }
                                out[((b * f + fi) * ho + oy) * wo + ox] = s;
                            }
                        }
                    }
                }
                a = out;
                shape = vec![f, ho, wo];
            }
            LayerSpec::ReluT { tau } => {
                for v in &mut a {
                    let on = *v > *tau as f64;
                    mask.push(on);
                    if !on {
                        *v = 0.0;
                    }
                    l1 += v.abs();
                }
            }
            LayerSpec::BatchNormInf { scale, shift } => {
                let ch = shape[0];
                let inner: usize = shape[1..].iter().product();
                for (e, v) in a.iter_mut().enumerate() {
                    let c = (e / inner) % ch;
                    *v = *v * scale[c] as f64 + shift[c] as f64;
                }
            }
            LayerSpec::SoftmaxXent { classes } => {
                for (b, &l) in labels.iter().enumerate() {
                    let row = &a[b * classes..(b + 1) * classes];
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                    loss += lse - row[l];
                }
            }
        }
    }
    (loss / batch as f64 + lambda / batch as f64 * l1, mask)
}

/// Largest absolute difference over the largest magnitude of either side.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(1e-8, f64::max);
    diff / scale
}

/// Central differences for every entry of `values`; entries whose
/// perturbation flips a ReLU are reported as `None`.
pub fn numeric_grad(values: &[f64], mut eval: impl FnMut(&[f64]) -> (f64, Vec<bool>)) -> Vec<Option<f64>> {
    let (_, base) = eval(values);
    let mut v = values.to_vec();
    (0..values.len())
        .map(|k| {
            v[k] = values[k] + H;
            let (lp, mp) = eval(&v);
            v[k] = values[k] - H;
            let (lm, mm) = eval(&v);
            v[k] = values[k];
            (mp == base && mm == base).then_some((lp - lm) / (2.0 * H))
        })
        .collect()
}

pub struct Instance {
    pub net: NetworkSpec,
    pub weights: Vec<Option<LayerWeights>>,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub lambda: f32,
}

/// Compares every weight gradient and the input gradient; returns the worst
/// relative error and the number of finite-difference entries checked.
pub fn check(inst: &Instance) -> (f64, usize) {
    let batch = inst.x.shape()[0];
    let opts = BackwardOptions {
        lambda_l1: inst.lambda,
        ..BackwardOptions::default()
    };
    let pass = forward(&inst.net, &inst.weights, &inst.x).unwrap();
    let grads = backward(&inst.net, &inst.weights, &pass, &inst.labels, &opts).unwrap();
    let dense: Vec<Option<Vec<f64>>> = inst
        .weights
        .iter()
        .map(|w| {
            w.as_ref()
                .map(|w| w.to_dense().data().iter().map(|&v| v as f64).collect())
        })
        .collect();
    let x: Vec<f64> = inst.x.data().iter().map(|&v| v as f64).collect();
    let lambda = inst.lambda as f64;

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut compare = |analytic: &[f32], numeric: Vec<Option<f64>>| {
        let (a, n): (Vec<f64>, Vec<f64>) = analytic
            .iter()
            .zip(numeric)
            .filter_map(|(&a, n)| n.map(|n| (a as f64, n)))
            .unzip();
        checked += n.len();
        if !n.is_empty() {
            worst = worst.max(max_rel_err(&a, &n));
        }
    };

    for i in inst.net.parameterized_layers() {
        let base = dense[i].clone().unwrap();
        let numeric = numeric_grad(&base, |v| {
            let mut w = dense.clone();
            w[i] = Some(v.to_vec());
            reference(&inst.net, &w, &x, batch, &inst.labels, lambda)
        });
        compare(grads.params[i].as_ref().unwrap().data(), numeric);
    }
    let numeric = numeric_grad(&x, |v| reference(&inst.net, &dense, v, batch, &inst.labels, lambda));
    compare(grads.input.data(), numeric);
    (worst, checked)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f32 {
    rng.sample(rand_distr::StandardNormal)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| normal(rng)).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, shape: &[usize], precision: Precision) -> LayerWeights {
    match precision {
        Precision::Full => {
            // 1/sqrt(fan_in) keeps the softmax away from saturation, where f32
            // probabilities round to exactly 0 or 1.
            let fan_in: usize = if shape.len() == 4 {
                shape[1..].iter().product()
            } else {
                shape[0]
            };
            let s = 1.0 / (fan_in as f32).sqrt();
            LayerWeights::Full(random_tensor(rng, shape).map(|v| v * s))
        }
        Precision::Ternary => {
            let n: usize = shape.iter().product();
            let trits: Vec<i8> = (0..n).map(|_| rng.random_range(-1..=1)).collect();
            LayerWeights::Ternary(TernaryTensor::from_trits(shape, &trits).unwrap())
        }
    }
}

pub fn random_bn(rng: &mut ChaCha8Rng, ch: usize) -> LayerSpec {
    LayerSpec::BatchNormInf {
        scale: (0..ch).map(|_| rng.random_range(0.3..1.5)).collect(),
        shift: (0..ch).map(|_| 0.3 * normal(rng)).collect(),
    }
}

pub fn relu(rng: &mut ChaCha8Rng) -> LayerSpec {
    LayerSpec::ReluT {
        tau: if rng.random() { 0.0 } else { 0.01 },
    }
}

pub fn finish(rng: &mut ChaCha8Rng, net: NetworkSpec, batch: usize, lambda: f32) -> Instance {
    let classes = match net.layers.last() {
        Some(LayerSpec::SoftmaxXent { classes }) => *classes,
        _ => unreachable!(),
    };
    let weights = net
        .layers
        .iter()
        .map(|l| {
            l.weight_shape()
                .map(|s| random_weights(rng, &s, l.precision().unwrap()))
        })
        .collect();
    let mut xs = vec![batch];
    xs.extend(&net.input_shape);
    Instance {
        x: random_tensor(rng, &xs),
        labels: (0..batch).map(|_| rng.random_range(0..classes)).collect(),
        net,
        weights,
        lambda,
    }
}

/// `FC -> softmax` on a flat input.
pub fn fc_instance(rng: &mut ChaCha8Rng, precision: Precision) -> Instance {
    let (in_dim, classes) = (rng.random_range(1..6), rng.random_range(2..5));
    let net = NetworkSpec {
        name: "fc".into(),
        input_shape: vec![in_dim],
        layers: vec![
            LayerSpec::FullyConnected {
                in_dim,
                out_dim: classes,
                precision,
            },
            LayerSpec::SoftmaxXent { classes },
        ],
    };
    let batch = rng.random_range(1..4);
    finish(rng, net, batch, 0.0)
}

/// `FC -> BN -> ReLU -> FC -> softmax` with an l1 penalty.
pub fn mlp_instance(rng: &mut ChaCha8Rng, precision: Precision) -> Instance {
    let (in_dim, hidden, classes) = (rng.random_range(1..5), rng.random_range(2..7), rng.random_range(2..4));
    let net = NetworkSpec {
        name: "mlp".into(),
        input_shape: vec![in_dim],
        layers: vec![
            LayerSpec::FullyConnected {
                in_dim,
                out_dim: hidden,
                precision: Precision::Full,
            },
            random_bn(rng, hidden),
            relu(rng),
            LayerSpec::FullyConnected {
                in_dim: hidden,
                out_dim: classes,
                precision,
            },
            LayerSpec::SoftmaxXent { classes },
        ],
    };
    let batch = rng.random_range(1..4);
    finish(rng, net, batch, 0.05)
}

/// `conv -> BN -> ReLU -> FC -> softmax`.
pub fn conv_instance(rng: &mut ChaCha8Rng, precision: Precision) -> Instance {
    let conv = Conv2dParams {
        in_ch: rng.random_range(1..4),
        out_ch: rng.random_range(1..4),
        kh: rng.random_range(1..4),
        kw: rng.random_range(1..4),
        stride: rng.random_range(1..3),
        pad: rng.random_range(0..2),
    };
    let (h, w) = (rng.random_range(conv.kh..6), rng.random_range(conv.kw..6));
    let (ho, wo) = conv.out_hw(h, w).unwrap();
    let classes = rng.random_range(2..4);
    let net = NetworkSpec {
        name: "conv".into(),
        input_shape: vec![conv.in_ch, h, w],
        layers: vec![
            LayerSpec::Conv2d { conv, precision },
            random_bn(rng, conv.out_ch),
            relu(rng),
            LayerSpec::FullyConnected {
                in_dim: conv.out_ch * ho * wo,
                out_dim: classes,
                precision: Precision::Full,
            },
            LayerSpec::SoftmaxXent { classes },
        ],
    };
    let batch = rng.random_range(1..3);
    finish(rng, net, batch, 0.02)
}

/// Checks ten instances from `make`; returns the worst relative error and
/// the number of finite-difference entries compared.
pub fn run(name: &str, seed: u64, make: impl Fn(&mut ChaCha8Rng) -> Instance) -> Result<(f64, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut total) = (0.0f64, 0);
    for k in 0..10 {
        let inst = make(&mut rng);
        let (err, checked) = check(&inst);
        if err.is_nan() || err >= TOL {
            return Err(format!("{name} instance {k}: relative error {err:e}"));
        }
        worst = worst.max(err);
        total += checked;
    }
    if total == 0 {
        return Err(format!("{name}: nothing checked"));
    }
    Ok((worst, total))
}

/// Every layer family: fully-connected, an MLP with batch norm, ReLU and the
/// l1 term, and convolution, each at full and ternary precision.
pub fn all_families() -> Result<(f64, usize), String> {
    let families: [Family; 6] = [
        ("fc", 1, |r| fc_instance(r, Precision::Full)),
        ("fc ternary", 2, |r| fc_instance(r, Precision::Ternary)),
        ("mlp", 3, |r| mlp_instance(r, Precision::Full)),
        ("mlp ternary", 4, |r| mlp_instance(r, Precision::Ternary)),
        ("conv", 5, |r| conv_instance(r, Precision::Full)),
        ("conv ternary", 6, |r| conv_instance(r, Precision::Ternary)),
    ];
    let (mut worst, mut total) = (0.0f64, 0);
    for (name, seed, make) in families {
        let (w, n) = run(name, seed, make)?;
        worst = worst.max(w);
        total += n;
    }
    Ok((worst, total))
}
