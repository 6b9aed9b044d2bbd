use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{col2im, ForwardPass, LayerSpec, LayerWeights, NetworkSpec};
use crate::quantize::{l1_activation_penalty, pair_density_dense};
use crate::tensor::{matmul, DensityStats, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardOptions {
    /// Weight of the l1 penalty on ReLU outputs, applied per sample (the
    /// penalty is averaged over the batch like the task loss).
    pub lambda_l1: f32,
    pub grad_update_filter: bool,
    /// Count operand pairs of the backward matrix multiplies.
    pub instrument: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions {
            lambda_l1: 0.0,
            grad_update_filter: false,
            instrument: false,
        }
    }
}

/// Operand-pair counts of one layer's two backward matrix multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BackwardDensity {
    /// Upstream gradient times transposed weights (gradient w.r.t. the input).
    pub data_grad: DensityStats,
    /// Transposed activations times upstream gradient (gradient w.r.t. weights).
    pub weight_grad: DensityStats,
}

impl BackwardDensity {
    pub fn combined(&self) -> DensityStats {
        self.data_grad.merge(self.weight_grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// d loss / d weights for each parameterized layer, shaped like the
    /// weight tensor. For ternary layers this is the gradient w.r.t. the
    /// quantized values, which the trainer passes straight through to the
    /// full-precision master.
    pub params: Vec<Option<Tensor>>,
    /// d loss / d network input.
    pub input: Tensor,
    pub loss_task: f32,
    pub loss_l1: f32,
    /// Set when the update filter found the whole batch correctly classified.
    pub skipped: bool,
    pub density: Option<Vec<Option<BackwardDensity>>>,
}

pub enum FilterOutcome {
    Skip,
    Apply(Tensor),
}

/// Index of the first maximum of each row.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let (r, c) = t.dims2().expect("rank-2 scores");
    (0..r)
        .map(|i| {
            let row = &t.data()[i * c..(i + 1) * c];
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Zeroes the error rows of correctly classified samples; signals a skip
/// when every sample is correct.
pub fn grad_update_filter(logits: &Tensor, labels: &[usize], upstream: &Tensor) -> FilterOutcome {
    let pred = argmax_rows(logits);
    let correct: Vec<bool> = pred.iter().zip(labels).map(|(p, l)| p == l).collect();
    if correct.iter().all(|&c| c) {
        return FilterOutcome::Skip;
    }
    let mut g = upstream.clone();
    let c = g.len() / labels.len().max(1);
    for (i, &ok) in correct.iter().enumerate() {
        if ok {
            g.data_mut()[i * c..(i + 1) * c].fill(0.0);
        }
    }
    FilterOutcome::Apply(g)
}

/// Mean cross-entropy of softmax probabilities against integer labels.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> f32 {
    let (b, c) = probs.dims2().expect("rank-2 probabilities");
    let mut sum = 0.0f64;
    for (i, &l) in labels.iter().enumerate() {
        let p = probs.data()[i * c + l];
        // `max` would turn NaN into the clamp value.
        let p = if p.is_nan() { p } else { p.max(f32::MIN_POSITIVE) };
        sum -= libm::log(p as f64);
    }
    (sum / b.max(1) as f64) as f32
}

fn relu_outputs<'a>(net: &NetworkSpec, pass: &'a ForwardPass) -> Vec<(usize, &'a Tensor)> {
    net.layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::ReluT { .. }))
        .map(|(i, _)| (i, &pass.activations[i]))
        .collect()
}

/// Reverse-mode gradients of `mean cross-entropy + l1 penalty`.
///
/// The network must end in a softmax layer and `pass` must come from
/// [`forward`](crate::graph::forward) on the same network and weights.
pub fn backward(
    net: &NetworkSpec,
    weights: &[Option<LayerWeights>],
    pass: &ForwardPass,
    labels: &[usize],
    opts: &BackwardOptions,
) -> Result<Gradients> {
    let n_layers = net.layers.len();
    if pass.activations.len() != n_layers {
        return Err(Error::Missing("forward activations for every layer"));
    }
    if !net.ends_with_softmax() {
        return Err(Error::invalid("layers", "training needs a final softmax_xent layer"));
    }
    let batch = pass.batch();
    if labels.len() != batch {
        return Err(Error::dim("backward labels", &[labels.len()], &[batch]));
    }
    let classes = pass.logits.shape()[1];
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(
            "labels",
            alloc::format!("label {l} >= classes {classes}"),
        ));
    }

    let probs = pass.activations[n_layers - 1].to_f32();
    let loss_task = cross_entropy(&probs, labels);
    let relus = relu_outputs(net, pass);
    let relu_acts: Vec<Tensor> = relus.iter().map(|(_, t)| t.to_f32()).collect();
    let (loss_l1, l1_grads) = l1_activation_penalty(&relu_acts, opts.lambda_l1 / batch as f32);
    if !loss_task.is_finite() || !loss_l1.is_finite() {
        return Err(Error::NonFiniteLoss);
    }

    // d loss / d logits = (p - onehot) / B
    let mut dlogits = probs.clone();
    for (i, &l) in labels.iter().enumerate() {
        dlogits.data_mut()[i * classes + l] -= 1.0;
    }
    for v in dlogits.data_mut() {
        *v /= batch as f32;
    }

    let zero_grads = || -> Vec<Option<Tensor>> {
        net.layers
            .iter()
            .map(|l| l.weight_shape().map(|s| Tensor::zeros(&s).expect("valid shape")))
            .collect()
    };

    if opts.grad_update_filter {
        match grad_update_filter(&pass.logits, labels, &dlogits) {
            FilterOutcome::Skip => {
                return Ok(Gradients {
                    params: zero_grads(),
                    input: Tensor::zeros(pass.input.shape())?,
                    loss_task,
                    loss_l1,
                    skipped: true,
                    density: None,
                })
            }
            FilterOutcome::Apply(g) => dlogits = g,
        }
    }

    let mut params: Vec<Option<Tensor>> = vec![None; n_layers];
    let mut density: Vec<Option<BackwardDensity>> = vec![None; n_layers];

    // Gradient w.r.t. the output of the current layer.
    let mut g = dlogits;
    for i in (0..n_layers).rev() {
        let input = pass.layer_input(i).to_f32();
        let layer = &net.layers[i];
        if let Some(pos) = relus.iter().position(|(j, _)| *j == i) {
            for (gv, lv) in g.data_mut().iter_mut().zip(l1_grads[pos].data()) {
                *gv += lv;
            }
        }
        g = match layer {
            LayerSpec::SoftmaxXent { .. } => {
                // The cross-entropy gradient was taken w.r.t. the logits, which
                // are this layer's input.
                g.reshape(input.shape())?
            }
            LayerSpec::ReluT { tau } => {
                let mut gi = g.reshape(input.shape())?;
                for (gv, &x) in gi.data_mut().iter_mut().zip(input.data()) {
                    if !(x > *tau) {
                        *gv = 0.0;
                    }
                }
                gi
            }
            LayerSpec::BatchNormInf { scale, .. } => {
                let ch = scale.len();
                let inner = input.len() / (batch * ch).max(1);
                let mut gi = g.reshape(input.shape())?;
                for (e, gv) in gi.data_mut().iter_mut().enumerate() {
                    *gv *= scale[(e / inner) % ch];
                }
                gi
            }
            LayerSpec::FullyConnected { in_dim, .. } => {
                let w = weights[i].as_ref().ok_or(Error::MissingWeights(i))?.to_dense();
                let a = input.clone().reshape(&[batch, *in_dim])?;
                let a_t = a.transpose()?;
                let w_t = w.transpose()?;
                if opts.instrument {
                    density[i] = Some(BackwardDensity {
                        data_grad: pair_density_dense(&g, &w_t)?,
                        weight_grad: pair_density_dense(&a_t, &g)?,
                    });
                }
                params[i] = Some(matmul(&a_t, &g)?);
                matmul(&g, &w_t)?.reshape(input.shape())?
            }
            LayerSpec::Conv2d { conv, .. } => {
                let cols = pass.cols[i].as_ref().ok_or(Error::Missing("im2col matrix"))?.to_f32();
                let (patch, ncols) = cols.dims2()?;
                let f = conv.out_ch;
                let hw = ncols / batch;
                // [B, F, Ho, Wo] -> [F, B*Ho*Wo]
                let gd = g.data();
                let mut gm = vec![0.0f32; f * ncols];
                for b in 0..batch {
                    for ch in 0..f {
                        gm[ch * ncols + b * hw..ch * ncols + (b + 1) * hw]
                            .copy_from_slice(&gd[(b * f + ch) * hw..(b * f + ch + 1) * hw]);
                    }
                }
                let gm = Tensor::new(&[f, ncols], gm)?;
                let wf = weights[i]
                    .as_ref()
                    .ok_or(Error::MissingWeights(i))?
                    .to_dense()
                    .reshape(&[f, patch])?;
                let wf_t = wf.transpose()?;
                let cols_t = cols.transpose()?;
                if opts.instrument {
                    density[i] = Some(BackwardDensity {
                        data_grad: pair_density_dense(&wf_t, &gm)?,
                        weight_grad: pair_density_dense(&gm, &cols_t)?,
                    });
                }
                params[i] = Some(matmul(&gm, &cols_t)?.reshape(&[f, conv.in_ch, conv.kh, conv.kw])?);
                let dcols = matmul(&wf_t, &gm)?;
                col2im(&dcols, conv, input.shape())?
            }
        };
    }

    Ok(Gradients {
        params,
        input: g,
        loss_task,
        loss_l1,
        skipped: false,
        density: opts.instrument.then_some(density),
    })
}

/// Per parameterized layer: pooled pair counts of both backward matrix
/// multiplies.
pub fn measure_backward_density(grads: &Gradients) -> Result<Vec<(usize, DensityStats)>> {
    let d = grads
        .density
        .as_ref()
        .ok_or(Error::Missing("backward instrumentation was disabled"))?;
    Ok(d.iter()
        .enumerate()
        .filter_map(|(i, d)| d.map(|d| (i, d.combined())))
        .collect())
}
