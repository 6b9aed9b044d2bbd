//! Backpropagation and the ternary training protocol.
//!
//! Training runs in two phases. For the first `epochs_full_precision` epochs
//! every layer uses its full-precision weights. After that, layers marked
//! [`Precision::Ternary`] are quantized from a full-precision master copy
//! at every step; gradients w.r.t. the quantized values update the master
//! unchanged (straight-through).

mod backward;
pub mod data;
pub mod nets;
mod schedule;

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{forward, ForwardPass, LayerSpec, LayerWeights, NetworkSpec, Precision, WeightSet};
use crate::quantize::{pair_density_dense, ternarize, ThresholdPolicy, DEFAULT_RELU_TAU};
use crate::tensor::{DensityStats, Tensor};
use crate::ternary::TernaryTensor;

pub use backward::{
    argmax_rows, backward, cross_entropy, grad_update_filter, measure_backward_density, BackwardDensity,
    BackwardOptions, FilterOutcome, Gradients,
};
pub use data::Dataset;
pub use schedule::lr_schedule_step;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs_total: usize,
    /// Length of the full-precision pre-initialization phase.
    pub epochs_full_precision: usize,
    pub lr0: f32,
    pub lr_drop_factor: f32,
    pub plateau_window: usize,
    pub plateau_min_delta: f32,
    pub lambda_l1: f32,
    /// Threshold applied to every ReLU layer once `relu_tau_from_epoch` is reached
    /// (plain ReLU before that).
    pub relu_tau: f32,
    pub relu_tau_from_epoch: usize,
    pub grad_update_filter: bool,
    pub threshold_policy: ThresholdPolicy,
    pub seed: u64,
    pub batch_size: usize,
    /// SGD momentum; 0 disables it.
    pub momentum: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_total: 60,
            epochs_full_precision: 15,
            lr0: 0.05,
            lr_drop_factor: 0.1,
            plateau_window: 5,
            plateau_min_delta: 1e-4,
            lambda_l1: 1e-4,
            relu_tau: DEFAULT_RELU_TAU,
            relu_tau_from_epoch: 0,
            grad_update_filter: false,
            threshold_policy: ThresholdPolicy::default(),
            seed: 0,
            batch_size: 20,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, r: &str| Err(Error::invalid(f, r));
        if self.epochs_full_precision > self.epochs_total {
            return bad("epochs_full_precision", "exceeds epochs_total");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0", "must be positive");
        }
        if !(self.lr_drop_factor > 0.0 && self.lr_drop_factor < 1.0) {
            return bad("lr_drop_factor", "must lie in (0, 1)");
        }
        if self.plateau_window == 0 {
            return bad("plateau_window", "must be at least 1");
        }
        if !(self.plateau_min_delta >= 0.0) {
            return bad("plateau_min_delta", "must be non-negative");
        }
        if !(self.lambda_l1 >= 0.0) {
            return bad("lambda_l1", "must be non-negative");
        }
        if !(self.relu_tau >= 0.0) {
            return bad("relu_tau", "must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        self.threshold_policy.validate()
    }
}

/// Full-precision masters and their quantized views.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowWeights {
    pub masters: Vec<Option<Tensor>>,
    pub quantized: Vec<Option<TernaryTensor>>,
    pub thresholds: Vec<Option<f32>>,
}

impl ShadowWeights {
    fn new(masters: Vec<Option<Tensor>>) -> Self {
        let n = masters.len();
        ShadowWeights {
            masters,
            quantized: vec![None; n],
            thresholds: vec![None; n],
        }
    }

    /// Re-quantizes every ternary layer from its master.
    pub fn requantize(&mut self, net: &NetworkSpec, policy: ThresholdPolicy) -> Result<()> {
        for (i, layer) in net.layers.iter().enumerate() {
            if layer.precision() == Some(Precision::Ternary) {
                let m = self.masters[i].as_ref().ok_or(Error::MissingWeights(i))?;
                let (q, th) = ternarize(m, policy).map_err(|e| Error::layer(i, alloc::format!("{e}")))?;
                self.quantized[i] = Some(q);
                self.thresholds[i] = Some(th);
            }
        }
        Ok(())
    }

    /// Weights a forward pass should use. With `quantized` false every layer
    /// reads its master.
    pub fn effective(&self, net: &NetworkSpec, quantized: bool) -> WeightSet {
        net.layers
            .iter()
            .enumerate()
            .map(|(i, l)| match l.precision() {
                Some(Precision::Ternary) if quantized => self.quantized[i].clone().map(LayerWeights::Ternary),
                Some(_) => self.masters[i].clone().map(LayerWeights::Full),
                None => None,
            })
            .collect()
    }
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// The trained network with the ReLU thresholds used at the end of
    /// training. Ternary layers stay ternary only when the quantized phase
    /// was reached.
    pub net: NetworkSpec,
    pub shadow: ShadowWeights,
    pub quantized: bool,
}

impl TrainedModel {
    pub fn weights(&self) -> WeightSet {
        self.shadow.effective(&self.net, self.quantized)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerDensity {
    pub layer: usize,
    pub forward: DensityStats,
    pub backward: DensityStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_error: f32,
    pub lr: f32,
    pub loss_task: f32,
    pub loss_l1: f32,
    pub layers: Vec<LayerDensity>,
    /// Fraction of zero ReLU outputs over the epoch's training batches.
    pub activation_zero_fraction: f64,
    pub skipped_batches: usize,
}

impl EpochLog {
    pub fn forward_density(&self) -> DensityStats {
        self.layers
            .iter()
            .fold(DensityStats::default(), |a, l| a.merge(l.forward))
    }

    pub fn backward_density(&self) -> DensityStats {
        self.layers
            .iter()
            .fold(DensityStats::default(), |a, l| a.merge(l.backward))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn final_error(&self) -> Option<f32> {
        self.epochs.last().map(|e| e.train_error)
    }
}

/// Seeded normal initialization of every parameterized layer, in layer order.
///
/// A layer whose output feeds a [`LayerSpec::BatchNormInf`] is drawn at unit
/// variance and left to the batch-norm scale; this keeps full-precision
/// masters on the same magnitude as their ternary views. Other layers get
/// He-normal variance `2 / fan_in`.
pub fn init_weights(net: &NetworkSpec, rng: &mut ChaCha8Rng) -> Vec<Option<Tensor>> {
    net.layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let shape = l.weight_shape()?;
            let fan_in: usize = match l {
                LayerSpec::Conv2d { conv, .. } => conv.patch_len(),
                _ => shape[0],
            };
            let normalized = matches!(net.layers.get(i + 1), Some(LayerSpec::BatchNormInf { .. }));
            let std = if normalized {
                1.0
            } else {
                libm::sqrtf(2.0 / fan_in as f32)
            };
            Some(
                Tensor::from_fn(&shape, |_| {
                    let z: f32 = StandardNormal.sample(rng);
                    std * z
                })
                .expect("valid shape"),
            )
        })
        .collect()
}

/// Copy of `net` as run in one epoch: every ReLU threshold set to `tau`, and
/// all layers full precision outside the quantized phase.
fn phase_net(net: &NetworkSpec, tau: f32, quantized: bool) -> NetworkSpec {
    let mut n = net.clone();
    for l in &mut n.layers {
        match l {
            LayerSpec::ReluT { tau: t } => *t = tau,
            _ if !quantized => l.set_precision(Precision::Full),
            _ => {}
        }
    }
    n
}

/// Pair densities of every mmOp in a traced forward pass.
pub fn forward_density(pass: &ForwardPass, weights: &[Option<LayerWeights>]) -> Result<Vec<(usize, DensityStats)>> {
    pass.trace
        .mm_records()
        .map(|r| {
            let (a, b) = pass.mm_operands(weights, r)?;
            Ok((r.layer, pair_density_dense(&a.to_f32(), &b.to_f32())?))
        })
        .collect()
}

/// Misclassification rate over the whole dataset.
pub fn evaluate(net: &NetworkSpec, weights: &[Option<LayerWeights>], data: &Dataset, batch_size: usize) -> Result<f32> {
    let mut wrong = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, labels) = data.gather(chunk);
        let pass = forward(net, weights, &x)?;
        wrong += argmax_rows(&pass.logits)
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p != l)
            .count();
    }
    Ok(wrong as f32 / data.len().max(1) as f32)
}

/// Trains from a seeded He-normal initialization.
pub fn train(net: &NetworkSpec, cfg: &TrainConfig, data: &Dataset) -> Result<(TrainedModel, TrainLog)> {
    train_from(net, cfg, data, None)
}

/// Fine-tunes pretrained full-precision weights: every parameterized layer
/// except the first becomes ternary and training starts directly in the
/// quantized phase.
pub fn finetune_from(
    pretrained: &[Option<Tensor>],
    net: &NetworkSpec,
    cfg: &TrainConfig,
    data: &Dataset,
) -> Result<(TrainedModel, TrainLog)> {
    let mut ft = net.clone();
    for (n, i) in net.parameterized_layers().into_iter().enumerate() {
        ft.layers[i].set_precision(if n == 0 { Precision::Full } else { Precision::Ternary });
    }
    let cfg = TrainConfig {
        epochs_full_precision: 0,
        ..cfg.clone()
    };
    train_from(&ft, &cfg, data, Some(pretrained.to_vec()))
}

fn train_from(
    net: &NetworkSpec,
    cfg: &TrainConfig,
    data: &Dataset,
    init: Option<Vec<Option<Tensor>>>,
) -> Result<(TrainedModel, TrainLog)> {
    cfg.validate()?;
    net.validate()?;
    if !net.ends_with_softmax() {
        return Err(Error::invalid("layers", "training needs a final softmax_xent layer"));
    }
    if data.is_empty() {
        return Err(Error::invalid("dataset", "empty"));
    }
    if data.sample_shape() != &net.input_shape[..] {
        return Err(Error::dim("dataset sample", data.sample_shape(), &net.input_shape));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let masters = match init {
        Some(w) => {
            if w.len() != net.layers.len() {
                return Err(Error::invalid("pretrained", "one entry per layer expected"));
            }
            for (i, l) in net.layers.iter().enumerate() {
                match (l.weight_shape(), &w[i]) {
                    (Some(s), Some(t)) if t.shape() == &s[..] => {}
                    (Some(s), Some(t)) => {
                        return Err(Error::layer(
                            i,
                            alloc::format!("pretrained shape {:?}, expected {s:?}", t.shape()),
                        ))
                    }
                    (Some(_), None) => return Err(Error::MissingWeights(i)),
                    _ => {}
                }
            }
            w
        }
        None => init_weights(net, &mut rng),
    };
    let has_ternary = net.layers.iter().any(|l| l.precision() == Some(Precision::Ternary));

    let mut shadow = ShadowWeights::new(masters);
    let mut velocity: Vec<Option<Tensor>> = shadow
        .masters
        .iter()
        .map(|m| m.as_ref().map(|t| Tensor::zeros(t.shape()).expect("valid")))
        .collect();
    let mut lr = cfg.lr0;
    let mut history: Vec<f32> = Vec::new();
    // Plateau detection only looks at history[window_start..].
    let mut window_start = 0usize;
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let opts = BackwardOptions {
        lambda_l1: cfg.lambda_l1,
        grad_update_filter: cfg.grad_update_filter,
        instrument: true,
    };
    let mut quantized = false;

    if cfg.epochs_total == 0 && has_ternary && cfg.epochs_full_precision == 0 {
        shadow.requantize(net, cfg.threshold_policy)?;
        quantized = true;
    }
    let mut run_net = phase_net(net, cfg.relu_tau, quantized);

    for epoch in 0..cfg.epochs_total {
        let tau = if epoch >= cfg.relu_tau_from_epoch {
            cfg.relu_tau
        } else {
            0.0
        };
        let q = has_ternary && epoch >= cfg.epochs_full_precision;
        if q && !quantized {
            // Errors from the full-precision phase are not a fair baseline.
            window_start = history.len();
            quantized = true;
        }
        run_net = phase_net(net, tau, quantized);
        order.shuffle(&mut rng);

        let mut fwd = vec![DensityStats::default(); net.layers.len()];
        let mut bwd = vec![DensityStats::default(); net.layers.len()];
        let mut act = DensityStats::default();
        let (mut loss_task, mut loss_l1, mut batches, mut skipped) = (0.0f64, 0.0f64, 0usize, 0usize);

        for chunk in order.chunks(cfg.batch_size) {
            if quantized {
                shadow.requantize(net, cfg.threshold_policy)?;
            }
            let weights = shadow.effective(net, quantized);
            let (x, labels) = data.gather(chunk);
            let pass = forward(&run_net, &weights, &x)?;
            let grads = backward(&run_net, &weights, &pass, &labels, &opts).map_err(|e| match e {
                Error::NonFiniteLoss => Error::Diverged { epoch },
                e => e,
            })?;
            loss_task += grads.loss_task as f64;
            loss_l1 += grads.loss_l1 as f64;
            batches += 1;
            for (layer, d) in forward_density(&pass, &weights)? {
                fwd[layer] = fwd[layer].merge(d);
            }
            for (i, l) in run_net.layers.iter().enumerate() {
                if matches!(l, LayerSpec::ReluT { .. }) {
                    let a = &pass.activations[i];
                    act = act.merge(DensityStats::new(a.len() as u64, a.count_nonzero(0.0) as u64));
                }
            }
            if grads.skipped {
                skipped += 1;
                continue;
            }
            for (layer, d) in measure_backward_density(&grads)? {
                bwd[layer] = bwd[layer].merge(d);
            }
            for ((g, m), v) in grads.params.iter().zip(&mut shadow.masters).zip(&mut velocity) {
                let (Some(g), Some(m), Some(v)) = (g, m, v) else {
                    continue;
                };
                for ((w, vel), &gv) in m.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vel = cfg.momentum * *vel + gv;
                    *w -= lr * *vel;
                }
            }
        }

        if quantized {
            shadow.requantize(net, cfg.threshold_policy)?;
        }
        let weights = shadow.effective(net, quantized);
        let err = evaluate(&run_net, &weights, data, cfg.batch_size)?;
        let layers = net
            .parameterized_layers()
            .into_iter()
            .map(|i| LayerDensity {
                layer: i,
                forward: fwd[i],
                backward: bwd[i],
            })
            .collect();
        log.epochs.push(EpochLog {
            epoch,
            train_error: err,
            lr,
            loss_task: (loss_task / batches as f64) as f32,
            loss_l1: (loss_l1 / batches as f64) as f32,
            layers,
            activation_zero_fraction: if act.total == 0 { 0.0 } else { 1.0 - act.density },
            skipped_batches: skipped,
        });
        history.push(err);
        let next = lr_schedule_step(&history[window_start..], lr, cfg);
        if next != lr {
            // The epoch that triggered the drop is the baseline for the next one.
            window_start = history.len() - 1;
            lr = next;
        }
    }

    Ok((
        TrainedModel {
            net: run_net,
            shadow,
            quantized,
        },
        log,
    ))
}
