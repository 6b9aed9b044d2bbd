use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{schedule_mmop, CycleReport, SimConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::ternary::TernaryTensor;

/// Pair densities of the six-layer synthetic network, shallow to deep.
pub const SYNTHETIC_DENSITIES: [f64; 6] = [1.0, 0.55, 0.4, 0.3, 0.25, 0.2];

/// One mmOp `[m x k] * [k x n]` with iid operand zeros.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticLayer {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// Expected pair density; each operand is nonzero with probability
    /// `sqrt(density)`.
    pub density: f64,
}

/// Random operands whose pair density is `density` in expectation.
///
/// Every element consumes the same random draws whatever its mask, so for a
/// fixed seed the nonzero pattern at a lower density is a subset of the
/// pattern at a higher one.
pub fn synthetic_operands(m: usize, n: usize, k: usize, density: f64, seed: u64) -> Result<(Tensor, TernaryTensor)> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::invalid("density", "must be in [0, 1]"));
    }
    let p = libm::sqrt(density);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Tensor::from_fn(&[m, k], |_| {
        let keep = rng.random::<f64>() < p;
        let v: f32 = rng.sample(StandardNormal);
        match keep {
            false => 0.0,
            true if v == 0.0 => 1.0,
            true => v,
        }
    })?;
    let trits: Vec<i8> = (0..k * n)
        .map(|_| {
            let keep = rng.random::<f64>() < p;
            let sign = if rng.random::<bool>() { 1 } else { -1 };
            if keep {
                sign
            } else {
                0
            }
        })
        .collect();
    Ok((a, TernaryTensor::from_trits(&[k, n], &trits)?))
}

/// Times each layer on operands drawn from `seed + layer index`.
pub fn simulate_synthetic(cfg: &SimConfig, layers: &[SyntheticLayer], seed: u64) -> Result<Vec<CycleReport>> {
    layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (a, w) = synthetic_operands(l.m, l.n, l.k, l.density, seed.wrapping_add(i as u64))?;
            schedule_mmop(cfg, &a, &w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Index into the config grid.
    pub config: usize,
    pub density: f64,
    pub report: CycleReport,
}

/// Every config against every density, config-major. Operands for a given
/// density are the same for all configs.
pub fn sweep(
    configs: &[SimConfig],
    densities: &[f64],
    m: usize,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if configs.is_empty() || densities.is_empty() {
        return Err(Error::invalid("sweep", "config and density grids must be non-empty"));
    }
    let operands = densities
        .iter()
        .map(|&d| synthetic_operands(m, n, k, d, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(configs.len() * densities.len());
    for (c, cfg) in configs.iter().enumerate() {
        for (&density, (a, w)) in densities.iter().zip(&operands) {
            out.push(SweepPoint {
                config: c,
                density,
                report: schedule_mmop(cfg, a, w)?,
            });
        }
    }
    Ok(out)
}
