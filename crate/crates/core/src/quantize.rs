//! Threshold ternarization and the sparsity-inducing pieces around it.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{DensityStats, Tensor};
use crate::ternary::TernaryTensor;

/// Default ReLU threshold.
pub const DEFAULT_RELU_TAU: f32 = 0.01;

/// Default factor for [`ThresholdPolicy::MeanScaled`].
pub const DEFAULT_MEAN_SCALE: f32 = 0.7;

/// How the ternarization threshold `w_th` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    /// A fixed positive threshold.
    Fixed(f32),
    /// `w_th = t * mean(|W|)` over the whole tensor.
    MeanScaled(f32),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::MeanScaled(DEFAULT_MEAN_SCALE)
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        let (field, v) = match *self {
            ThresholdPolicy::Fixed(v) => ("threshold.fixed", v),
            ThresholdPolicy::MeanScaled(v) => ("threshold.mean_scaled", v),
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(field, "must be a positive finite value"))
        }
    }

    /// Resolves the concrete threshold for `w`.
    pub fn resolve(&self, w: &Tensor) -> Result<f32> {
        self.validate()?;
        match *self {
            ThresholdPolicy::Fixed(th) => Ok(th),
            ThresholdPolicy::MeanScaled(t) => {
                if w.is_empty() {
                    return Err(Error::Degenerate("empty weight tensor"));
                }
                let sum: f64 = w.data().iter().map(|x| x.abs() as f64).sum();
                let mean = sum / w.len() as f64;
                let th = (t as f64 * mean) as f32;
                if th <= 0.0 || !th.is_finite() {
                    return Err(Error::Degenerate(
                        "mean-scaled threshold resolves to zero (all-zero weights)",
                    ));
                }
                Ok(th)
            }
        }
    }
}

/// +1 where `W > w_th`, -1 where `W < -w_th`, 0 otherwise (ties go to 0).
pub fn ternarize(w: &Tensor, policy: ThresholdPolicy) -> Result<(TernaryTensor, f32)> {
    if w.is_empty() {
        return Err(Error::Degenerate("empty weight tensor"));
    }
    let th = policy.resolve(w)?;
    Ok((ternarize_with(w, th)?, th))
}

pub(crate) fn ternarize_with(w: &Tensor, th: f32) -> Result<TernaryTensor> {
    let trits: Vec<i8> = w
        .data()
        .iter()
        .map(|&x| {
            if x > th {
                1
            } else if x < -th {
                -1
            } else {
                0
            }
        })
        .collect();
    TernaryTensor::from_trits(w.shape(), &trits)
}

/// `x` where `x > tau`, else 0.
pub fn relu_threshold(x: &Tensor, tau: f32) -> Tensor {
    x.map(|v| if v > tau { v } else { 0.0 })
}

fn check_pair_dims(a: &[usize], w: &[usize]) -> Result<(usize, usize, usize)> {
    match (a, w) {
        ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
        _ => Err(Error::dim("pair_density", a, w)),
    }
}

/// Pair count from per-`k` nonzero counts: column `k` of the left operand
/// meets row `k` of the right operand in `lhs[k] * rhs[k]` nonzero MACs.
pub(crate) fn pair_stats(m: usize, n: usize, lhs_col_nnz: &[u64], rhs_row_nnz: &[u64]) -> DensityStats {
    let nonzero = lhs_col_nnz.iter().zip(rhs_row_nnz).map(|(a, b)| a * b).sum();
    DensityStats::new((m * n * lhs_col_nnz.len()) as u64, nonzero)
}

pub(crate) fn col_nnz(t: &Tensor) -> Vec<u64> {
    let (r, c) = t.dims2().expect("checked rank-2");
    let mut out = alloc::vec![0u64; c];
    for i in 0..r {
        for (j, &v) in t.data()[i * c..(i + 1) * c].iter().enumerate() {
            out[j] += (v != 0.0) as u64;
        }
    }
    out
}

pub(crate) fn row_nnz(t: &Tensor) -> Vec<u64> {
    let (r, c) = t.dims2().expect("checked rank-2");
    (0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].iter().filter(|&&v| v != 0.0).count() as u64)
        .collect()
}

/// Fraction of the `M*N*K` candidate MACs of `a x w` whose operands are
/// both nonzero. Runs in `O(MK + KN)`.
pub fn pair_density(a: &Tensor, w: &TernaryTensor) -> Result<DensityStats> {
    let (m, k, n) = check_pair_dims(a.shape(), w.shape())?;
    let rhs: Vec<u64> = (0..k)
        .map(|p| (0..n).filter(|&j| w.get(p * n + j) != 0).count() as u64)
        .collect();
    Ok(pair_stats(m, n, &col_nnz(a), &rhs))
}

/// [`pair_density`] for two dense operands.
pub fn pair_density_dense(a: &Tensor, b: &Tensor) -> Result<DensityStats> {
    let (m, _, n) = check_pair_dims(a.shape(), b.shape())?;
    Ok(pair_stats(m, n, &col_nnz(a), &row_nnz(b)))
}

/// `lambda * sum(|x|)` over every tensor, with subgradient `lambda * sign(x)`
/// (zero at `x == 0`).
pub fn l1_activation_penalty(acts: &[Tensor], lambda: f32) -> (f32, Vec<Tensor>) {
    let mut sum = 0.0f64;
    let grads = acts
        .iter()
        .map(|t| {
            sum += t.data().iter().map(|x| x.abs() as f64).sum::<f64>();
            t.to_f32().map(|x| {
                if x > 0.0 {
                    lambda
                } else if x < 0.0 {
                    -lambda
                } else {
                    0.0
                }
            })
        })
        .collect();
    ((lambda as f64 * sum) as f32, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::density;
    use alloc::vec;

    fn scalar(x: f32) -> Tensor {
        Tensor::new(&[1], vec![x]).unwrap()
    }

    #[test]
    fn ternarize_examples() {
        let f = ThresholdPolicy::Fixed(0.3);
        assert_eq!(ternarize(&scalar(0.5), f).unwrap().0.get(0), 1);
        assert_eq!(ternarize(&scalar(-0.5), f).unwrap().0.get(0), -1);
        assert_eq!(ternarize(&scalar(0.3), f).unwrap().0.get(0), 0);
        assert_eq!(ternarize(&scalar(-0.3), f).unwrap().0.get(0), 0);
    }

    #[test]
    fn ternarize_errors() {
        let empty = Tensor::new(&[0], vec![]).unwrap();
        assert!(matches!(
            ternarize(&empty, ThresholdPolicy::Fixed(0.1)),
            Err(Error::Degenerate(_))
        ));
        let zeros = Tensor::zeros(&[3, 3]).unwrap();
        assert!(matches!(
            ternarize(&zeros, ThresholdPolicy::MeanScaled(0.7)),
            Err(Error::Degenerate(_))
        ));
        assert!(ternarize(&zeros, ThresholdPolicy::Fixed(0.0)).is_err());
        assert!(ternarize(&zeros, ThresholdPolicy::MeanScaled(-1.0)).is_err());
    }

    #[test]
    fn mean_scaled_resolves_threshold() {
        let w = Tensor::new(&[4], vec![1.0, -1.0, 0.2, -0.2]).unwrap();
        let (t, th) = ternarize(&w, ThresholdPolicy::MeanScaled(0.5)).unwrap();
        assert!((th - 0.3).abs() < 1e-7);
        assert_eq!(t.trits().collect::<Vec<_>>(), vec![1, -1, 0, 0]);
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu_threshold(&scalar(0.005), 0.01).data(), &[0.0]);
        assert_eq!(relu_threshold(&scalar(0.5), 0.01).data(), &[0.5]);
        assert_eq!(relu_threshold(&scalar(-3.0), 0.0).data(), &[0.0]);
        assert_eq!(relu_threshold(&scalar(-3.0), 1.0).data(), &[0.0]);
        assert_eq!(relu_threshold(&scalar(0.01), 0.01).data(), &[0.0]);
    }

    fn brute_pairs(a: &Tensor, w: &TernaryTensor) -> u64 {
        let (m, k) = a.dims2().unwrap();
        let n = w.shape()[1];
        let mut c = 0;
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    if a.data()[i * k + p] != 0.0 && w.get(p * n + j) != 0 {
                        c += 1;
                    }
                }
            }
        }
        c
    }

    #[test]
    fn pair_density_examples() {
        let a = Tensor::matrix(2, 4, vec![1.0; 8]).unwrap();
        let w = TernaryTensor::from_trits(&[4, 3], &[1; 12]).unwrap();
        assert_eq!(pair_density(&a, &w).unwrap().density, 1.0);

        // Half of a's columns zero.
        let a = Tensor::matrix(2, 4, vec![1., 0., 2., 0., 3., 0., 4., 0.]).unwrap();
        let d = pair_density(&a, &w).unwrap();
        assert_eq!(d.nonzero, brute_pairs(&a, &w));
        assert_eq!(d.total, 24);
        assert_eq!(d.density, 0.5);

        let z = Tensor::zeros(&[2, 4]).unwrap();
        assert_eq!(pair_density(&z, &w).unwrap().density, 0.0);

        let w_bad = TernaryTensor::zeros(&[3, 3]).unwrap();
        assert!(pair_density(&a, &w_bad).is_err());
    }

    #[test]
    fn pair_density_dense_agrees_with_ternary_form() {
        let a = Tensor::matrix(2, 3, vec![1., 0., 2., 0., 0., 3.]).unwrap();
        let w = TernaryTensor::from_trits(&[3, 2], &[1, 0, -1, 1, 0, 0]).unwrap();
        assert_eq!(
            pair_density(&a, &w).unwrap(),
            pair_density_dense(&a, &w.to_dense()).unwrap()
        );
    }

    #[test]
    fn l1_examples() {
        let acts = [Tensor::matrix(1, 3, vec![1., -2., 0.]).unwrap()];
        let (loss, g) = l1_activation_penalty(&acts, 0.1);
        assert!((loss - 0.3).abs() < 1e-7);
        assert_eq!(g[0].data(), &[0.1, -0.1, 0.0]);

        let (loss, g) = l1_activation_penalty(&acts, 0.0);
        assert_eq!(loss, 0.0);
        assert!(g[0].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn l1_matches_finite_difference() {
        let x: Vec<f32> = (0..20).map(|i| ((i * 37 % 17) as f32 - 8.0) / 3.0 + 0.1).collect();
        let t = Tensor::new(&[20], x.clone()).unwrap();
        let lambda = 0.05;
        let (_, g) = l1_activation_penalty(core::slice::from_ref(&t), lambda);
        let h = 1e-3f64;
        for i in 0..x.len() {
            let pen = |v: f64| {
                lambda as f64
                    * x.iter()
                        .enumerate()
                        .map(|(j, &xj)| if j == i { v.abs() } else { (xj as f64).abs() })
                        .sum::<f64>()
            };
            let fd = (pen(x[i] as f64 + h) - pen(x[i] as f64 - h)) / (2.0 * h);
            assert!((fd - g[0].data()[i] as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn relu_never_raises_density() {
        let x = Tensor::new(&[6], vec![-1., 0., 0.001, 0.02, 3., -0.5]).unwrap();
        for tau in [0.0, 0.01, 0.1, 10.0] {
            assert!(density(&relu_threshold(&x, tau), 0.0).density <= density(&x, 0.0).density);
        }
    }
}
