//! Synthetic desk-scale datasets.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[n, ...sample_shape]`.
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(x: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if x.rank() < 2 || x.shape()[0] != labels.len() {
            return Err(Error::invalid("dataset", "sample count differs from label count"));
        }
        if let Some(i) = labels.iter().position(|&l| l >= classes) {
            return Err(Error::invalid(alloc::format!("labels[{i}]"), "label out of range"));
        }
        Ok(Dataset { x, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.x.shape()[1..]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Stacks the given samples into a batch.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let per: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.x.data()[i * per..(i + 1) * per]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(self.sample_shape());
        let x = Tensor::new(&shape, data).expect("shape derived from dataset");
        (x, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f32 {
    StandardNormal.sample(rng)
}

/// Balanced labels: sample `i` belongs to class `i % classes`.
fn balanced_label(i: usize, classes: usize) -> usize {
    i % classes
}

/// Isotropic Gaussian blobs with centers evenly spaced on a circle of
/// `radius`, starting at 45 degrees.
pub fn blobs(n: usize, classes: usize, radius: f32, std: f32, seed: u64) -> Result<Dataset> {
    if n == 0 || classes < 2 {
        return Err(Error::invalid("blobs", "need n > 0 and at least two classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = balanced_label(i, classes);
        let angle = core::f32::consts::FRAC_PI_4 + core::f32::consts::TAU * c as f32 / classes as f32;
        let (cx, cy) = (radius * libm::cosf(angle), radius * libm::sinf(angle));
        x.push(cx + std * normal(&mut rng));
        x.push(cy + std * normal(&mut rng));
        labels.push(c);
    }
    Dataset::new(Tensor::new(&[n, 2], x)?, labels, classes)
}

/// Two interleaved spirals.
pub fn spirals(n: usize, noise: f32, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("spirals", "need n > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    let per = n.div_ceil(2);
    for i in 0..n {
        let c = balanced_label(i, 2);
        let t = (i / 2) as f32 / per as f32;
        let r = 0.5 + 3.5 * t;
        let angle = 3.0 * core::f32::consts::PI * t + c as f32 * core::f32::consts::PI;
        x.push(r * libm::cosf(angle) + noise * normal(&mut rng));
        x.push(r * libm::sinf(angle) + noise * normal(&mut rng));
        labels.push(c);
    }
    Dataset::new(Tensor::new(&[n, 2], x)?, labels, 2)
}

pub const IMAGE_SIDE: usize = 8;

/// Single-channel 8x8 images holding one Gaussian bump whose quadrant is the
/// class (up to four classes), with one pixel of position jitter and additive
/// Gaussian noise. Intensities are clamped at zero.
pub fn conv8x8(n: usize, classes: usize, noise: f32, seed: u64) -> Result<Dataset> {
    if n == 0 || !(2..=4).contains(&classes) {
        return Err(Error::invalid("conv8x8", "need n > 0 and 2..=4 classes"));
    }
    const CENTERS: [(f32, f32); 4] = [(2.0, 2.0), (2.0, 5.0), (5.0, 2.0), (5.0, 5.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = IMAGE_SIDE;
    let mut x = Vec::with_capacity(n * s * s);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = balanced_label(i, classes);
        let (cy, cx) = CENTERS[c];
        let jy = rng.random_range(-1i32..=1) as f32;
        let jx = rng.random_range(-1i32..=1) as f32;
        for py in 0..s {
            for px in 0..s {
                let dy = py as f32 - (cy + jy);
                let dx = px as f32 - (cx + jx);
                let bump = libm::expf(-(dy * dy + dx * dx) / (2.0 * 1.2 * 1.2));
                x.push((bump + noise * normal(&mut rng)).max(0.0));
            }
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new(&[n, 1, s, s], x)?, labels, classes)
}

/// iid standard-normal values, each kept with probability `density` and
/// zeroed otherwise.
pub fn random_tensor(shape: &[usize], density: f64, seed: u64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::invalid("density", "must be in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let v = normal(&mut rng);
        let keep = rng.random::<f64>() < density;
        // A drawn exact zero would silently lower the density.
        if keep {
            if v == 0.0 {
                f32::MIN_POSITIVE
            } else {
                v
            }
        } else {
            0.0
        }
    })
}

/// The reference blob task: 200 points, two classes.
pub fn blob_task(seed: u64) -> Dataset {
    blobs(200, 2, 3.0, 1.0, seed).expect("valid blob parameters")
}

/// The reference image task: 400 images, four classes.
pub fn conv8x8_task(seed: u64) -> Dataset {
    conv8x8(400, 4, 0.3, seed).expect("valid image parameters")
}
