//! Cycle model of the zero-skipping PE grid.
//!
//! Each processing element (PE) owns `output_buffers_per_pe` output
//! accumulators. An mmOp `A [M x K] * B [K x N]` is cut into output tiles of
//! one row and up to `output_buffers_per_pe` adjacent columns; tile
//! `t = i * ceil(N / buffers) + g` (row `i`, column group `g`) goes to PE
//! `t mod (pe_rows * pe_cols)`. A PE issues only the MACs whose operands are
//! both nonzero, `fpus_per_pe` per cycle, and the op finishes when the
//! busiest PE does. Memory traffic is not timed.

mod network;
mod synthetic;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::PwKind;
use crate::tensor::{DensityStats, Tensor};
use crate::ternary::TernaryTensor;

pub use network::{simulate_network, NetworkReport, OpReport};
pub use synthetic::{simulate_synthetic, sweep, synthetic_operands, SweepPoint, SyntheticLayer, SYNTHETIC_DENSITIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    /// 32-bit datapath.
    #[default]
    Train,
    /// 16-bit datapath; activations and weights are rounded to binary16.
    Infer,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Infer => "infer",
        }
    }

    pub fn datapath_bits(self) -> u32 {
        match self {
            Mode::Train => 32,
            Mode::Infer => 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub mode: Mode,
    pub pe_rows: usize,
    pub pe_cols: usize,
    /// Multiply-accumulate units per PE.
    pub fpus_per_pe: usize,
    pub flops_per_mac: u64,
    pub output_buffers_per_pe: usize,
    pub ptwise_units_per_pe: usize,
    pub freq_hz: f64,
    /// Fixed cost added to every mmOp.
    pub fill_overhead_cycles: u64,
}

impl SimConfig {
    /// 8x8 PEs with 8 single-precision units each: 512 units, 1024 FLOP/cycle.
    pub fn train() -> Self {
        SimConfig {
            mode: Mode::Train,
            pe_rows: 8,
            pe_cols: 8,
            fpus_per_pe: 8,
            flops_per_mac: 2,
            output_buffers_per_pe: 8,
            ptwise_units_per_pe: 8,
            freq_hz: 500e6,
            fill_overhead_cycles: 0,
        }
    }

    /// 8x8 PEs with 4 half-precision multiplier/adder pairs each: 256 of
    /// each, 512 FLOP/cycle.
    pub fn infer() -> Self {
        SimConfig {
            mode: Mode::Infer,
            fpus_per_pe: 4,
            ptwise_units_per_pe: 4,
            ..SimConfig::train()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pe_rows", self.pe_rows),
            ("pe_cols", self.pe_cols),
            ("fpus_per_pe", self.fpus_per_pe),
            ("flops_per_mac", self.flops_per_mac as usize),
            ("output_buffers_per_pe", self.output_buffers_per_pe),
            ("ptwise_units_per_pe", self.ptwise_units_per_pe),
        ];
        if let Some((field, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(*field, "must be positive"));
        }
        if !(self.freq_hz > 0.0 && self.freq_hz.is_finite()) {
            return Err(Error::invalid("freq_hz", "must be positive"));
        }
        Ok(())
    }

    pub fn pe_count(&self) -> usize {
        self.pe_rows * self.pe_cols
    }

    pub fn total_fpus(&self) -> u64 {
        (self.pe_count() * self.fpus_per_pe) as u64
    }

    pub fn peak_flops_per_cycle(&self) -> u64 {
        self.total_fpus() * self.flops_per_mac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Mm,
    Pw(PwKind),
    /// Sum over several ops.
    Total,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Mm => "mm",
            OpKind::Pw(k) => k.name(),
            OpKind::Total => "total",
        }
    }
}

/// Timing of one op, or of a sequence of ops (see [`CycleReport::total`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleReport {
    pub op: OpKind,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// Output elements of an mmOp, or elements of a pointwise op.
    pub n_elems: u64,
    /// `M * N * K` (0 for pointwise ops).
    pub total_macs: u64,
    pub nonzero_macs: u64,
    pub cycles: u64,
    pub dense_flops: u64,
    pub dense_baseline_cycles: u64,
    /// Perfect-skip lower bound on `cycles`.
    pub bound_cycles: u64,
    /// Nonzero MACs of the busiest PE.
    pub max_pe_work: u64,
    pub pe_count: usize,
    pub freq_hz: f64,
}

fn ratio(num: f64, den: f64, if_zero: f64) -> f64 {
    if den == 0.0 {
        if_zero
    } else {
        num / den
    }
}

impl CycleReport {
    /// Fraction of operand pairs with both operands nonzero.
    pub fn density(&self) -> f64 {
        match self.op {
            OpKind::Pw(_) => 1.0,
            _ => DensityStats::new(self.total_macs, self.nonzero_macs).density,
        }
    }

    pub fn effective_flops_per_cycle(&self) -> f64 {
        ratio(self.dense_flops as f64, self.cycles as f64, 0.0)
    }

    pub fn speedup(&self) -> f64 {
        ratio(self.dense_baseline_cycles as f64, self.cycles as f64, 1.0)
    }

    /// Busiest PE over the mean PE load; 1 without work.
    pub fn imbalance(&self) -> f64 {
        let mean = self.nonzero_macs as f64 / self.pe_count.max(1) as f64;
        ratio(self.max_pe_work as f64, mean, 1.0)
    }

    /// `bound_cycles / cycles`.
    pub fn efficiency(&self) -> f64 {
        ratio(self.bound_cycles as f64, self.cycles as f64, 1.0)
    }

    pub fn throughput_flops_per_sec(&self) -> f64 {
        self.effective_flops_per_cycle() * self.freq_hz
    }

    /// Sequential composition: counts and cycles add. Imbalance of the total
    /// is summed busiest-PE work over summed mean work.
    pub fn total<'a>(reports: impl IntoIterator<Item = &'a CycleReport>) -> CycleReport {
        let mut t = CycleReport {
            op: OpKind::Total,
            m: 0,
            n: 0,
            k: 0,
            n_elems: 0,
            total_macs: 0,
            nonzero_macs: 0,
            cycles: 0,
            dense_flops: 0,
            dense_baseline_cycles: 0,
            bound_cycles: 0,
            max_pe_work: 0,
            pe_count: 1,
            freq_hz: 0.0,
        };
        for r in reports {
            t.n_elems += r.n_elems;
            t.total_macs += r.total_macs;
            t.nonzero_macs += r.nonzero_macs;
            t.cycles += r.cycles;
            t.dense_flops += r.dense_flops;
            t.dense_baseline_cycles += r.dense_baseline_cycles;
            t.bound_cycles += r.bound_cycles;
            t.max_pe_work += r.max_pe_work;
            t.pe_count = r.pe_count;
            t.freq_hz = r.freq_hz;
        }
        t
    }
}

/// `ceil(nonzero_macs / total_fpus) + fill_overhead`.
pub fn perfect_skip_bound(cfg: &SimConfig, m: usize, n: usize, k: usize, nonzero_macs: u64) -> Result<u64> {
    if nonzero_macs > (m * n * k) as u64 {
        return Err(Error::invalid("nonzero_macs", "exceeds M*N*K"));
    }
    Ok(nonzero_macs.div_ceil(cfg.total_fpus()) + cfg.fill_overhead_cycles)
}

/// Schedules `a [M x K] * w [K x N]`.
pub fn schedule_mmop(cfg: &SimConfig, a: &Tensor, w: &TernaryTensor) -> Result<CycleReport> {
    let (m, k) = a.dims2()?;
    let [kw, n] = w.shape()[..] else {
        return Err(Error::Shape {
            shape: w.shape().to_vec(),
            reason: "ternary operand must be rank 2",
        });
    };
    if kw != k {
        return Err(Error::dim("schedule_mmop", a.shape(), w.shape()));
    }
    let ad = a.data();
    schedule_masks(cfg, m, n, k, |i, p| ad[i * k + p] != 0.0, |p, j| w.get(p * n + j) != 0)
}

/// Schedules `a [M x K] * b [K x N]` for dense operands of either precision.
pub fn schedule_dense(cfg: &SimConfig, a: &Tensor, b: &Tensor) -> Result<CycleReport> {
    let (m, k) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if kb != k {
        return Err(Error::dim("schedule_dense", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    schedule_masks(cfg, m, n, k, |i, p| ad[i * k + p] != 0.0, |p, j| bd[p * n + j] != 0.0)
}

/// Schedules an `M x K` by `K x N` product from operand nonzero patterns.
pub fn schedule_masks(
    cfg: &SimConfig,
    m: usize,
    n: usize,
    k: usize,
    a_nz: impl Fn(usize, usize) -> bool,
    b_nz: impl Fn(usize, usize) -> bool,
) -> Result<CycleReport> {
    cfg.validate()?;
    let buffers = cfg.output_buffers_per_pe;
    let groups = n.div_ceil(buffers);
    // Nonzeros of each B row within each column group.
    let mut group_nnz = vec![0u32; k * groups];
    for p in 0..k {
        for j in 0..n {
            if b_nz(p, j) {
                group_nnz[p * groups + j / buffers] += 1;
            }
        }
    }
    let pes = cfg.pe_count();
    let mut pe_work = vec![0u64; pes];
    let mut row_nz = Vec::with_capacity(k);
    for i in 0..m {
        row_nz.clear();
        row_nz.extend((0..k).filter(|&p| a_nz(i, p)));
        for g in 0..groups {
            let work: u64 = row_nz.iter().map(|&p| group_nnz[p * groups + g] as u64).sum();
            pe_work[(i * groups + g) % pes] += work;
        }
    }
    let nonzero: u64 = pe_work.iter().sum();
    let max_pe_work = pe_work.iter().copied().max().unwrap_or(0);
    let floor = u64::from(m * n >= 1);
    let cycles = cfg.fill_overhead_cycles + max_pe_work.div_ceil(cfg.fpus_per_pe as u64).max(floor);
    let total_macs = (m * n * k) as u64;
    Ok(CycleReport {
        op: OpKind::Mm,
        m,
        n,
        k,
        n_elems: (m * n) as u64,
        total_macs,
        nonzero_macs: nonzero,
        cycles,
        dense_flops: cfg.flops_per_mac * total_macs,
        dense_baseline_cycles: total_macs.div_ceil(cfg.total_fpus()) + cfg.fill_overhead_cycles,
        bound_cycles: perfect_skip_bound(cfg, m, n, k, nonzero)?,
        max_pe_work,
        pe_count: pes,
        freq_hz: cfg.freq_hz,
    })
}

/// One element-op per pointwise unit per cycle, whatever the kind.
pub fn schedule_ptwise(cfg: &SimConfig, kind: PwKind, n_elems: u64) -> Result<CycleReport> {
    cfg.validate()?;
    let units = (cfg.pe_count() * cfg.ptwise_units_per_pe) as u64;
    let cycles = n_elems.div_ceil(units);
    Ok(CycleReport {
        op: OpKind::Pw(kind),
        m: 0,
        n: 0,
        k: 0,
        n_elems,
        total_macs: 0,
        nonzero_macs: 0,
        cycles,
        dense_flops: n_elems,
        dense_baseline_cycles: cycles,
        bound_cycles: cycles,
        max_pe_work: 0,
        pe_count: cfg.pe_count(),
        freq_hz: cfg.freq_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::pair_density;

    fn one_pe(buffers: usize) -> SimConfig {
        SimConfig {
            pe_rows: 1,
            pe_cols: 1,
            fpus_per_pe: 1,
            output_buffers_per_pe: buffers,
            ptwise_units_per_pe: 1,
            ..SimConfig::train()
        }
    }

    #[test]
    fn presets() {
        let t = SimConfig::train();
        assert_eq!(t.total_fpus(), 512);
        assert_eq!(t.peak_flops_per_cycle(), 1024);
        assert_eq!(t.mode.datapath_bits(), 32);
        let i = SimConfig::infer();
        assert_eq!(i.total_fpus(), 256);
        assert_eq!(i.peak_flops_per_cycle(), 512);
        assert_eq!(i.mode.datapath_bits(), 16);
        // Same FLOP/cycle per unit at half the width.
        assert_eq!(
            t.peak_flops_per_cycle() / t.total_fpus(),
            i.peak_flops_per_cycle() / i.total_fpus()
        );
    }

    #[test]
    fn rejects_empty_grid() {
        let cfg = SimConfig {
            pe_cols: 0,
            ..SimConfig::train()
        };
        let a = Tensor::zeros(&[1, 1]).unwrap();
        let w = TernaryTensor::zeros(&[1, 1]).unwrap();
        assert!(schedule_mmop(&cfg, &a, &w).is_err());
        assert!(schedule_mmop(&SimConfig::train(), &a, &TernaryTensor::zeros(&[2, 1]).unwrap()).is_err());
    }

    #[test]
    fn hand_counted_example() {
        let a = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let w = TernaryTensor::from_trits(&[2, 2], &[1, 1, 1, 1]).unwrap();
        for fill in [0, 5] {
            let cfg = SimConfig {
                fill_overhead_cycles: fill,
                ..one_pe(2)
            };
            let r = schedule_mmop(&cfg, &a, &w).unwrap();
            assert_eq!(r.nonzero_macs, 2);
            assert_eq!(r.cycles, fill + 2);
        }
    }

    #[test]
    fn dense_calibration() {
        let cfg = SimConfig::train();
        let a = Tensor::from_fn(&[64, 32], |i| 1.0 + i as f32).unwrap();
        let w = TernaryTensor::from_trits(&[32, 128], &vec![1; 32 * 128]).unwrap();
        let r = schedule_mmop(&cfg, &a, &w).unwrap();
        assert_eq!(r.cycles, 64 * 128 * 32 / 512);
        assert_eq!(r.effective_flops_per_cycle(), 1024.0);
        assert_eq!(r.speedup(), 1.0);
        assert_eq!(r.imbalance(), 1.0);
        assert_eq!(r.efficiency(), 1.0);
        assert_eq!(r.throughput_flops_per_sec(), 1024.0 * 500e6);
    }

    #[test]
    fn zero_work_hits_the_floor() {
        let a = Tensor::zeros(&[4, 8]).unwrap();
        let w = TernaryTensor::from_trits(&[8, 4], &[1; 32]).unwrap();
        for fill in [0, 32] {
            let cfg = SimConfig {
                fill_overhead_cycles: fill,
                ..SimConfig::train()
            };
            let r = schedule_mmop(&cfg, &a, &w).unwrap();
            assert_eq!(r.nonzero_macs, 0);
            assert_eq!(r.cycles, fill + 1);
            assert_eq!(r.bound_cycles, fill);
            assert_eq!(r.efficiency(), fill as f64 / (fill + 1) as f64);
            assert_eq!(r.imbalance(), 1.0);
        }
    }

    #[test]
    fn work_is_conserved() {
        let a = Tensor::from_fn(&[5, 7], |i| if i % 3 == 0 { 0.0 } else { i as f32 }).unwrap();
        let trits: Vec<i8> = (0..7 * 11).map(|i| [0, 1, -1, 0, 1][i % 5]).collect();
        let w = TernaryTensor::from_trits(&[7, 11], &trits).unwrap();
        for cfg in [SimConfig::train(), one_pe(3), one_pe(100)] {
            let r = schedule_mmop(&cfg, &a, &w).unwrap();
            assert_eq!(r.nonzero_macs, pair_density(&a, &w).unwrap().nonzero);
            assert!(r.cycles >= r.bound_cycles);
        }
    }

    #[test]
    fn pointwise_cycles() {
        let cfg = SimConfig::train();
        let units = 64 * 8;
        for (n, c) in [(units, 1), (0, 0), (3 * units + 1, 4), (1, 1)] {
            let r = schedule_ptwise(&cfg, PwKind::MulAdd, n).unwrap();
            assert_eq!(r.cycles, c);
            assert_eq!(r.dense_flops, n);
        }
        for kind in [PwKind::AddSub, PwKind::TernarySelect] {
            assert_eq!(schedule_ptwise(&cfg, kind, 1000).unwrap().cycles, 2);
        }
    }

    #[test]
    fn bound_rejects_impossible_counts() {
        let cfg = SimConfig::train();
        assert!(perfect_skip_bound(&cfg, 2, 2, 2, 9).is_err());
        assert_eq!(perfect_skip_bound(&cfg, 64, 64, 64, 64 * 64 * 64).unwrap(), 512);
    }

    #[test]
    fn totals_add_up() {
        let cfg = SimConfig::train();
        let a = Tensor::from_fn(&[8, 8], |i| (i % 2) as f32).unwrap();
        let w = TernaryTensor::from_trits(&[8, 8], &[1; 64]).unwrap();
        let r1 = schedule_mmop(&cfg, &a, &w).unwrap();
        let r2 = schedule_ptwise(&cfg, PwKind::TernarySelect, 64).unwrap();
        let t = CycleReport::total([&r1, &r2]);
        assert_eq!(t.cycles, r1.cycles + r2.cycles);
        assert_eq!(t.dense_flops, r1.dense_flops + r2.dense_flops);
        assert_eq!(t.op.name(), "total");
    }
}
