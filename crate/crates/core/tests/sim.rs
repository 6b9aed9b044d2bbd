use dlac_core::graph::{forward, LayerSpec, LayerWeights, NetworkSpec, Precision};
use dlac_core::quantize::{pair_density, ternarize, ThresholdPolicy};
use dlac_core::sim::{
    schedule_masks, schedule_mmop, simulate_network, simulate_synthetic, sweep, synthetic_operands, SimConfig,
    SyntheticLayer, SYNTHETIC_DENSITIES,
};
use dlac_core::train::{data, nets};
use dlac_core::Tensor;
use proptest::prelude::*;

#[test]
fn sparse_throughput_follows_inverse_density() {
    let cfg = SimConfig::train();
    let (a, w) = synthetic_operands(256, 256, 256, 0.2, 1).unwrap();
    let r = schedule_mmop(&cfg, &a, &w).unwrap();
    let eff = r.effective_flops_per_cycle();
    assert!(
        (eff - 5120.0).abs() <= 512.0,
        "{eff} FLOP/cycle, density {}",
        r.density()
    );
}

#[test]
fn six_layer_speedups_track_density() {
    let layers: Vec<SyntheticLayer> = SYNTHETIC_DENSITIES
        .iter()
        .map(|&density| SyntheticLayer {
            m: 256,
            n: 256,
            k: 256,
            density,
        })
        .collect();
    let reports = simulate_synthetic(&SimConfig::train(), &layers, 3).unwrap();
    let expected = [1.0, 1.8, 2.5, 3.3, 4.0, 5.0];
    for (r, e) in reports.iter().zip(expected) {
        let s = r.speedup();
        assert!((s - e).abs() <= 0.15 * e, "speedup {s} vs {e}");
    }
    assert!(reports.windows(2).all(|w| w[1].speedup() > w[0].speedup()));
}

#[test]
fn round_robin_efficiency_on_random_instances() {
    for (buffers, density, n, seed) in [(4, 0.1, 64, 1), (8, 0.3, 64, 2), (4, 0.5, 128, 3), (16, 0.1, 256, 4)] {
        let cfg = SimConfig {
            output_buffers_per_pe: buffers,
            ..SimConfig::train()
        };
        let (a, w) = synthetic_operands(64, n, 64, density, seed).unwrap();
        let r = schedule_mmop(&cfg, &a, &w).unwrap();
        assert!(
            r.efficiency() >= 0.6,
            "buffers {buffers} density {density}: {}",
            r.efficiency()
        );
        assert!(r.efficiency() <= 1.0);
    }
}

#[test]
fn single_point_sweep_matches_direct_schedule() {
    let cfg = SimConfig::infer();
    let pts = sweep(&[cfg], &[0.3], 32, 64, 48, 9).unwrap();
    let (a, w) = synthetic_operands(32, 64, 48, 0.3, 9).unwrap();
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0].report, schedule_mmop(&cfg, &a, &w).unwrap());
}

#[test]
fn sweep_dense_rows_and_halving_law() {
    let cfgs = [SimConfig::train(), SimConfig::infer()];
    let dens = [1.0, 0.4, 0.2];
    let a = sweep(&cfgs, &dens, 128, 256, 128, 1).unwrap();
    let b = sweep(&cfgs, &dens, 128, 256, 128, 2).unwrap();
    assert_eq!(a.len(), 6);
    for (p, q) in a.iter().zip(&b) {
        if p.density == 1.0 {
            assert_eq!(p.report.speedup(), 1.0);
            assert_eq!(p.report, q.report);
        } else {
            assert_ne!(p.report.nonzero_macs, q.report.nonzero_macs);
        }
    }
    for c in 0..2 {
        let s = |d: f64| {
            a.iter()
                .find(|p| p.config == c && p.density == d)
                .unwrap()
                .report
                .speedup()
        };
        let ratio = s(0.2) / s(0.4);
        assert!((ratio - 2.0).abs() < 0.2, "halving density gave x{ratio}");
    }
    assert!(sweep(&[], &dens, 1, 1, 1, 0).is_err());
    assert!(sweep(&cfgs, &[], 1, 1, 1, 0).is_err());
}

fn fc_net(in_dim: usize, out_dim: usize) -> NetworkSpec {
    NetworkSpec {
        name: "fc".into(),
        input_shape: vec![in_dim],
        layers: vec![
            LayerSpec::FullyConnected {
                in_dim,
                out_dim,
                precision: Precision::Ternary,
            },
            LayerSpec::SoftmaxXent { classes: out_dim },
        ],
    }
}

#[test]
fn single_fc_layer_matches_direct_schedule() {
    let (x, w) = synthetic_operands(16, 64, 32, 0.5, 4).unwrap();
    let cfg = SimConfig::train();
    let weights = vec![Some(LayerWeights::Ternary(w.clone())), None];
    let rep = simulate_network(&cfg, &fc_net(32, 64), &weights, &x).unwrap();
    let direct = schedule_mmop(&cfg, &x, &w).unwrap();
    let mm: Vec<_> = rep.mm_ops().collect();
    assert_eq!(mm.len(), 1);
    assert_eq!(mm[0].report, direct);
    // The softmax adds its pointwise op on top.
    assert_eq!(rep.total.nonzero_macs, direct.nonzero_macs);
    assert!(rep.total.cycles > direct.cycles);
}

#[test]
fn thresholded_layer_is_sparser_and_faster() {
    let x = Tensor::from_fn(&[64, 64], |i| ((i * 37 % 101) as f32 - 50.0) / 25.0).unwrap();
    let w1 = Tensor::from_fn(&[64, 128], |i| ((i * 53 % 97) as f32 - 48.0) / 30.0).unwrap();
    let w2 = Tensor::from_fn(&[128, 64], |i| ((i * 29 % 89) as f32 - 44.0) / 30.0).unwrap();
    let t = |w: &Tensor| ternarize(w, ThresholdPolicy::default()).unwrap().0;
    let net = NetworkSpec {
        name: "two".into(),
        input_shape: vec![64],
        layers: vec![
            LayerSpec::FullyConnected {
                in_dim: 64,
                out_dim: 128,
                precision: Precision::Ternary,
            },
            LayerSpec::ReluT { tau: 0.5 },
            LayerSpec::FullyConnected {
                in_dim: 128,
                out_dim: 64,
                precision: Precision::Ternary,
            },
            LayerSpec::SoftmaxXent { classes: 64 },
        ],
    };
    let weights = vec![
        Some(LayerWeights::Ternary(t(&w1))),
        None,
        Some(LayerWeights::Ternary(t(&w2))),
        None,
    ];
    let rep = simulate_network(&SimConfig::train(), &net, &weights, &x).unwrap();
    let mm: Vec<_> = rep.mm_ops().map(|o| o.report).collect();
    assert!(mm[1].density() < mm[0].density());
    assert!(mm[1].speedup() >= mm[0].speedup());
}

#[test]
fn simulation_does_not_change_numerics() {
    let d = data::conv8x8(8, 4, 0.3, 1).unwrap();
    let net = nets::conv8x8_net(4);
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let masters = dlac_core::train::init_weights(&net, &mut rng);
    let weights: Vec<Option<LayerWeights>> = net
        .layers
        .iter()
        .zip(masters)
        .map(|(l, m)| {
            m.map(|m| match l.precision() {
                Some(Precision::Ternary) => LayerWeights::Ternary(ternarize(&m, ThresholdPolicy::default()).unwrap().0),
                _ => LayerWeights::Full(m),
            })
        })
        .collect();
    let train = simulate_network(&SimConfig::train(), &net, &weights, &d.x).unwrap();
    assert_eq!(train.logits, forward(&net, &weights, &d.x).unwrap().logits);
    let infer = simulate_network(&SimConfig::infer(), &net, &weights, &d.x).unwrap();
    assert_eq!(infer.logits, forward(&net, &weights, &d.x.to_f16sim()).unwrap().logits);
    // Three mmOps plus pointwise ops for every non-parameterized layer.
    assert_eq!(train.mm_ops().count(), 3);
    assert_eq!(train.per_layer().len(), net.layers.len());
    for o in train.mm_ops() {
        let r = o.report;
        assert!(r.cycles >= r.bound_cycles);
        assert!(r.effective_flops_per_cycle() <= r.dense_flops as f64);
    }
}

fn mask_strategy(max: usize) -> impl Strategy<Value = (usize, usize, usize, Vec<bool>, Vec<bool>, Vec<bool>)> {
    (1..max, 1..max, 1..max).prop_flat_map(|(m, n, k)| {
        (
            Just(m),
            Just(n),
            Just(k),
            prop::collection::vec(any::<bool>(), m * k),
            prop::collection::vec(any::<bool>(), k * n),
            prop::collection::vec(any::<bool>(), m * k),
        )
    })
}

fn grid() -> impl Strategy<Value = SimConfig> {
    (1..4usize, 1..4usize, 1..5usize, 1..10usize, 0..3u64).prop_map(|(r, c, f, b, fill)| SimConfig {
        pe_rows: r,
        pe_cols: c,
        fpus_per_pe: f,
        output_buffers_per_pe: b,
        fill_overhead_cycles: fill,
        ..SimConfig::train()
    })
}

proptest! {
    #[test]
    fn work_conservation_and_cycle_floor((m, n, k, a, w, _) in mask_strategy(12), cfg in grid()) {
        let at = Tensor::from_fn(&[m, k], |i| a[i] as u8 as f32).unwrap();
        let trits: Vec<i8> = w.iter().map(|&b| b as i8).collect();
        let wt = dlac_core::TernaryTensor::from_trits(&[k, n], &trits).unwrap();
        let r = schedule_mmop(&cfg, &at, &wt).unwrap();
        prop_assert_eq!(r.nonzero_macs, pair_density(&at, &wt).unwrap().nonzero);
        prop_assert!(r.cycles >= r.bound_cycles);
        prop_assert!(r.cycles >= r.nonzero_macs.div_ceil(cfg.total_fpus()));
        prop_assert!(r.efficiency() > 0.0 || r.nonzero_macs == 0);
        prop_assert!(r.efficiency() <= 1.0);
    }

    #[test]
    fn masking_a_never_adds_cycles((m, n, k, a, w, drop) in mask_strategy(12), cfg in grid()) {
        let before = schedule_masks(&cfg, m, n, k, |i, p| a[i * k + p], |p, j| w[p * n + j]).unwrap();
        let after = schedule_masks(&cfg, m, n, k, |i, p| a[i * k + p] && !drop[i * k + p], |p, j| w[p * n + j]).unwrap();
        prop_assert!(after.cycles <= before.cycles);
        prop_assert!(after.nonzero_macs <= before.nonzero_macs);
    }

    #[test]
    fn balanced_work_meets_the_bound(rows in 1..4usize, tiles_per_pe in 1..4usize, cols in 1..4usize) {
        // Every PE gets the same number of identical dense tiles.
        let cfg = SimConfig { pe_rows: rows, pe_cols: 2, ..SimConfig::train() };
        let (m, n, k) = (cfg.pe_count() * tiles_per_pe, cfg.output_buffers_per_pe, cols * cfg.fpus_per_pe);
        let r = schedule_masks(&cfg, m, n, k, |_, _| true, |_, _| true).unwrap();
        prop_assert_eq!(r.cycles, r.bound_cycles);
        prop_assert_eq!(r.efficiency(), 1.0);
    }
}
