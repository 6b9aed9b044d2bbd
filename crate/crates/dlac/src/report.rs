//! CSV outputs. Every file starts with its fixed header line.

use dlac_core::graph::{NetworkSpec, OpTrace, Operand, TraceRecord};
use dlac_core::sim::{CycleReport, NetworkReport, SimConfig, SweepPoint};
use dlac_core::train::TrainLog;

pub const TRAIN_LOG_HEADER: &[&str] = &[
    "epoch",
    "train_error",
    "lr",
    "loss_task",
    "loss_l1",
    "layer",
    "fwd_density",
    "bwd_density",
];

pub const SIM_REPORT_HEADER: &[&str] = &[
    "layer",
    "op",
    "M",
    "N",
    "K",
    "n_elems",
    "density",
    "nonzero_macs",
    "cycles",
    "dense_flops",
    "eff_flops_per_cycle",
    "dense_baseline_cycles",
    "speedup",
    "imbalance",
    "throughput_gflops",
];

pub const SWEEP_HEADER: &[&str] = &[
    "config",
    "mode",
    "pe_rows",
    "pe_cols",
    "fpus_per_pe",
    "output_buffers_per_pe",
    "density",
    "pair_density",
    "M",
    "N",
    "K",
    "nonzero_macs",
    "cycles",
    "eff_flops_per_cycle",
    "dense_baseline_cycles",
    "speedup",
    "imbalance",
    "efficiency",
];

pub const TRACE_HEADER: &[&str] = &[
    "record",
    "layer",
    "layer_type",
    "op",
    "M",
    "N",
    "K",
    "n_elems",
    "lhs",
    "rhs",
];

/// Per-layer speedup of the synthetic network.
pub const SYNTHETIC_HEADER: &[&str] = &[
    "layer",
    "density",
    "pair_density",
    "cycles",
    "dense_baseline_cycles",
    "speedup",
    "eff_flops_per_cycle",
    "throughput_gflops",
];

fn writer(header: &[&str]) -> csv::Writer<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("write to memory");
    w
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("flush to memory")
}

fn row(w: &mut csv::Writer<Vec<u8>>, fields: Vec<String>) {
    w.write_record(&fields).expect("write to memory");
}

pub fn train_log_csv(log: &TrainLog) -> Vec<u8> {
    let mut w = writer(TRAIN_LOG_HEADER);
    for e in &log.epochs {
        for l in &e.layers {
            row(
                &mut w,
                vec![
                    e.epoch.to_string(),
                    e.train_error.to_string(),
                    e.lr.to_string(),
                    e.loss_task.to_string(),
                    e.loss_l1.to_string(),
                    l.layer.to_string(),
                    l.forward.density.to_string(),
                    l.backward.density.to_string(),
                ],
            );
        }
    }
    finish(w)
}

fn gflops(r: &CycleReport) -> f64 {
    r.throughput_flops_per_sec() / 1e9
}

fn report_fields(layer: String, r: &CycleReport) -> Vec<String> {
    vec![
        layer,
        r.op.name().to_string(),
        r.m.to_string(),
        r.n.to_string(),
        r.k.to_string(),
        r.n_elems.to_string(),
        r.density().to_string(),
        r.nonzero_macs.to_string(),
        r.cycles.to_string(),
        r.dense_flops.to_string(),
        r.effective_flops_per_cycle().to_string(),
        r.dense_baseline_cycles.to_string(),
        r.speedup().to_string(),
        r.imbalance().to_string(),
        gflops(r).to_string(),
    ]
}

/// One row per traced op, then a `total` row.
pub fn sim_report_csv(rep: &NetworkReport) -> Vec<u8> {
    let mut w = writer(SIM_REPORT_HEADER);
    for o in &rep.ops {
        row(&mut w, report_fields(o.layer.to_string(), &o.report));
    }
    row(&mut w, report_fields("total".into(), &rep.total));
    finish(w)
}

pub fn sweep_csv(configs: &[SimConfig], points: &[SweepPoint]) -> Vec<u8> {
    let mut w = writer(SWEEP_HEADER);
    for p in points {
        let c = &configs[p.config];
        let r = &p.report;
        row(
            &mut w,
            vec![
                p.config.to_string(),
                c.mode.name().to_string(),
                c.pe_rows.to_string(),
                c.pe_cols.to_string(),
                c.fpus_per_pe.to_string(),
                c.output_buffers_per_pe.to_string(),
                p.density.to_string(),
                r.density().to_string(),
                r.m.to_string(),
                r.n.to_string(),
                r.k.to_string(),
                r.nonzero_macs.to_string(),
                r.cycles.to_string(),
                r.effective_flops_per_cycle().to_string(),
                r.dense_baseline_cycles.to_string(),
                r.speedup().to_string(),
                r.imbalance().to_string(),
                r.efficiency().to_string(),
            ],
        );
    }
    finish(w)
}

fn operand(o: Operand) -> String {
    match o {
        Operand::Activation(i) => format!("act{i}"),
        Operand::Im2col(i) => format!("im2col{i}"),
        Operand::Weights(i) => format!("w{i}"),
    }
}

pub fn trace_csv(net: &NetworkSpec, trace: &OpTrace) -> Vec<u8> {
    let mut w = writer(TRACE_HEADER);
    for (i, r) in trace.records.iter().enumerate() {
        let kind = net.layers[r.layer()].kind().to_string();
        let fields = match r {
            TraceRecord::Mm(m) => vec![
                i.to_string(),
                m.layer.to_string(),
                kind,
                "mm".into(),
                m.m.to_string(),
                m.n.to_string(),
                m.k.to_string(),
                (m.m * m.n).to_string(),
                operand(m.lhs),
                operand(m.rhs),
            ],
            TraceRecord::Pw(p) => vec![
                i.to_string(),
                p.layer.to_string(),
                kind,
                p.kind.name().into(),
                String::new(),
                String::new(),
                String::new(),
                p.n_elems.to_string(),
                String::new(),
                String::new(),
            ],
        };
        row(&mut w, fields);
    }
    finish(w)
}

pub fn synthetic_csv(densities: &[f64], reports: &[CycleReport]) -> Vec<u8> {
    let mut w = writer(SYNTHETIC_HEADER);
    for (i, (d, r)) in densities.iter().zip(reports).enumerate() {
        row(
            &mut w,
            vec![
                i.to_string(),
                d.to_string(),
                r.density().to_string(),
                r.cycles.to_string(),
                r.dense_baseline_cycles.to_string(),
                r.speedup().to_string(),
                r.effective_flops_per_cycle().to_string(),
                gflops(r).to_string(),
            ],
        );
    }
    finish(w)
}
