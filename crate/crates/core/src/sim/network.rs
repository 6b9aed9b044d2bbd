use alloc::vec::Vec;

use super::{schedule_dense, schedule_ptwise, CycleReport, Mode, SimConfig};
use crate::error::Result;
use crate::graph::{forward, LayerWeights, NetworkSpec, TraceRecord};
use crate::tensor::Tensor;

/// Timing of one trace record.
#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub layer: usize,
    pub report: CycleReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkReport {
    /// In trace order.
    pub ops: Vec<OpReport>,
    pub total: CycleReport,
    /// Logits of the forward pass that supplied the operands.
    pub logits: Tensor,
}

impl NetworkReport {
    /// Totals of each layer that issued at least one op, in layer order.
    pub fn per_layer(&self) -> Vec<(usize, CycleReport)> {
        let mut layers: Vec<usize> = self.ops.iter().map(|o| o.layer).collect();
        layers.dedup();
        layers
            .into_iter()
            .map(|l| {
                let t = CycleReport::total(self.ops.iter().filter(|o| o.layer == l).map(|o| &o.report));
                (l, t)
            })
            .collect()
    }

    /// Reports of the mmOps only.
    pub fn mm_ops(&self) -> impl Iterator<Item = &OpReport> {
        self.ops.iter().filter(|o| o.report.op == super::OpKind::Mm)
    }
}

/// Runs the forward pass on `x` and times every traced op with the actual
/// operand zeros. In infer mode the input is first rounded to binary16,
/// which makes the forward pass run in fp16 simulation.
pub fn simulate_network(
    cfg: &SimConfig,
    net: &NetworkSpec,
    weights: &[Option<LayerWeights>],
    x: &Tensor,
) -> Result<NetworkReport> {
    cfg.validate()?;
    let x = match cfg.mode {
        Mode::Train => x.clone(),
        Mode::Infer => x.to_f16sim(),
    };
    let pass = forward(net, weights, &x)?;
    let ops = pass
        .trace
        .records
        .iter()
        .map(|rec| {
            let report = match rec {
                TraceRecord::Mm(mm) => {
                    let (a, b) = pass.mm_operands(weights, mm)?;
                    schedule_dense(cfg, &a, &b)?
                }
                TraceRecord::Pw(pw) => schedule_ptwise(cfg, pw.kind, pw.n_elems as u64)?,
            };
            Ok(OpReport {
                layer: rec.layer(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = CycleReport::total(ops.iter().map(|o| &o.report));
    Ok(NetworkReport {
        ops,
        total,
        logits: pass.logits,
    })
}
