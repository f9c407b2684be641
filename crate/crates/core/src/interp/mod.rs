//! Reference interpreter: float semantics and bit-exact integer semantics.

mod exec;
mod multiplier;
mod trace;

pub use exec::{run_float, run_quant};
pub use multiplier::{
    compute_multiplier, decompose_pow2, requantize_accumulator, requantize_by_shift, requantize_fixed_point,
    Multiplier,
};
pub use trace::{load_trace, save_trace, ActivationTrace};

use crate::error::Result;
use crate::ir::ModelGraph;

/// Runtime multiplier of every weighted layer, in layer order.
pub fn layer_multipliers(graph: &ModelGraph) -> Result<Vec<(String, Multiplier)>> {
    graph
        .layers
        .iter()
        .filter(|l| l.op.is_weighted())
        .filter_map(|l| l.weight_qp.map(|w| (l, w)))
        .map(|(l, w)| Ok((l.id.clone(), compute_multiplier(w.scale, l.input_qp.scale, l.output_qp.scale)?)))
        .collect()
}

/// Which interpreter path produced (or should produce) a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecPath {
    Float,
    Quant,
}

pub fn run(graph: &ModelGraph, input: &crate::ir::TensorBuffer, path: ExecPath) -> Result<ActivationTrace> {
    match path {
        ExecPath::Float => run_float(graph, input),
        ExecPath::Quant => run_quant(graph, input),
    }
}

