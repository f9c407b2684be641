use std::collections::BTreeSet;
use std::fmt;

use super::graph::{LayerNode, ModelGraph, Op};
use super::quant::{quantize_bias_value, QuantParams, Scheme};
use crate::float_bits::is_exact_pow2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Input,
    Weight,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateId,
    InvalidId,
    UnresolvedInput(String),
    InputArity { expected: usize, found: usize },
    MissingOutput,
    MissingWeights,
    UnexpectedTensor(&'static str),
    Shape(String),
    InvalidScale(ParamRole),
    UnsupportedBits(ParamRole),
    InvalidRange(ParamRole),
    ZeroPointOutOfRange(ParamRole),
    SymmetricZeroPoint(ParamRole),
    SymmetricUnsigned(ParamRole),
    SymmetricRange(ParamRole),
    Pow2Range(ParamRole),
    ScaleInconsistent(ParamRole),
    InputParamsMismatch,
    ClampParams,
    WeightDtype,
    ValueOutOfRange(&'static str),
    ForwardWeightMismatch,
    BiasMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Layer id, or the graph input id for graph-level params.
    pub layer: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {:?}", self.layer, self.kind)
    }
}

const SCALE_RTOL: f64 = 1e-9;

/// Checks every IR invariant; an empty list means the graph is well formed.
pub fn validate(graph: &ModelGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |layer: &str, kind| out.push(Violation { layer: layer.to_string(), kind });

    check_params(&graph.input_id, &graph.input_qp, ParamRole::Input, &mut push);

    let mut seen: BTreeSet<&str> = BTreeSet::new();
    seen.insert(&graph.input_id);
    for layer in &graph.layers {
        let id = layer.id.as_str();
        if !valid_id(id) {
            push(id, ViolationKind::InvalidId);
        }
        if !seen.insert(id) {
            push(id, ViolationKind::DuplicateId);
        }
        if layer.inputs.len() != layer.op.arity() {
            push(
                id,
                ViolationKind::InputArity { expected: layer.op.arity(), found: layer.inputs.len() },
            );
        }
        for input in &layer.inputs {
            // only earlier layers (or the graph input) may be referenced
            if input == id || !seen.contains(input.as_str()) {
                push(id, ViolationKind::UnresolvedInput(input.clone()));
            }
        }
        check_params(id, &layer.input_qp, ParamRole::Input, &mut push);
        check_params(id, &layer.output_qp, ParamRole::Output, &mut push);
        if let Some(first) = layer.inputs.first().and_then(|i| graph.tensor_qp(i)) {
            if *first != layer.input_qp {
                push(id, ViolationKind::InputParamsMismatch);
            }
        }
        if matches!(layer.op, Op::Clamp(_)) && layer.input_qp != layer.output_qp {
            push(id, ViolationKind::ClampParams);
        }
        check_tensors(layer, &mut push);
    }
    if graph.layer(&graph.output_id).is_none() {
        push(&graph.output_id, ViolationKind::MissingOutput);
    }
    if let Err(e) = graph.infer_shapes() {
        push(&graph.output_id, ViolationKind::Shape(e.to_string()));
    }
    out
}

/// Layer ids double as blob file-name stems.
fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn check_params(id: &str, qp: &QuantParams, role: ParamRole, push: &mut impl FnMut(&str, ViolationKind)) {
    if !(qp.scale.is_finite() && qp.scale > 0.0) {
        push(id, ViolationKind::InvalidScale(role));
        return;
    }
    if qp.bits != 8 {
        push(id, ViolationKind::UnsupportedBits(role));
        return;
    }
    if !(qp.range_min < qp.range_max && qp.range_min <= 0.0 && qp.range_max >= 0.0) {
        push(id, ViolationKind::InvalidRange(role));
    }
    if !qp.int_range().contains(qp.zero_point) {
        push(id, ViolationKind::ZeroPointOutOfRange(role));
    }
    let expected_scale = match qp.scheme {
        Scheme::Asymmetric => (qp.range_max - qp.range_min) / 255.0,
        Scheme::Symmetric | Scheme::SymmetricPow2Range => {
            if qp.zero_point != 0 {
                push(id, ViolationKind::SymmetricZeroPoint(role));
            }
            if !qp.signed {
                push(id, ViolationKind::SymmetricUnsigned(role));
            }
            if qp.range_min != -qp.range_max {
                push(id, ViolationKind::SymmetricRange(role));
            }
            if qp.scheme == Scheme::SymmetricPow2Range && !is_exact_pow2(qp.range_max) {
                push(id, ViolationKind::Pow2Range(role));
            }
            qp.range_max / 127.0
        }
    };
    if (qp.scale - expected_scale).abs() > SCALE_RTOL * expected_scale.abs() {
        push(id, ViolationKind::ScaleInconsistent(role));
    }
}

fn check_tensors(layer: &LayerNode, push: &mut impl FnMut(&str, ViolationKind)) {
    let id = layer.id.as_str();
    if !layer.op.is_weighted() {
        for (name, present) in [
            ("weights_float", layer.weights_float.is_some()),
            ("weights_quant", layer.weights_quant.is_some()),
            ("weight_qp", layer.weight_qp.is_some()),
            ("bias_float", layer.bias_float.is_some()),
            ("bias_quant", layer.bias_quant.is_some()),
        ] {
            if present {
                push(id, ViolationKind::UnexpectedTensor(name));
            }
        }
        return;
    }
    let (Some(wf), Some(wq), Some(wqp)) = (&layer.weights_float, &layer.weights_quant, &layer.weight_qp)
    else {
        push(id, ViolationKind::MissingWeights);
        return;
    };
    check_params(id, wqp, ParamRole::Weight, push);
    if wf.shape() != wq.shape() {
        push(id, ViolationKind::Shape(format!("weights_float {:?} vs weights_quant {:?}", wf.shape(), wq.shape())));
        return;
    }
    let (Some(floats), Some(ints)) = (wf.as_f32(), wq.to_i32_vec()) else {
        push(id, ViolationKind::WeightDtype);
        return;
    };
    let dtype_ok = match wq.dtype() {
        super::DType::I8 => wqp.signed,
        super::DType::U8 => !wqp.signed,
        _ => false,
    };
    if !dtype_ok {
        push(id, ViolationKind::WeightDtype);
    }
    let range = wqp.int_range();
    if ints.iter().any(|&q| !range.contains(q)) {
        push(id, ViolationKind::ValueOutOfRange("weights_quant"));
    }
    if floats.iter().zip(&ints).any(|(&f, &q)| wqp.quantize_value(f as f64) != q) {
        push(id, ViolationKind::ForwardWeightMismatch);
    }
    match (&layer.bias_float, &layer.bias_quant) {
        (None, None) => {}
        (Some(bf), Some(bq)) => {
            let bias_scale = wqp.scale * layer.input_qp.scale;
            match (bf.as_f32(), bq.data()) {
                (Some(bf), super::TensorData::I32(bq)) if bf.len() == bq.len() => {
                    if bf.iter().zip(bq).any(|(&f, &q)| quantize_bias_value(f as f64, bias_scale) != q) {
                        push(id, ViolationKind::BiasMismatch);
                    }
                }
                _ => push(id, ViolationKind::Shape("bias dtype or length".into())),
            }
        }
        (Some(_), None) => push(id, ViolationKind::Shape("bias_float without bias_quant".into())),
        (None, Some(_)) => push(id, ViolationKind::UnexpectedTensor("bias_quant without bias_float")),
    }
}
