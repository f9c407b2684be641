use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::quant::QuantParams;
use super::tensor::TensorBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvAttrs {
    pub stride: [usize; 2],
    pub padding: Padding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolAttrs {
    pub size: [usize; 2],
    pub stride: [usize; 2],
}

/// Real-valued clamp bounds (ReLU6 is `0..6`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampAttrs {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "attrs")]
pub enum Op {
    Conv2D(ConvAttrs),
    /// Depth multiplier 1; weights `[1, KH, KW, C]`.
    DepthwiseConv2D(ConvAttrs),
    FullyConnected,
    Add,
    AvgPool2D(PoolAttrs),
    Clamp(ClampAttrs),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Conv2D(_) => "Conv2D",
            Op::DepthwiseConv2D(_) => "DepthwiseConv2D",
            Op::FullyConnected => "FullyConnected",
            Op::Add => "Add",
            Op::AvgPool2D(_) => "AvgPool2D",
            Op::Clamp(_) => "Clamp",
        }
    }

    pub fn is_weighted(&self) -> bool {
        matches!(self, Op::Conv2D(_) | Op::DepthwiseConv2D(_) | Op::FullyConnected)
    }

    pub fn arity(&self) -> usize {
        if matches!(self, Op::Add) {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: String,
    pub op: Op,
    pub inputs: Vec<String>,
    /// Float weights before the fake-quant node ("backward" weights).
    pub weights_float: Option<TensorBuffer>,
    /// Integer weights the runtime executes ("forward" weights).
    pub weights_quant: Option<TensorBuffer>,
    pub weight_qp: Option<QuantParams>,
    pub bias_float: Option<TensorBuffer>,
    /// Bias at scale `S_w * S_i`, 32-bit.
    pub bias_quant: Option<TensorBuffer>,
    pub input_qp: QuantParams,
    pub output_qp: QuantParams,
}

impl LayerNode {
    pub fn bias_scale(&self) -> Option<f64> {
        self.weight_qp.map(|w| w.scale * self.input_qp.scale)
    }
}

/// Topologically ordered layer list with a single input and output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub input_id: String,
    /// NHWC shape of the graph input.
    pub input_shape: Vec<usize>,
    pub input_qp: QuantParams,
    pub layers: Vec<LayerNode>,
    pub output_id: String,
    pub metadata: BTreeMap<String, String>,
}

impl ModelGraph {
    pub fn layer(&self, id: &str) -> Option<&LayerNode> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn layer_index(&self, id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == id)
    }

    /// Quantization params of a tensor named by a layer id or the graph input id.
    pub fn tensor_qp(&self, id: &str) -> Option<&QuantParams> {
        if id == self.input_id {
            Some(&self.input_qp)
        } else {
            self.layer(id).map(|l| &l.output_qp)
        }
    }

    /// Output shape of every layer, in layer order.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        shapes.insert(&self.input_id, self.input_shape.clone());
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let ins: Vec<&Vec<usize>> = layer
                .inputs
                .iter()
                .map(|i| {
                    shapes.get(i.as_str()).ok_or_else(|| {
                        Error::ShapeMismatch(format!("{}: unresolved input {i}", layer.id))
                    })
                })
                .collect::<Result<_>>()?;
            if ins.len() != layer.op.arity() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: expected {} inputs, found {}",
                    layer.id,
                    layer.op.arity(),
                    ins.len()
                )));
            }
            let s = output_shape(layer, &ins)?;
            shapes.insert(&layer.id, s.clone());
            out.push(s);
        }
        Ok(out)
    }
}

fn err(layer: &LayerNode, msg: impl std::fmt::Display) -> Error {
    Error::ShapeMismatch(format!("{}: {msg}", layer.id))
}

fn nhwc(layer: &LayerNode, s: &[usize]) -> Result<[usize; 4]> {
    s.try_into().map_err(|_| err(layer, format!("expected NHWC input, got {s:?}")))
}

/// Output spatial size and leading pad for one dimension.
pub fn conv_geometry(input: usize, kernel: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => {
            if input < kernel {
                (0, 0)
            } else {
                ((input - kernel) / stride + 1, 0)
            }
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            (out, total / 2)
        }
    }
}

fn output_shape(layer: &LayerNode, ins: &[&Vec<usize>]) -> Result<Vec<usize>> {
    let weight_shape = || {
        layer
            .weights_float
            .as_ref()
            .or(layer.weights_quant.as_ref())
            .map(|w| w.shape().to_vec())
            .ok_or_else(|| err(layer, "missing weights"))
    };
    let check_bias = |channels: usize| -> Result<()> {
        for b in [&layer.bias_float, &layer.bias_quant].into_iter().flatten() {
            if b.shape() != [channels] {
                return Err(err(layer, format!("bias shape {:?}, expected [{channels}]", b.shape())));
            }
        }
        Ok(())
    };
    match layer.op {
        Op::Conv2D(a) | Op::DepthwiseConv2D(a) => {
            let [n, h, w, c] = nhwc(layer, ins[0])?;
            let ws = weight_shape()?;
            let [o, kh, kw, wi]: [usize; 4] =
                ws.as_slice().try_into().map_err(|_| err(layer, format!("weight shape {ws:?}")))?;
            let out_c = if matches!(layer.op, Op::Conv2D(_)) {
                if wi != c {
                    return Err(err(layer, format!("weight in-channels {wi} != input channels {c}")));
                }
                o
            } else {
                if o != 1 || wi != c {
                    return Err(err(layer, format!("depthwise weight {ws:?} for {c} channels")));
                }
                c
            };
            if a.stride.contains(&0) {
                return Err(err(layer, "zero stride"));
            }
            let (oh, _) = conv_geometry(h, kh, a.stride[0], a.padding);
            let (ow, _) = conv_geometry(w, kw, a.stride[1], a.padding);
            if oh == 0 || ow == 0 {
                return Err(err(layer, "kernel larger than input"));
            }
            check_bias(out_c)?;
            Ok(vec![n, oh, ow, out_c])
        }
        Op::FullyConnected => {
            let n = ins[0][0];
            let flat: usize = ins[0][1..].iter().product();
            let ws = weight_shape()?;
            let [o, i]: [usize; 2] =
                ws.as_slice().try_into().map_err(|_| err(layer, format!("weight shape {ws:?}")))?;
            if i != flat {
                return Err(err(layer, format!("weight in-features {i} != flattened input {flat}")));
            }
            check_bias(o)?;
            Ok(vec![n, 1, 1, o])
        }
        Op::Add => {
            if ins[0] != ins[1] {
                return Err(err(layer, format!("operand shapes {:?} and {:?}", ins[0], ins[1])));
            }
            Ok(ins[0].clone())
        }
        Op::AvgPool2D(p) => {
            let [n, h, w, c] = nhwc(layer, ins[0])?;
            if p.stride.contains(&0) || p.size.contains(&0) {
                return Err(err(layer, "zero pool size or stride"));
            }
            let (oh, _) = conv_geometry(h, p.size[0], p.stride[0], Padding::Valid);
            let (ow, _) = conv_geometry(w, p.size[1], p.stride[1], Padding::Valid);
            if oh == 0 || ow == 0 {
                return Err(err(layer, "pool window larger than input"));
            }
            Ok(vec![n, oh, ow, c])
        }
        Op::Clamp(_) => Ok(ins[0].clone()),
    }
}
