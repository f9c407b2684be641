use std::collections::BTreeMap;

use super::multiplier::{compute_multiplier, requantize_accumulator};
use super::trace::ActivationTrace;
use crate::error::{Error, Result};
use crate::ir::{conv_geometry, ConvAttrs, IntRange, LayerNode, ModelGraph, Op, PoolAttrs, TensorBuffer, TensorData};

/// Geometry of one convolution (regular or depthwise).
struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    stride: [usize; 2],
    pad: [usize; 2],
    depthwise: bool,
}

impl ConvGeom {
    fn new(in_shape: &[usize], w_shape: &[usize], attrs: ConvAttrs, depthwise: bool) -> Self {
        let (n, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        let (kh, kw) = (w_shape[1], w_shape[2]);
        let (oh, pt) = conv_geometry(h, kh, attrs.stride[0], attrs.padding);
        let (ow, pl) = conv_geometry(w, kw, attrs.stride[1], attrs.padding);
        let oc = if depthwise { c } else { w_shape[0] };
        Self { n, h, w, c, oh, ow, oc, kh, kw, stride: attrs.stride, pad: [pt, pl], depthwise }
    }

    fn fan_in(&self) -> usize {
        self.kh * self.kw * if self.depthwise { 1 } else { self.c }
    }

    /// Calls `mac(acc, input_index, weight_index)` for every tap of every output element.
    fn apply<A: Copy>(&self, init: impl Fn(usize) -> A, mut mac: impl FnMut(&mut A, usize, usize)) -> Vec<A> {
        let mut out = Vec::with_capacity(self.n * self.oh * self.ow * self.oc);
        for b in 0..self.n {
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    for o in 0..self.oc {
                        let mut acc = init(o);
                        for ky in 0..self.kh {
                            let iy = (oy * self.stride[0] + ky) as isize - self.pad[0] as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            for kx in 0..self.kw {
                                let ix = (ox * self.stride[1] + kx) as isize - self.pad[1] as isize;
                                if ix < 0 || ix >= self.w as isize {
                                    continue;
                                }
                                let base = ((b * self.h + iy as usize) * self.w + ix as usize) * self.c;
                                if self.depthwise {
                                    mac(&mut acc, base + o, (ky * self.kw + kx) * self.c + o);
                                } else {
                                    let wbase = ((o * self.kh + ky) * self.kw + kx) * self.c;
                                    for ic in 0..self.c {
                                        mac(&mut acc, base + ic, wbase + ic);
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }
}

fn fully_connected<A: Copy>(
    in_shape: &[usize],
    w_shape: &[usize],
    init: impl Fn(usize) -> A,
    mut mac: impl FnMut(&mut A, usize, usize),
) -> Vec<A> {
    let n = in_shape[0];
    let (o_count, i_count) = (w_shape[0], w_shape[1]);
    let mut out = Vec::with_capacity(n * o_count);
    for b in 0..n {
        for o in 0..o_count {
            let mut acc = init(o);
            for i in 0..i_count {
                mac(&mut acc, b * i_count + i, o * i_count + i);
            }
            out.push(acc);
        }
    }
    out
}

/// Sums each pooling window with `add(acc, input_index)`.
fn pool_sums<A: Copy>(in_shape: &[usize], p: PoolAttrs, zero: A, mut add: impl FnMut(&mut A, usize)) -> Vec<A> {
    let (n, h, w, c) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let (oh, _) = conv_geometry(h, p.size[0], p.stride[0], crate::ir::Padding::Valid);
    let (ow, _) = conv_geometry(w, p.size[1], p.stride[1], crate::ir::Padding::Valid);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = zero;
                    for ky in 0..p.size[0] {
                        for kx in 0..p.size[1] {
                            let iy = oy * p.stride[0] + ky;
                            let ix = ox * p.stride[1] + kx;
                            add(&mut acc, ((b * h + iy) * w + ix) * c + ch);
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn check_input(graph: &ModelGraph, input: &TensorBuffer) -> Result<()> {
    if input.shape() != graph.input_shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "input shape {:?}, graph expects {:?}",
            input.shape(),
            graph.input_shape
        )));
    }
    if input.as_f32().is_none() {
        return Err(Error::ShapeMismatch(format!("input must be f32, got {:?}", input.dtype())));
    }
    Ok(())
}

fn float_vec(t: &Option<TensorBuffer>, layer: &LayerNode, what: &str) -> Result<Vec<f64>> {
    match t {
        Some(t) if t.as_f32().is_some() => Ok(t.to_f64_vec()),
        _ => Err(Error::ShapeMismatch(format!("{}: missing float {what}", layer.id))),
    }
}

/// Float reference execution over `weights_float` and `bias_float`.
pub fn run_float(graph: &ModelGraph, input: &TensorBuffer) -> Result<ActivationTrace> {
    check_input(graph, input)?;
    let shapes = graph.infer_shapes()?;
    let mut values: BTreeMap<&str, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    values.insert(&graph.input_id, (input.shape().to_vec(), input.to_f64_vec()));
    let mut trace = ActivationTrace::default();

    for (layer, out_shape) in graph.layers.iter().zip(&shapes) {
        let (in_shape, x) = &values[layer.inputs[0].as_str()];
        let out: Vec<f64> = match layer.op {
            Op::Conv2D(a) | Op::DepthwiseConv2D(a) => {
                let w = float_vec(&layer.weights_float, layer, "weights")?;
                let bias = layer.bias_float.as_ref().map(|b| b.to_f64_vec());
                let wt = layer.weights_float.as_ref().unwrap();
                let g = ConvGeom::new(in_shape, wt.shape(), a, matches!(layer.op, Op::DepthwiseConv2D(_)));
                g.apply(|o| bias.as_ref().map_or(0.0, |b| b[o]), |acc, xi, wi| *acc += x[xi] * w[wi])
            }
            Op::FullyConnected => {
                let w = float_vec(&layer.weights_float, layer, "weights")?;
                let bias = layer.bias_float.as_ref().map(|b| b.to_f64_vec());
                let wt = layer.weights_float.as_ref().unwrap();
                fully_connected(
                    in_shape,
                    wt.shape(),
                    |o| bias.as_ref().map_or(0.0, |b| b[o]),
                    |acc, xi, wi| *acc += x[xi] * w[wi],
                )
            }
            Op::Add => {
                let (_, y) = &values[layer.inputs[1].as_str()];
                x.iter().zip(y).map(|(a, b)| a + b).collect()
            }
            Op::AvgPool2D(p) => {
                let area = (p.size[0] * p.size[1]) as f64;
                pool_sums(in_shape, p, 0.0, |acc, i| *acc += x[i]).into_iter().map(|s| s / area).collect()
            }
            Op::Clamp(c) => x.iter().map(|v| v.clamp(c.min, c.max)).collect(),
        };
        trace.push(&layer.id, TensorBuffer::from_f32(out_shape.clone(), out.iter().map(|&v| v as f32).collect())?);
        values.insert(&layer.id, (out_shape.clone(), out));
    }
    Ok(trace)
}

/// Worst-case accumulator magnitude for a weighted layer.
fn accumulator_bound(layer: &LayerNode, weights: &[i32], z_w: i32, fan_in: usize, bias: &[i32]) -> i128 {
    let r = layer.input_qp.int_range();
    let z_i = layer.input_qp.zero_point as i128;
    let max_in = (z_i - r.min as i128).abs().max((r.max as i128 - z_i).abs());
    let max_w = weights.iter().map(|&q| (q as i128 - z_w as i128).abs()).max().unwrap_or(0);
    let max_b = bias.iter().map(|&b| (b as i128).abs()).max().unwrap_or(0);
    max_w * max_in * fan_in as i128 + max_b
}

fn int_output(shape: Vec<usize>, signed: bool, vals: Vec<i32>) -> Result<TensorBuffer> {
    let data = if signed {
        TensorData::I8(vals.into_iter().map(|v| v as i8).collect())
    } else {
        TensorData::U8(vals.into_iter().map(|v| v as u8).collect())
    };
    TensorBuffer::new(shape, data)
}

/// Bit-exact integer execution: 32-bit accumulation of zero-point-centred
/// products plus quantized bias, then multiplier/shift rescale.
pub fn run_quant(graph: &ModelGraph, input: &TensorBuffer) -> Result<ActivationTrace> {
    check_input(graph, input)?;
    let shapes = graph.infer_shapes()?;
    let in_qp = graph.input_qp;
    let x0: Vec<i32> = input.as_f32().unwrap().iter().map(|&v| in_qp.quantize_value(v as f64)).collect();
    let mut values: BTreeMap<&str, (Vec<usize>, Vec<i32>)> = BTreeMap::new();
    values.insert(&graph.input_id, (input.shape().to_vec(), x0));
    let mut trace = ActivationTrace::default();

    for (layer, out_shape) in graph.layers.iter().zip(&shapes) {
        let (in_shape, x) = &values[layer.inputs[0].as_str()];
        let oqp = layer.output_qp;
        let out_range = oqp.int_range();
        let out: Vec<i32> = match layer.op {
            Op::Conv2D(_) | Op::DepthwiseConv2D(_) | Op::FullyConnected => {
                let (Some(wt), Some(wqp)) = (&layer.weights_quant, &layer.weight_qp) else {
                    return Err(Error::ShapeMismatch(format!("{}: missing quantized weights", layer.id)));
                };
                let w = wt.to_i32_vec().ok_or_else(|| {
                    Error::ShapeMismatch(format!("{}: weights_quant must be integer", layer.id))
                })?;
                let bias = match &layer.bias_quant {
                    Some(b) => b.to_i32_vec().ok_or_else(|| {
                        Error::ShapeMismatch(format!("{}: bias_quant must be integer", layer.id))
                    })?,
                    None => vec![0; *out_shape.last().unwrap()],
                };
                let z_w = wqp.zero_point;
                let z_i = layer.input_qp.zero_point;
                let m = compute_multiplier(wqp.scale, layer.input_qp.scale, oqp.scale)?;
                let mac = |acc: &mut i32, xi: usize, wi: usize| *acc += (w[wi] - z_w) * (x[xi] - z_i);
                let accs = match layer.op {
                    Op::Conv2D(a) | Op::DepthwiseConv2D(a) => {
                        let g = ConvGeom::new(in_shape, wt.shape(), a, matches!(layer.op, Op::DepthwiseConv2D(_)));
                        preflight(layer, &w, z_w, g.fan_in(), &bias)?;
                        g.apply(|o| bias[o], mac)
                    }
                    _ => {
                        preflight(layer, &w, z_w, wt.shape()[1], &bias)?;
                        fully_connected(in_shape, wt.shape(), |o| bias[o], mac)
                    }
                };
                accs.into_iter().map(|acc| requantize_accumulator(acc, &m, oqp.zero_point, out_range)).collect()
            }
            Op::Add => {
                let (_, y) = &values[layer.inputs[1].as_str()];
                let qa = graph.tensor_qp(&layer.inputs[0]).unwrap();
                let qb = graph.tensor_qp(&layer.inputs[1]).unwrap();
                let ma = compute_multiplier(1.0, qa.scale, oqp.scale)?;
                let mb = compute_multiplier(1.0, qb.scale, oqp.scale)?;
                x.iter()
                    .zip(y)
                    .map(|(&a, &b)| {
                        let ra = requantize_accumulator(a - qa.zero_point, &ma, 0, IntRange::I32) as i64;
                        let rb = requantize_accumulator(b - qb.zero_point, &mb, 0, IntRange::I32) as i64;
                        out_range.clamp(ra + rb + oqp.zero_point as i64)
                    })
                    .collect()
            }
            Op::AvgPool2D(p) => {
                let area = (p.size[0] * p.size[1]) as f64;
                let z_i = layer.input_qp.zero_point;
                let m = compute_multiplier(1.0 / area, layer.input_qp.scale, oqp.scale)?;
                pool_sums(in_shape, p, 0i32, |acc, i| *acc += x[i] - z_i)
                    .into_iter()
                    .map(|s| requantize_accumulator(s, &m, oqp.zero_point, out_range))
                    .collect()
            }
            Op::Clamp(c) => {
                let lo = oqp.quantize_value(c.min);
                let hi = oqp.quantize_value(c.max);
                x.iter().map(|&v| v.clamp(lo, hi)).collect()
            }
        };
        trace.push(&layer.id, int_output(out_shape.clone(), oqp.signed, out.clone())?);
        values.insert(&layer.id, (out_shape.clone(), out));
    }
    Ok(trace)
}

fn preflight(layer: &LayerNode, w: &[i32], z_w: i32, fan_in: usize, bias: &[i32]) -> Result<()> {
    let bound = accumulator_bound(layer, w, z_w, fan_in, bias);
    if bound > i32::MAX as i128 {
        return Err(Error::AccumulatorOverflow { layer: layer.id.clone(), bound });
    }
    Ok(())
}
