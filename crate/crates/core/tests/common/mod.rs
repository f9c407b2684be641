#![allow(dead_code)]

//! Test-only oracles and builders, written without reusing the library's
//! kernels or rescale code.

use std::collections::BTreeMap;

use requant::ir::{
    quantize_bias, quantize_tensor, symmetric_from_scale, ConvAttrs, LayerNode, ModelGraph, Op, Padding,
    QuantParams, TensorBuffer,
};

/// Exact `round(num / 2^s)` with ties away from zero.
fn div_pow2_half_away(num: i128, s: u32) -> i128 {
    if s == 0 {
        return num;
    }
    if s >= 127 {
        return 0;
    }
    let d = 1i128 << s;
    let q = num.abs() / d;
    let r = num.abs() % d;
    let q = if 2 * r >= d { q + 1 } else { q };
    if num < 0 { -q } else { q }
}

/// `round(acc * m)` the way a 31-bit fixed-point datapath computes it; values
/// within one ulp of a power of two use that power exactly.
pub fn oracle_rescale(acc: i64, m: f64) -> i128 {
    let mut f = m;
    let mut e = 0i32;
    while f >= 1.0 {
        f /= 2.0;
        e += 1;
    }
    while f < 0.5 {
        f *= 2.0;
        e -= 1;
    }
    let (mant, exp) = if f == 0.5 || f.next_down() == 0.5 {
        (1i128, e - 1)
    } else if f.next_up() == 1.0 {
        (1i128, e)
    } else {
        ((f * 2f64.powi(31)).round() as i128, e - 31)
    };
    let num = acc as i128 * mant;
    if exp >= 0 {
        num.saturating_mul(1i128 << exp.min(90))
    } else {
        div_pow2_half_away(num, (-exp) as u32)
    }
}

fn qrange(qp: &QuantParams) -> (i64, i64) {
    let r = qp.int_range();
    (r.min as i64, r.max as i64)
}

fn clamp128(v: i128, lo: i64, hi: i64) -> i64 {
    v.clamp(lo as i128, hi as i128) as i64
}

fn oracle_quantize(qp: &QuantParams, x: f64) -> i64 {
    let (lo, hi) = qrange(qp);
    let q = (x / qp.scale).round() + qp.zero_point as f64;
    q.clamp(lo as f64, hi as f64) as i64
}

fn same_pad(size: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = size.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(size);
    (out, total / 2)
}

fn geometry(size: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => same_pad(size, k, stride),
        Padding::Valid => ((size - k) / stride + 1, 0),
    }
}

/// NHWC tensor with its shape.
#[derive(Clone, Debug)]
pub struct Tensor<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    fn at(&self, b: usize, y: usize, x: usize, c: usize) -> T {
        let [_, h, w, ch] = self.shape;
        self.data[((b * h + y) * w + x) * ch + c]
    }
}

/// Generic scalar loops for every op. `mac` folds `(acc, x, w)`; `fin`
/// turns an accumulator plus bias into an output value.
fn conv_loops<X: Copy, A: Copy>(
    x: &Tensor<X>,
    wshape: &[usize],
    attrs: ConvAttrs,
    depthwise: bool,
    init: impl Fn(usize) -> A,
    mut mac: impl FnMut(A, X, usize) -> A,
) -> Tensor<A> {
    let [n, h, w, c] = x.shape;
    let (kh, kw) = (wshape[1], wshape[2]);
    let (oh, pt) = geometry(h, kh, attrs.stride[0], attrs.padding);
    let (ow, pl) = geometry(w, kw, attrs.stride[1], attrs.padding);
    let oc = if depthwise { c } else { wshape[0] };
    let mut data = Vec::new();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..oc {
                    let mut acc = init(o);
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * attrs.stride[0] + ky) as i64 - pt as i64;
                            let ix = (ox * attrs.stride[1] + kx) as i64 - pl as i64;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            if depthwise {
                                let widx = (ky * kw + kx) * c + o;
                                acc = mac(acc, x.at(b, iy as usize, ix as usize, o), widx);
                            } else {
                                for ci in 0..c {
                                    let widx = ((o * kh + ky) * kw + kx) * c + ci;
                                    acc = mac(acc, x.at(b, iy as usize, ix as usize, ci), widx);
                                }
                            }
                        }
                    }
                    data.push(acc);
                }
            }
        }
    }
    Tensor { shape: [n, oh, ow, oc], data }
}

fn fc_loops<X: Copy, A: Copy>(
    x: &Tensor<X>,
    wshape: &[usize],
    init: impl Fn(usize) -> A,
    mut mac: impl FnMut(A, X, usize) -> A,
) -> Tensor<A> {
    let n = x.shape[0];
    let per = x.data.len() / n;
    let (o, i) = (wshape[0], wshape[1]);
    assert_eq!(per, i);
    let mut data = Vec::new();
    for b in 0..n {
        for oo in 0..o {
            let mut acc = init(oo);
            for ii in 0..i {
                acc = mac(acc, x.data[b * per + ii], oo * i + ii);
            }
            data.push(acc);
        }
    }
    Tensor { shape: [n, 1, 1, o], data }
}

fn pool_loops<X: Copy, A: Copy>(x: &Tensor<X>, size: [usize; 2], stride: [usize; 2], zero: A, add: impl Fn(A, X) -> A) -> Tensor<A> {
    let [n, h, w, c] = x.shape;
    let oh = (h - size[0]) / stride[0] + 1;
    let ow = (w - size[1]) / stride[1] + 1;
    let mut data = Vec::new();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = zero;
                    for ky in 0..size[0] {
                        for kx in 0..size[1] {
                            acc = add(acc, x.at(b, oy * stride[0] + ky, ox * stride[1] + kx, ch));
                        }
                    }
                    data.push(acc);
                }
            }
        }
    }
    Tensor { shape: [n, oh, ow, c], data }
}

fn shape4(s: &[usize]) -> [usize; 4] {
    [s[0], s[1], s[2], s[3]]
}

/// Integer reference: returns every layer's integer output, keyed by id.
pub fn int_oracle(graph: &ModelGraph, input: &TensorBuffer) -> BTreeMap<String, Vec<i64>> {
    let mut vals: BTreeMap<String, Tensor<i64>> = BTreeMap::new();
    let xin: Vec<i64> = input.to_f64_vec().iter().map(|&v| oracle_quantize(&graph.input_qp, v as f32 as f64)).collect();
    vals.insert(graph.input_id.clone(), Tensor { shape: shape4(input.shape()), data: xin });
    let qp_of = |vals: &BTreeMap<String, Tensor<i64>>, id: &str| -> QuantParams {
        let _ = vals;
        if id == graph.input_id { graph.input_qp } else { graph.layers.iter().find(|l| l.id == id).unwrap().output_qp }
    };
    for l in &graph.layers {
        let x = vals[&l.inputs[0]].clone();
        let oqp = l.output_qp;
        let (lo, hi) = qrange(&oqp);
        let zo = oqp.zero_point as i64;
        let out: Tensor<i64> = match l.op {
            Op::Conv2D(_) | Op::DepthwiseConv2D(_) | Op::FullyConnected => {
                let wq = l.weights_quant.as_ref().unwrap();
                let w: Vec<i64> = wq.to_f64_vec().iter().map(|&v| v as i64).collect();
                let wqp = l.weight_qp.unwrap();
                let zw = wqp.zero_point as i64;
                let zi = l.input_qp.zero_point as i64;
                let bias: Vec<i64> = match &l.bias_quant {
                    Some(b) => b.to_f64_vec().iter().map(|&v| v as i64).collect(),
                    None => vec![0; 4096],
                };
                let m = wqp.scale * l.input_qp.scale / oqp.scale;
                let mac = |acc: i64, xv: i64, wi: usize| acc + (w[wi] - zw) * (xv - zi);
                let acc = match l.op {
                    Op::Conv2D(a) => conv_loops(&x, wq.shape(), a, false, |o| bias[o], mac),
                    Op::DepthwiseConv2D(a) => conv_loops(&x, wq.shape(), a, true, |o| bias[o], mac),
                    _ => fc_loops(&x, wq.shape(), |o| bias[o], mac),
                };
                for &v in &acc.data {
                    assert!(v.abs() <= i32::MAX as i64, "accumulator leaves 32 bits");
                }
                Tensor { shape: acc.shape, data: acc.data.iter().map(|&v| clamp128(oracle_rescale(v, m) + zo as i128, lo, hi)).collect() }
            }
            Op::Add => {
                let y = &vals[&l.inputs[1]];
                let qa = qp_of(&vals, &l.inputs[0]);
                let qb = qp_of(&vals, &l.inputs[1]);
                let ma = 1.0 * qa.scale / oqp.scale;
                let mb = 1.0 * qb.scale / oqp.scale;
                let data = x
                    .data
                    .iter()
                    .zip(&y.data)
                    .map(|(&a, &b)| {
                        let ra = clamp128(oracle_rescale(a - qa.zero_point as i64, ma), i32::MIN as i64, i32::MAX as i64);
                        let rb = clamp128(oracle_rescale(b - qb.zero_point as i64, mb), i32::MIN as i64, i32::MAX as i64);
                        (ra + rb + zo).clamp(lo, hi)
                    })
                    .collect();
                Tensor { shape: x.shape, data }
            }
            Op::AvgPool2D(p) => {
                let zi = l.input_qp.zero_point as i64;
                let area = (p.size[0] * p.size[1]) as f64;
                let m = (1.0 / area) * l.input_qp.scale / oqp.scale;
                let s = pool_loops(&x, p.size, p.stride, 0i64, |acc, v| acc + v - zi);
                Tensor { shape: s.shape, data: s.data.iter().map(|&v| clamp128(oracle_rescale(v, m) + zo as i128, lo, hi)).collect() }
            }
            Op::Clamp(c) => {
                let (a, b) = (oracle_quantize(&oqp, c.min), oracle_quantize(&oqp, c.max));
                Tensor { shape: x.shape, data: x.data.iter().map(|&v| v.clamp(a, b)).collect() }
            }
        };
        vals.insert(l.id.clone(), out);
    }
    graph.layers.iter().map(|l| (l.id.clone(), vals[&l.id].data.clone())).collect()
}

/// Float reference in f64 scalar loops.
pub fn float_oracle(graph: &ModelGraph, input: &TensorBuffer) -> BTreeMap<String, Vec<f64>> {
    let mut vals: BTreeMap<String, Tensor<f64>> = BTreeMap::new();
    vals.insert(graph.input_id.clone(), Tensor { shape: shape4(input.shape()), data: input.to_f64_vec() });
    for l in &graph.layers {
        let x = vals[&l.inputs[0]].clone();
        let out = match l.op {
            Op::Conv2D(_) | Op::DepthwiseConv2D(_) | Op::FullyConnected => {
                let wt = l.weights_float.as_ref().unwrap();
                let w = wt.to_f64_vec();
                let b = l.bias_float.as_ref().map(|b| b.to_f64_vec()).unwrap_or_else(|| vec![0.0; 4096]);
                let mac = |acc: f64, xv: f64, wi: usize| acc + xv * w[wi];
                match l.op {
                    Op::Conv2D(a) => conv_loops(&x, wt.shape(), a, false, |o| b[o], mac),
                    Op::DepthwiseConv2D(a) => conv_loops(&x, wt.shape(), a, true, |o| b[o], mac),
                    _ => fc_loops(&x, wt.shape(), |o| b[o], mac),
                }
            }
            Op::Add => {
                let y = &vals[&l.inputs[1]];
                Tensor { shape: x.shape, data: x.data.iter().zip(&y.data).map(|(a, b)| a + b).collect() }
            }
            Op::AvgPool2D(p) => {
                let area = (p.size[0] * p.size[1]) as f64;
                let s = pool_loops(&x, p.size, p.stride, 0.0, |a, v| a + v);
                Tensor { shape: s.shape, data: s.data.iter().map(|v| v / area).collect() }
            }
            Op::Clamp(c) => Tensor { shape: x.shape, data: x.data.iter().map(|v| v.clamp(c.min, c.max)).collect() },
        };
        // the interpreter hands f32 activations to the next layer
        let out = Tensor { shape: out.shape, data: out.data.iter().map(|&v| v as f32 as f64).collect() };
        vals.insert(l.id.clone(), out);
    }
    graph.layers.iter().map(|l| (l.id.clone(), vals[&l.id].data.clone())).collect()
}

/// Single symmetric conv layer with the given scales; weights and bias
/// quantized from `wf` and `bf`.
pub fn symmetric_conv(wf: TensorBuffer, bf: Vec<f32>, s_w: f64, s_i: f64, s_o: f64, hw: usize) -> ModelGraph {
    let cin = wf.shape()[3];
    let wqp = symmetric_from_scale(s_w);
    let iqp = symmetric_from_scale(s_i);
    let bias = TensorBuffer::from_f32(vec![bf.len()], bf).unwrap();
    let layer = LayerNode {
        id: "conv".into(),
        op: Op::Conv2D(ConvAttrs { stride: [1, 1], padding: Padding::Same }),
        inputs: vec!["input".into()],
        weights_quant: Some(quantize_tensor(&wf, &wqp).unwrap()),
        weights_float: Some(wf),
        weight_qp: Some(wqp),
        bias_quant: Some(quantize_bias(&bias, s_w * s_i).unwrap()),
        bias_float: Some(bias),
        input_qp: iqp,
        output_qp: symmetric_from_scale(s_o),
    };
    ModelGraph {
        input_id: "input".into(),
        input_shape: vec![1, hw, hw, cin],
        input_qp: iqp,
        layers: vec![layer],
        output_id: "conv".into(),
        metadata: BTreeMap::new(),
    }
}

/// Every file under `dir`, relative path to bytes.
pub fn read_tree(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
