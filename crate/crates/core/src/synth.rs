//! Seeded synthetic models and calibration data.
//!
//! Fixtures mimic a QAT export: float weights with a few heavy-tailed
//! outliers, per-tensor asymmetric 8-bit weights, and activation ranges taken
//! from float min/max over a calibration set.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::calibration::CalibrationSet;
use crate::error::{Error, Result};
use crate::interp::run_float;
use crate::ir::{
    derive_quant_params, quantize_bias, quantize_tensor, ClampAttrs, ConvAttrs, LayerNode, ModelGraph, Op,
    Padding, PoolAttrs, QuantParams, Scheme, TensorBuffer,
};
use crate::metrics::argmax;

pub const DEFAULT_SEED: u64 = 20190101;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvNetConfig {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub channels: usize,
    pub classes: usize,
    /// Fraction of weights replaced by outliers beyond 3 sigma.
    pub outlier_rate: f64,
    pub calib_size: usize,
}

impl Default for ConvNetConfig {
    fn default() -> Self {
        Self { height: 8, width: 8, in_channels: 3, channels: 8, classes: 4, outlier_rate: 0.03, calib_size: 64 }
    }
}

fn placeholder_qp() -> QuantParams {
    derive_quant_params(-1.0, 1.0, 8, false, Scheme::Asymmetric).expect("valid range")
}

/// Gaussian weights with `sigma = gain / sqrt(fan_in)`; at least one weight
/// per tensor is pushed to between 3 and 6 sigma.
pub fn outlier_weights(rng: &mut impl Rng, shape: &[usize], fan_in: usize, gain: f64, rate: f64) -> Vec<f32> {
    let n: usize = shape.iter().product();
    let sigma = gain / (fan_in as f64).sqrt();
    let normal = Normal::new(0.0, sigma).unwrap();
    let outlier = |rng: &mut dyn rand::RngCore| {
        let mag = sigma * rng.gen_range(3.0..6.0);
        if rng.gen_bool(0.5) { mag } else { -mag }
    };
    let mut w: Vec<f32> = (0..n)
        .map(|_| {
            if rng.gen_bool(rate) {
                outlier(rng) as f32
            } else {
                normal.sample(rng) as f32
            }
        })
        .collect();
    let k = rng.gen_range(0..n);
    w[k] = outlier(rng) as f32;
    w
}

fn weighted_layer(id: &str, op: Op, input: &str, w: TensorBuffer, b: Vec<f32>) -> Result<LayerNode> {
    let nb = b.len();
    Ok(LayerNode {
        id: id.into(),
        op,
        inputs: vec![input.into()],
        weights_float: Some(w),
        weights_quant: None,
        weight_qp: None,
        bias_float: Some(TensorBuffer::from_f32(vec![nb], b)?),
        bias_quant: None,
        input_qp: placeholder_qp(),
        output_qp: placeholder_qp(),
    })
}

fn plain_layer(id: &str, op: Op, inputs: &[&str]) -> LayerNode {
    LayerNode {
        id: id.into(),
        op,
        inputs: inputs.iter().map(|s| s.to_string()).collect(),
        weights_float: None,
        weights_quant: None,
        weight_qp: None,
        bias_float: None,
        bias_quant: None,
        input_qp: placeholder_qp(),
        output_qp: placeholder_qp(),
    }
}

fn range_qp(lo: f64, hi: f64, scheme: Scheme) -> Result<QuantParams> {
    let (mut lo, mut hi) = (lo.min(0.0), hi.max(0.0));
    if hi - lo < 1e-6 {
        hi = lo + 1e-3;
    }
    match scheme {
        Scheme::Asymmetric => derive_quant_params(lo, hi, 8, false, Scheme::Asymmetric),
        Scheme::Symmetric => {
            let m = lo.abs().max(hi);
            derive_quant_params(-m, m, 8, true, Scheme::Symmetric)
        }
        Scheme::SymmetricPow2Range => {
            let m = crate::float_bits::exp2i(lo.abs().max(hi).log2().ceil() as i32);
            lo = -m;
            derive_quant_params(lo, m, 8, true, Scheme::SymmetricPow2Range)
        }
    }
}

/// Fills every quantization parameter of a float graph the way a QAT export
/// would: activation ranges from float min/max over `inputs` (a clamp shares
/// its producer's range), weight ranges from the float weights, forward
/// weights and bias quantized from float.
pub fn quantize_graph(graph: &mut ModelGraph, inputs: &[TensorBuffer], scheme: Scheme) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut ranges: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut note = |id: &str, vals: &[f64]| {
        let e = ranges.entry(id.to_string()).or_insert((0.0, 0.0));
        for &v in vals {
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        }
    };
    for x in inputs {
        note(&graph.input_id, &x.to_f64_vec());
        let trace = run_float(graph, x)?;
        for (id, t) in trace.iter() {
            note(id, &t.to_f64_vec());
        }
    }
    let mut qps: BTreeMap<String, QuantParams> = BTreeMap::new();
    for (id, &(lo, hi)) in &ranges {
        qps.insert(id.clone(), range_qp(lo, hi, scheme)?);
    }
    // fused activation: producer output takes the clamp's range
    for layer in graph.layers.iter().rev() {
        if matches!(layer.op, Op::Clamp(_)) {
            let qp = qps[&layer.id];
            qps.insert(layer.inputs[0].clone(), qp);
        }
    }
    graph.input_qp = qps[&graph.input_id];
    for layer in &mut graph.layers {
        layer.input_qp = qps[&layer.inputs[0]];
        layer.output_qp = qps[&layer.id];
        if let Some(wf) = &layer.weights_float {
            let w = wf.to_f64_vec();
            let lo = w.iter().cloned().fold(0.0, f64::min);
            let hi = w.iter().cloned().fold(0.0, f64::max);
            let wqp = range_qp(lo, hi, scheme)?;
            layer.weights_quant = Some(quantize_tensor(wf, &wqp)?);
            layer.weight_qp = Some(wqp);
            if let Some(bf) = &layer.bias_float {
                layer.bias_quant = Some(quantize_bias(bf, wqp.scale * layer.input_qp.scale)?);
            }
        }
    }
    Ok(())
}

fn uniform_input(rng: &mut impl Rng, shape: &[usize]) -> Result<TensorBuffer> {
    let n = shape.iter().product();
    TensorBuffer::from_f32(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
}

/// Labels are the float model's arg-max so the reference scores 1.0.
fn label(graph: &ModelGraph, inputs: &[TensorBuffer]) -> Result<Vec<usize>> {
    inputs
        .iter()
        .map(|x| {
            let trace = run_float(graph, x)?;
            Ok(argmax(&trace.get(&graph.output_id).unwrap().to_f64_vec()))
        })
        .collect()
}

/// conv3x3 -> relu6 -> depthwise3x3 -> relu6 -> avgpool -> fully-connected,
/// quantized asymmetrically, plus a labelled calibration set of
/// `cfg.calib_size` inputs.
pub fn toy_convnet(seed: u64, cfg: &ConvNetConfig) -> Result<(ModelGraph, CalibrationSet)> {
    let mut rng = rng(seed);
    let (h, w, cin, c) = (cfg.height, cfg.width, cfg.in_channels, cfg.channels);
    let same = ConvAttrs { stride: [1, 1], padding: Padding::Same };
    let bias = |rng: &mut ChaCha8Rng, n: usize, s: f64| -> Vec<f32> {
        let d = Normal::new(0.0, s).unwrap();
        (0..n).map(|_| d.sample(rng) as f32).collect()
    };

    let w1 = outlier_weights(&mut rng, &[c, 3, 3, cin], 9 * cin, 1.5, cfg.outlier_rate);
    let b1 = bias(&mut rng, c, 0.1);
    let w2 = outlier_weights(&mut rng, &[1, 3, 3, c], 9, 1.5, cfg.outlier_rate);
    let b2 = bias(&mut rng, c, 0.1);
    let w3 = outlier_weights(&mut rng, &[cfg.classes, c], c, 1.5, cfg.outlier_rate);
    let b3 = bias(&mut rng, cfg.classes, 0.1);

    let layers = vec![
        weighted_layer("conv1", Op::Conv2D(same), "input", TensorBuffer::from_f32(vec![c, 3, 3, cin], w1)?, b1)?,
        plain_layer("relu1", Op::Clamp(ClampAttrs { min: 0.0, max: 6.0 }), &["conv1"]),
        weighted_layer("dw2", Op::DepthwiseConv2D(same), "relu1", TensorBuffer::from_f32(vec![1, 3, 3, c], w2)?, b2)?,
        plain_layer("relu2", Op::Clamp(ClampAttrs { min: 0.0, max: 6.0 }), &["dw2"]),
        plain_layer("pool", Op::AvgPool2D(PoolAttrs { size: [h, w], stride: [h, w] }), &["relu2"]),
        weighted_layer("fc", Op::FullyConnected, "pool", TensorBuffer::from_f32(vec![cfg.classes, c], w3)?, b3)?,
    ];
    let mut graph = ModelGraph {
        input_id: "input".into(),
        input_shape: vec![1, h, w, cin],
        input_qp: placeholder_qp(),
        layers,
        output_id: "fc".into(),
        metadata: BTreeMap::from([
            ("name".to_string(), "toy_convnet".to_string()),
            ("seed".to_string(), seed.to_string()),
        ]),
    };
    let inputs: Vec<TensorBuffer> =
        (0..cfg.calib_size).map(|_| uniform_input(&mut rng, &graph.input_shape)).collect::<Result<_>>()?;
    quantize_graph(&mut graph, &inputs, Scheme::Asymmetric)?;
    let labels = label(&graph, &inputs)?;
    Ok((graph, CalibrationSet::new(inputs, Some(labels))?))
}

/// Independent inputs for an existing graph, drawn like the fixture's.
pub fn random_inputs(graph: &ModelGraph, n: usize, seed: u64, labelled: bool) -> Result<CalibrationSet> {
    let mut rng = rng(seed);
    let inputs: Vec<TensorBuffer> =
        (0..n).map(|_| uniform_input(&mut rng, &graph.input_shape)).collect::<Result<_>>()?;
    let labels = if labelled { Some(label(graph, &inputs)?) } else { None };
    CalibrationSet::new(inputs, labels)
}

/// Single quantized convolution with random geometry, asymmetric params.
pub fn single_conv(seed: u64, calib_size: usize) -> Result<(ModelGraph, CalibrationSet)> {
    let mut rng = rng(seed);
    let h = rng.gen_range(3..=8);
    let w = rng.gen_range(3..=8);
    let cin = rng.gen_range(1..=4);
    let cout = rng.gen_range(1..=8);
    let k = if rng.gen_bool(0.5) { 3 } else { 1 };
    let attrs = ConvAttrs {
        stride: [1, 1],
        padding: if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid },
    };
    let wt = outlier_weights(&mut rng, &[cout, k, k, cin], k * k * cin, 1.0, 0.02);
    let b: Vec<f32> = (0..cout).map(|_| rng.gen_range(-0.2f32..0.2)).collect();
    let mut graph = ModelGraph {
        input_id: "input".into(),
        input_shape: vec![1, h, w, cin],
        input_qp: placeholder_qp(),
        layers: vec![weighted_layer("conv", Op::Conv2D(attrs), "input", TensorBuffer::from_f32(vec![cout, k, k, cin], wt)?, b)?],
        output_id: "conv".into(),
        metadata: BTreeMap::new(),
    };
    let inputs: Vec<TensorBuffer> =
        (0..calib_size).map(|_| uniform_input(&mut rng, &graph.input_shape)).collect::<Result<_>>()?;
    quantize_graph(&mut graph, &inputs, Scheme::Asymmetric)?;
    Ok((graph, CalibrationSet::new(inputs, None)?))
}

/// Random small graph: at most `max_layers` layers, 8 channels and 8x8
/// spatial, mixing every op kind, quantized under `scheme`.
pub fn random_graph(seed: u64, max_layers: usize, scheme: Scheme) -> Result<(ModelGraph, CalibrationSet)> {
    let mut rng = rng(seed);
    let (h, w, cin) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=8));
    let input_shape = vec![1, h, w, cin];
    let mut tensors: Vec<(String, Vec<usize>)> = vec![("input".into(), input_shape.clone())];
    let mut layers = Vec::new();
    let n = rng.gen_range(1..=max_layers.max(1));
    for i in 0..n {
        let id = format!("l{i}");
        let (src, shape) = tensors.last().cloned().unwrap();
        let (sh, sw, sc) = (shape[1], shape[2], shape[3]);
        let same_shape: Vec<String> =
            tensors.iter().filter(|(_, s)| *s == shape).map(|(t, _)| t.clone()).collect();
        let layer = match rng.gen_range(0..6) {
            0 | 1 => {
                let k = [1, 3][rng.gen_range(0..2)];
                let stride = rng.gen_range(1..=2);
                let padding = if rng.gen_bool(0.5) || sh < k || sw < k { Padding::Same } else { Padding::Valid };
                let cout = rng.gen_range(1..=8);
                let wt = outlier_weights(&mut rng, &[cout, k, k, sc], k * k * sc, 1.0, 0.02);
                let b = (0..cout).map(|_| rng.gen_range(-0.3f32..0.3)).collect();
                let attrs = ConvAttrs { stride: [stride, stride], padding };
                weighted_layer(&id, Op::Conv2D(attrs), &src, TensorBuffer::from_f32(vec![cout, k, k, sc], wt)?, b)?
            }
            2 => {
                let k = if sh >= 3 && sw >= 3 { 3 } else { 1 };
                let wt = outlier_weights(&mut rng, &[1, k, k, sc], k * k, 1.0, 0.02);
                let b = (0..sc).map(|_| rng.gen_range(-0.3f32..0.3)).collect();
                let attrs = ConvAttrs { stride: [1, 1], padding: Padding::Same };
                weighted_layer(&id, Op::DepthwiseConv2D(attrs), &src, TensorBuffer::from_f32(vec![1, k, k, sc], wt)?, b)?
            }
            3 => {
                let other = same_shape[rng.gen_range(0..same_shape.len())].clone();
                plain_layer(&id, Op::Add, &[&src, &other])
            }
            4 if sh >= 2 && sw >= 2 => {
                plain_layer(&id, Op::AvgPool2D(PoolAttrs { size: [2, 2], stride: [2, 2] }), &[&src])
            }
            4 => {
                let cout = rng.gen_range(1..=8);
                let fan = sh * sw * sc;
                let wt = outlier_weights(&mut rng, &[cout, fan], fan, 1.0, 0.02);
                let b = (0..cout).map(|_| rng.gen_range(-0.3f32..0.3)).collect();
                weighted_layer(&id, Op::FullyConnected, &src, TensorBuffer::from_f32(vec![cout, fan], wt)?, b)?
            }
            _ => {
                let max = [1.0, 6.0][rng.gen_range(0..2)];
                plain_layer(&id, Op::Clamp(ClampAttrs { min: 0.0, max }), &[&src])
            }
        };
        layers.push(layer);
        let mut g = ModelGraph {
            input_id: "input".into(),
            input_shape: input_shape.clone(),
            input_qp: placeholder_qp(),
            layers: layers.clone(),
            output_id: id.clone(),
            metadata: BTreeMap::new(),
        };
        let shapes = g.infer_shapes()?;
        tensors.push((id.clone(), shapes.last().unwrap().clone()));
        g.layers.clear();
    }
    let output_id = layers.last().unwrap().id.clone();
    let mut graph = ModelGraph {
        input_id: "input".into(),
        input_shape,
        input_qp: placeholder_qp(),
        layers,
        output_id,
        metadata: BTreeMap::new(),
    };
    let inputs: Vec<TensorBuffer> =
        (0..4).map(|_| uniform_input(&mut rng, &graph.input_shape)).collect::<Result<_>>()?;
    quantize_graph(&mut graph, &inputs, scheme)?;
    Ok((graph, CalibrationSet::new(inputs, None)?))
}
