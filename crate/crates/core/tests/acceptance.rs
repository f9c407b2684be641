//! Acceptance suite: one pass/fail line per criterion.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use requant::calibration::CalibrationSet;
use requant::float_bits::{exact_log2, exp2i};
use requant::interp::{
    decompose_pow2, layer_multipliers, requantize_by_shift, requantize_fixed_point, run_float,
    run_quant, Multiplier,
};
use requant::ir::{
    derive_quant_params, load_model, save_model, validate, IntRange, ModelGraph, QuantParams, Scheme, TensorBuffer,
};
use requant::passes::{
    pow2_ranges, round_error_folding, run_pipeline, symmetrize_ranges, weight_correction, ClipThreshold, Pass,
    PassConfig, TargetScheme,
};
use requant::synth::{outlier_weights, random_graph, random_inputs, single_conv, toy_convnet, ConvNetConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut layers = 0;
    let mut exact_product = 0;
    for _ in 0..120 {
        let (s_w, s_i, s_o) =
            (log_uniform(&mut rng, 1e-4, 1.0), log_uniform(&mut rng, 1e-4, 1.0), log_uniform(&mut rng, 1e-4, 1.0));
        let cin = rng.gen_range(1..=4);
        let cout = rng.gen_range(1..=4);
        let wf = outlier_weights(&mut rng, &[cout, 3, 3, cin], 9 * cin, 127.0 * s_w / 4.0, 0.0);
        let wf: Vec<f32> = wf.iter().map(|v| v.clamp(-127.0 * s_w as f32, 127.0 * s_w as f32)).collect();
        let wf = TensorBuffer::from_f32(vec![cout, 3, 3, cin], wf).unwrap();
        let bf: Vec<f32> = (0..cout).map(|_| rng.gen_range(-1.0f32..1.0) * (s_o * 10.0) as f32).collect();
        let g = common::symmetric_conv(wf, bf, s_w, s_i, s_o, 4);
        let (g2, _) = match round_error_folding(&g) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("REF failed: {e}")),
        };
        for (id, m) in layer_multipliers(&g2).unwrap() {
            let l = g2.layer(&id).unwrap();
            let product = l.weight_qp.unwrap().scale * l.input_qp.scale / l.output_qp.scale;
            let exact = exact_log2(m.value).map(|k| -k) == Some(m.shift);
            if !(m.is_pow2 && exact) {
                return outcome(false, format!("{id}: multiplier {} is not a power of two", m.value));
            }
            let target = exp2i(-m.shift);
            if (product - target).abs() > (target.next_up() - target) {
                return outcome(false, format!("{id}: S_w*S_i/S_o = {product} is more than 1 ulp from 2^-{}", m.shift));
            }
            if product == target {
                exact_product += 1;
            }
            layers += 1;
        }
    }
    outcome(layers >= 100, format!("{layers} layers shift-only; {exact_product} with an exactly representable scale product"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100_000 {
        let m = log_uniform(&mut rng, 1e-12, 1e6);
        let (p, q) = decompose_pow2(m).unwrap();
        if !(p > 0.5 && p <= 1.0) {
            return outcome(false, format!("M={m}: P={p}"));
        }
        let back = p * exp2i(-q);
        if (back - m).abs() / m > f64::EPSILON {
            return outcome(false, format!("M={m}: P*2^-Q={back}"));
        }
    }
    for k in -60..=60 {
        let (p, q) = decompose_pow2(exp2i(k)).unwrap();
        if p != 1.0 || q != -k {
            return outcome(false, format!("2^{k}: (P,Q)=({p},{q})"));
        }
    }
    outcome(true, "100000 random M plus 121 exact powers")
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut accs: Vec<i32> = vec![i32::MIN, i32::MIN + 1, -1, 0, 1, i32::MAX - 1, i32::MAX];
    for k in 0..31 {
        let v = 1i32 << k;
        accs.extend([v, -v, v - 1, -(v - 1), v + 1, -(v + 1)]);
    }
    accs.extend((0..1_000_000).map(|_| {
        if rng.gen_bool(0.5) { rng.gen::<i32>() } else { rng.gen_range(-70_000..70_000) }
    }));
    let ranges = [IntRange::I32, IntRange { min: -127, max: 127 }, IntRange { min: 0, max: 255 }];
    let mut checked = 0u64;
    for (i, &acc) in accs.iter().enumerate() {
        let q = (i % 36) as i32 - 4;
        let m = Multiplier::pow2(q);
        let range = ranges[i % 3];
        let z = if range.min == 0 { (i % 256) as i32 } else { 0 };
        let a = requantize_by_shift(acc, q, z, range);
        let b = requantize_fixed_point(acc, m.mantissa, m.mantissa_shift, z, range);
        if a != b {
            return outcome(false, format!("acc={acc} Q={q}: shift {a} vs fixed-point {b}"));
        }
        checked += 1;
    }
    outcome(true, format!("{checked} accumulator/shift pairs"))
}

fn criterion_4() -> Outcome {
    let schemes = [Scheme::Asymmetric, Scheme::Symmetric, Scheme::SymmetricPow2Range];
    let mut graphs = 0;
    let mut elements = 0usize;
    for seed in 0..60u64 {
        let scheme = schemes[seed as usize % 3];
        let (g, _) = random_graph(1000 + seed, 4, scheme).unwrap();
        let inputs = random_inputs(&g, 3, seed, false).unwrap();
        for x in inputs.inputs() {
            let trace = match run_quant(&g, x) {
                Ok(t) => t,
                Err(e) => return outcome(false, format!("seed {seed}: {e}")),
            };
            let oracle = common::int_oracle(&g, x);
            for l in &g.layers {
                let got: Vec<i64> = trace.get(&l.id).unwrap().to_f64_vec().iter().map(|&v| v as i64).collect();
                if got != oracle[&l.id] {
                    return outcome(false, format!("seed {seed} layer {} ({}) differs", l.id, l.op.name()));
                }
                elements += got.len();
            }
        }
        graphs += 1;
    }
    outcome(true, format!("{graphs} graphs, {elements} output elements bit-exact"))
}

fn channel_means(vals: &[f64], channels: usize) -> Vec<f64> {
    let mut s = vec![0.0; channels];
    for (i, v) in vals.iter().enumerate() {
        s[i % channels] += v;
    }
    let n = (vals.len() / channels) as f64;
    s.iter().map(|v| v / n).collect()
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for seed in 0..30u64 {
        let (g, calib) = single_conv(500 + seed, 64).unwrap();
        // the power-of-two target needs REF first: a bare shift drops P and saturates
        for (target, passes) in
            [(TargetScheme::Symmetric, &[Pass::Bc][..]), (TargetScheme::SymmetricPow2, &[Pass::Ref, Pass::Bc][..])]
        {
            let cfg = PassConfig::new(target, passes);
            let (out, _) = run_pipeline(&g, &cfg, Some(&calib)).unwrap();
            let l = &out.layers[0];
            let c = l.output_qp.scale;
            let bound = l.weight_qp.unwrap().scale * l.input_qp.scale / 2.0 + c / 2.0;
            let mut real = Vec::new();
            let mut quant = Vec::new();
            for x in calib.inputs() {
                real.extend(run_float(&g, x).unwrap().get("conv").unwrap().to_f64_vec());
                let q = run_quant(&out, x).unwrap();
                let qv = q.get("conv").unwrap().to_f64_vec();
                quant.extend(qv.iter().map(|&v| l.output_qp.scale * (v - l.output_qp.zero_point as f64)));
            }
            let ch = g.layers[0].weights_float.as_ref().unwrap().shape()[0];
            let (mr, mq) = (channel_means(&real, ch), channel_means(&quant, ch));
            for (k, (a, b)) in mr.iter().zip(&mq).enumerate() {
                let err = (a - b).abs();
                worst = worst.max(err / bound);
                if err > bound {
                    return outcome(false, format!("seed {seed} {target} channel {k}: |err| {err:.3e} > bound {bound:.3e}"));
                }
            }
            cases += 1;
        }
    }
    outcome(true, format!("{cases} graphs; worst error/bound ratio {worst:.3}"))
}

fn subsets(pool: &[Pass]) -> Vec<Vec<Pass>> {
    (0..1u32 << pool.len())
        .map(|mask| pool.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, p)| *p).collect())
        .collect()
}

fn output_mse(graph: &ModelGraph, reference: &[Vec<f64>], eval: &CalibrationSet) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    let qp = graph.layer(&graph.output_id).unwrap().output_qp;
    for (x, r) in eval.inputs().iter().zip(reference) {
        let t = run_quant(graph, x).unwrap();
        let q = t.get(&graph.output_id).unwrap().to_f64_vec();
        for (a, b) in q.iter().zip(r) {
            let d = qp.scale * (a - qp.zero_point as f64) - b;
            sum += d * d;
        }
        n += q.len();
    }
    sum / n as f64
}

fn criterion_6() -> Outcome {
    const SEEDS: u64 = 24;
    let cfg = ConvNetConfig::default();
    // per (target, label): number of seeds where the comparison held
    let mut naive_vs_bc = [0u32; 2];
    let mut full_vs_subset: std::collections::BTreeMap<(usize, String), u32> = Default::default();
    let mut ref_vs_noref: std::collections::BTreeMap<String, u32> = Default::default();
    for seed in 0..SEEDS {
        let (g, calib) = toy_convnet(seed, &cfg).unwrap();
        let eval = &calib;
        let reference: Vec<Vec<f64>> = eval
            .inputs()
            .iter()
            .map(|x| run_float(&g, x).unwrap().get(&g.output_id).unwrap().to_f64_vec())
            .collect();
        for (ti, target) in [TargetScheme::Symmetric, TargetScheme::SymmetricPow2].into_iter().enumerate() {
            let pool: Vec<Pass> = match target {
                TargetScheme::Symmetric => vec![Pass::Bc, Pass::Wcl, Pass::Wcr],
                TargetScheme::SymmetricPow2 => vec![Pass::Bc, Pass::Wcl, Pass::Wcr, Pass::Ref],
            };
            let mut mse: std::collections::BTreeMap<Vec<Pass>, f64> = Default::default();
            for mut s in subsets(&pool) {
                s.sort();
                let pc = PassConfig::new(target, &s).with_clip(ClipThreshold::Auto);
                let (out, _) = match run_pipeline(&g, &pc, Some(&calib)) {
                    Ok(r) => r,
                    Err(e) => return outcome(false, format!("seed {seed} {target} {}: {e}", pc.label())),
                };
                mse.insert(s, output_mse(&out, &reference, eval));
            }
            let mut full = pool.clone();
            full.sort();
            if mse[&vec![]] > mse[&vec![Pass::Bc]] {
                naive_vs_bc[ti] += 1;
            }
            for (s, v) in &mse {
                if *s != full {
                    let label = PassConfig::new(target, s).label();
                    *full_vs_subset.entry((ti, label)).or_default() += (mse[&full] <= *v) as u32;
                }
            }
            if target == TargetScheme::SymmetricPow2 {
                for s in subsets(&[Pass::Bc, Pass::Wcl, Pass::Wcr]) {
                    let mut with = s.clone();
                    with.push(Pass::Ref);
                    with.sort();
                    let mut without = s.clone();
                    without.sort();
                    let label = PassConfig::new(target, &with).label();
                    *ref_vs_noref.entry(label).or_default() += (mse[&with] < mse[&without]) as u32;
                }
            }
        }
    }
    let need = (SEEDS as f64 * 0.9).ceil() as u32;
    let mut failures = Vec::new();
    for (ti, name) in ["symmetric", "symmetric-pow2"].iter().enumerate() {
        if naive_vs_bc[ti] < need {
            failures.push(format!("{name}: naive > bc in {}/{SEEDS}", naive_vs_bc[ti]));
        }
    }
    for ((ti, label), n) in &full_vs_subset {
        if *n < need {
            failures.push(format!("{}: full <= {label} in {n}/{SEEDS}", ["symmetric", "symmetric-pow2"][*ti]));
        }
    }
    for (label, n) in &ref_vs_noref {
        if *n < need {
            failures.push(format!("symmetric-pow2: {label} < without ref in {n}/{SEEDS}"));
        }
    }
    let worst_full = full_vs_subset.values().min().copied().unwrap_or(0);
    let worst_ref = ref_vs_noref.values().min().copied().unwrap_or(0);
    if failures.is_empty() {
        outcome(
            true,
            format!(
                "{SEEDS} seeds; naive>bc {}/{} and {}/{}; full<=subset worst {worst_full}; ref<no-ref worst {worst_ref}",
                naive_vs_bc[0], SEEDS, naive_vs_bc[1], SEEDS
            ),
        )
    } else {
        outcome(false, failures.join("; "))
    }
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // quantize/dequantize round trip
    for _ in 0..200 {
        let scheme = [Scheme::Asymmetric, Scheme::Symmetric, Scheme::SymmetricPow2Range][rng.gen_range(0..3)];
        let qp: QuantParams = match scheme {
            Scheme::Asymmetric => {
                let lo = -log_uniform(&mut rng, 1e-3, 100.0);
                let hi = log_uniform(&mut rng, 1e-3, 100.0);
                derive_quant_params(lo, hi, 8, false, scheme).unwrap()
            }
            Scheme::Symmetric => {
                let m = log_uniform(&mut rng, 1e-3, 100.0);
                derive_quant_params(-m, m, 8, true, scheme).unwrap()
            }
            Scheme::SymmetricPow2Range => {
                let m = exp2i(rng.gen_range(-10..7));
                derive_quant_params(-m, m, 8, true, scheme).unwrap()
            }
        };
        let r = qp.int_range();
        let (lo, hi) = (qp.dequantize_value(r.min), qp.dequantize_value(r.max));
        for _ in 0..50 {
            let x = rng.gen_range(lo..=hi);
            let back = qp.dequantize_value(qp.quantize_value(x));
            if (back - x).abs() > qp.scale / 2.0 {
                return outcome(false, format!("round trip {x} -> {back} exceeds scale/2 = {}", qp.scale / 2.0));
            }
        }
    }
    // idempotence and serialization on random graphs
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..30u64 {
        let (asym, _) = random_graph(2000 + seed, 4, Scheme::Asymmetric).unwrap();
        let (s1, _) = symmetrize_ranges(&asym).unwrap();
        let (p1, _) = pow2_ranges(&asym).unwrap();
        let (c1, _) = weight_correction(&s1).unwrap();
        let (r1, _) = round_error_folding(&p1).unwrap();
        let checks = [
            ("symmetrize_ranges", symmetrize_ranges(&s1).unwrap().0 == s1),
            ("pow2_ranges", pow2_ranges(&p1).unwrap().0 == p1),
            ("weight_correction", weight_correction(&c1).unwrap().0 == c1),
            ("round_error_folding", round_error_folding(&r1).unwrap().0 == r1),
        ];
        if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
            return outcome(false, format!("seed {seed}: {name} is not idempotent"));
        }
        for (k, g) in [&asym, &s1, &p1, &c1, &r1].into_iter().enumerate() {
            let path = dir.path().join(format!("{seed}_{k}"));
            save_model(g, &path).unwrap();
            if load_model(&path).unwrap() != *g {
                return outcome(false, format!("seed {seed}: serialization round trip changed graph {k}"));
            }
        }
    }
    // validator postconditions after every pipeline on the fixture
    let (g, calib) = toy_convnet(3, &ConvNetConfig::default()).unwrap();
    let mut pipelines = 0;
    for target in [TargetScheme::Symmetric, TargetScheme::SymmetricPow2] {
        let pool: &[Pass] = match target {
            TargetScheme::Symmetric => &[Pass::Bc, Pass::Wcl, Pass::Wcr],
            TargetScheme::SymmetricPow2 => &[Pass::Bc, Pass::Wcl, Pass::Wcr, Pass::Ref],
        };
        for s in subsets(pool) {
            for clip in [ClipThreshold::Auto, ClipThreshold::Fixed(6.0)] {
                let cfg = PassConfig::new(target, &s).with_clip(clip);
                match run_pipeline(&g, &cfg, Some(&calib)) {
                    Ok((out, report)) => {
                        let hard = validate(&out).len() - report.tolerated.len();
                        if hard != 0 {
                            return outcome(false, format!("{target} {}: {hard} violations", cfg.label()));
                        }
                    }
                    Err(e) => return outcome(false, format!("{target} {}: {e}", cfg.label())),
                }
                pipelines += 1;
            }
        }
    }
    let (full, _) = run_pipeline(
        &g,
        &PassConfig::new(TargetScheme::SymmetricPow2, &[Pass::Bc, Pass::Wcl, Pass::Wcr, Pass::Ref]),
        Some(&calib),
    )
    .unwrap();
    if !validate(&full).is_empty() {
        return outcome(false, format!("full pow2 pipeline leaves {:?}", validate(&full)));
    }
    outcome(true, format!("round trip, idempotence, 150 serializations, {pipelines} pipelines validated"))
}

fn criterion_8() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let fx = root.path().join("fixture");
    let fx_s = fx.to_str().unwrap();
    if requant::cli::run_with_args(["requant", "fixture", "--out", fx_s, "--seed", "11"]) != 0 {
        return outcome(false, "fixture command failed");
    }
    let mut trees = Vec::new();
    for run in 0..2 {
        let out = root.path().join(format!("ablate{run}"));
        let code = requant::cli::run_with_args([
            "requant",
            "ablate",
            &format!("{fx_s}/model"),
            "--calib",
            &format!("{fx_s}/calib"),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "11",
            "--clip",
            "auto",
            "--eval-size",
            "64",
        ]);
        if code != 0 {
            return outcome(false, format!("ablate exited {code}"));
        }
        trees.push(common::read_tree(&out));
    }
    let files = trees[0].len();
    let same = trees[0] == trees[1];
    outcome(same && files > 0, format!("{files} files compared, identical = {same}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        ("1 power-of-two exactness after REF", criterion_1, Duration::from_secs(1)),
        ("2 multiplier decomposition", criterion_2, Duration::from_secs(1)),
        ("3 shift/fixed-point equivalence", criterion_3, Duration::from_secs(10)),
        ("4 interpreter vs scalar oracle", criterion_4, Duration::from_secs(30)),
        ("5 bias correction mean error", criterion_5, Duration::from_secs(10)),
        ("6 ablation ordering", criterion_6, Duration::from_secs(120)),
        ("7 invariant suites", criterion_7, Duration::from_secs(30)),
        ("8 ablate determinism", criterion_8, Duration::MAX),
    ];
    let mut failed = 0;
    for (name, f, limit) in criteria {
        let t = Instant::now();
        let o = f();
        let dt = t.elapsed();
        let in_time = dt <= limit;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {name}: {} ({:.2}s{}{})",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            dt.as_secs_f64(),
            if limit == Duration::MAX { String::new() } else { format!(", limit {}s", limit.as_secs()) },
            if in_time { "" } else { ", over time" }
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
