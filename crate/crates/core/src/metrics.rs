//! Error metrics between model executions, top-1 accuracy, and the ablation table.

use std::fmt::Write as _;

use serde::{Serialize, Serializer};

use crate::calibration::{CalibrationSet, CompensatedSum};
use crate::error::{Error, Result};
use crate::interp::{run, ExecPath};
use crate::ir::ModelGraph;
use crate::passes::{run_pipeline, ClipThreshold, Pass, PassConfig, PassReport, TargetScheme};

/// Non-finite values serialize as the strings `"+inf"`, `"-inf"` or `"nan"`.
fn sentinel<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("+inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn opt_sentinel<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => sentinel(v, s),
        None => s.serialize_none(),
    }
}

/// One execution of a graph: float reference semantics or integer semantics.
#[derive(Debug, Clone, Copy)]
pub struct ModelView<'a> {
    pub graph: &'a ModelGraph,
    pub path: ExecPath,
}

impl<'a> ModelView<'a> {
    pub fn float(graph: &'a ModelGraph) -> Self {
        Self { graph, path: ExecPath::Float }
    }

    pub fn quant(graph: &'a ModelGraph) -> Self {
        Self { graph, path: ExecPath::Quant }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerMetrics {
    pub id: String,
    pub mse: f64,
    /// Signal is the first model's output; `+inf` when the error is zero.
    #[serde(serialize_with = "sentinel")]
    pub sqnr_db: f64,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub model_a: String,
    pub model_b: String,
    pub inputs: usize,
    pub layers: Vec<LayerMetrics>,
    pub output_mse: f64,
    /// Top-1 accuracy of model b, present iff the set has labels.
    pub top1: Option<f64>,
    pub top1_a: Option<f64>,
}

impl EvalReport {
    pub fn layer(&self, id: &str) -> Option<&LayerMetrics> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {} vs {} over {} inputs", self.model_a, self.model_b, self.inputs);
        let _ = writeln!(out, "{:<24} {:>14} {:>10} {:>10}", "layer", "mse", "sqnr_db", "cosine");
        for l in &self.layers {
            let _ = writeln!(out, "{:<24} {:>14.6e} {:>10.3} {:>10.6}", l.id, l.mse, l.sqnr_db, l.cosine);
        }
        let _ = writeln!(out, "output mse {:.6e}", self.output_mse);
        if let Some(t) = self.top1 {
            let _ = writeln!(out, "top1 {t:.4}");
        }
        out
    }
}

#[derive(Default, Clone)]
struct PairSums {
    diff2: CompensatedSum,
    a2: CompensatedSum,
    b2: CompensatedSum,
    ab: CompensatedSum,
    n: usize,
}

impl PairSums {
    fn metrics(&self, id: &str) -> LayerMetrics {
        let (d, a, b, ab) = (self.diff2.value(), self.a2.value(), self.b2.value(), self.ab.value());
        let sqnr_db = if d == 0.0 { f64::INFINITY } else { 10.0 * (a / d).log10() };
        let cosine = if a == 0.0 && b == 0.0 {
            1.0
        } else if a == 0.0 || b == 0.0 {
            0.0
        } else {
            (ab / (a.sqrt() * b.sqrt())).clamp(-1.0, 1.0)
        };
        LayerMetrics { id: id.to_string(), mse: d / self.n.max(1) as f64, sqnr_db, cosine }
    }
}

fn check_topology(a: &ModelGraph, b: &ModelGraph) -> Result<()> {
    if a.input_shape != b.input_shape {
        return Err(Error::TopologyMismatch(format!(
            "input shapes {:?} and {:?}",
            a.input_shape, b.input_shape
        )));
    }
    let ids_a: Vec<_> = a.layers.iter().map(|l| (&l.id, l.op.name(), &l.inputs)).collect();
    let ids_b: Vec<_> = b.layers.iter().map(|l| (&l.id, l.op.name(), &l.inputs)).collect();
    if ids_a != ids_b || a.output_id != b.output_id {
        return Err(Error::TopologyMismatch("layer lists differ".into()));
    }
    Ok(())
}

/// Per-layer and end-to-end error between two executions over a calibration set.
pub fn compare(a: ModelView<'_>, b: ModelView<'_>, calib: &CalibrationSet) -> Result<EvalReport> {
    check_topology(a.graph, b.graph)?;
    let mut sums: Vec<PairSums> = vec![PairSums::default(); a.graph.layers.len()];
    for input in calib.inputs() {
        let ra = run(a.graph, input, a.path)?.real_values(a.graph)?;
        let rb = run(b.graph, input, b.path)?.real_values(b.graph)?;
        for (s, ((_, _, va), (_, _, vb))) in sums.iter_mut().zip(ra.iter().zip(&rb)) {
            for (x, y) in va.iter().zip(vb) {
                s.diff2.add((x - y) * (x - y));
                s.a2.add(x * x);
                s.b2.add(y * y);
                s.ab.add(x * y);
            }
            s.n += va.len();
        }
    }
    let layers: Vec<LayerMetrics> =
        a.graph.layers.iter().zip(&sums).map(|(l, s)| s.metrics(&l.id)).collect();
    let output_mse = layers
        .iter()
        .find(|l| l.id == a.graph.output_id)
        .map(|l| l.mse)
        .ok_or_else(|| Error::TopologyMismatch("graph output not found".into()))?;
    let (top1, top1_a) = if calib.labels().is_some() {
        (Some(top1_accuracy(b, calib)?), Some(top1_accuracy(a, calib)?))
    } else {
        (None, None)
    };
    Ok(EvalReport {
        model_a: describe(a),
        model_b: describe(b),
        inputs: calib.len(),
        layers,
        output_mse,
        top1,
        top1_a,
    })
}

fn describe(v: ModelView<'_>) -> String {
    let name = v.graph.metadata.get("name").map(String::as_str).unwrap_or("model");
    let path = match v.path {
        ExecPath::Float => "float",
        ExecPath::Quant => "quant",
    };
    match v.graph.metadata.get("passes") {
        Some(p) => format!("{name}[{p}]:{path}"),
        None => format!("{name}:{path}"),
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of inputs whose arg-max output matches the label.
pub fn top1_accuracy(view: ModelView<'_>, calib: &CalibrationSet) -> Result<f64> {
    let labels = calib.labels().ok_or(Error::MissingLabels)?;
    let mut hits = 0usize;
    for (input, &label) in calib.inputs().iter().zip(labels) {
        let trace = run(view.graph, input, view.path)?;
        let real = trace.real_values(view.graph)?;
        let (_, _, out) = real
            .iter()
            .find(|(id, _, _)| *id == view.graph.output_id)
            .ok_or_else(|| Error::TopologyMismatch("graph output not found".into()))?;
        if argmax(out) == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / calib.len() as f64)
}

/// Ladder rows; REF only applies to the power-of-two scheme.
pub const ABLATION_ROWS: [(&str, &[Pass]); 5] = [
    ("Naive", &[]),
    ("BC", &[Pass::Bc]),
    ("BC + WCL", &[Pass::Bc, Pass::Wcl]),
    ("BC + WCL + WCR", &[Pass::Bc, Pass::Wcl, Pass::Wcr]),
    ("BC + WCL + WCR + REF", &[Pass::Bc, Pass::Wcl, Pass::Wcr, Pass::Ref]),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationCell {
    pub output_mse: f64,
    #[serde(serialize_with = "sentinel")]
    pub output_sqnr_db: f64,
    #[serde(serialize_with = "opt_sentinel")]
    pub top1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub symmetric: Option<AblationCell>,
    pub symmetric_pow2: Option<AblationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub note: String,
    pub inputs: usize,
    pub bc_inputs: usize,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

/// A transformed model produced by the ladder, with its pass report.
pub struct AblationModel {
    pub name: String,
    pub graph: ModelGraph,
    pub report: PassReport,
}

fn cell(reference: &ModelGraph, graph: &ModelGraph, calib: &CalibrationSet) -> Result<AblationCell> {
    let r = compare(ModelView::float(reference), ModelView::quant(graph), calib)?;
    let out = r.layer(&graph.output_id).expect("output layer present");
    Ok(AblationCell { output_mse: r.output_mse, output_sqnr_db: out.sqnr_db, top1: r.top1 })
}

/// Runs the full ladder for both schemes. Errors against the float reference
/// are measured on `eval`; bias correction uses `bc_calib`.
pub fn run_ablation(
    graph: &ModelGraph,
    bc_calib: &CalibrationSet,
    eval: &CalibrationSet,
    clip: ClipThreshold,
    seed: u64,
) -> Result<(AblationTable, Vec<AblationModel>)> {
    let original = cell(graph, graph, eval)?;
    let mut rows = vec![AblationRow {
        label: "Original".into(),
        symmetric: Some(original.clone()),
        symmetric_pow2: Some(original),
    }];
    let mut models = Vec::new();
    for (label, passes) in ABLATION_ROWS {
        let mut row = AblationRow { label: label.into(), symmetric: None, symmetric_pow2: None };
        for target in [TargetScheme::Symmetric, TargetScheme::SymmetricPow2] {
            let cfg = PassConfig::new(target, passes).with_clip(clip);
            if cfg.check().is_err() {
                continue;
            }
            let (g, report) = run_pipeline(graph, &cfg, Some(bc_calib))?;
            let c = cell(graph, &g, eval)?;
            match target {
                TargetScheme::Symmetric => row.symmetric = Some(c),
                TargetScheme::SymmetricPow2 => row.symmetric_pow2 = Some(c),
            }
            models.push(AblationModel { name: format!("{target}_{}", cfg.label()), graph: g, report });
        }
        rows.push(row);
    }
    let table = AblationTable {
        note: "desk-scale synthetic evaluation; errors are against the float reference".into(),
        inputs: eval.len(),
        bc_inputs: bc_calib.len(),
        seed,
        rows,
    };
    Ok((table, models))
}

impl AblationTable {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }

    /// Fixed-width table: one row per pass combination, one column group per scheme.
    pub fn to_text(&self) -> String {
        let fmt_cell = |c: &Option<AblationCell>| match c {
            None => format!("{:>12} {:>9} {:>7}", "---", "---", "---"),
            Some(c) => {
                let top1 = c.top1.map_or("n/a".to_string(), |t| format!("{:.2}", 100.0 * t));
                format!("{:>12.4e} {:>9.2} {:>7}", c.output_mse, c.output_sqnr_db, top1)
            }
        };
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.note);
        let _ = writeln!(out, "# eval inputs {}, bias-correction inputs {}, seed {}", self.inputs, self.bc_inputs, self.seed);
        let _ = writeln!(
            out,
            "{:<22} | {:^30} | {:^30}",
            "Requantization scheme", "Symmetric", "Symmetric + power-of-2"
        );
        let sub = format!("{:>12} {:>9} {:>7}", "mse", "sqnr_db", "top1%");
        let _ = writeln!(out, "{:<22} | {sub} | {sub}", "");
        let _ = writeln!(out, "{}", "-".repeat(22 + 3 + 30 + 3 + 30));
        for r in &self.rows {
            let _ = writeln!(out, "{:<22} | {} | {}", r.label, fmt_cell(&r.symmetric), fmt_cell(&r.symmetric_pow2));
        }
        out
    }
}
