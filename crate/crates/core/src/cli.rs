//! Command-line front end.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or precondition error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::calibration::{load_calibration, save_calibration, CalibrationSet, DEFAULT_CALIBRATION_SIZE};
use crate::error::{Error, Result};
use crate::interp::layer_multipliers;
use crate::ir::{load_model, save_model, validate, ModelGraph};
use crate::metrics::{compare, run_ablation, ModelView};
use crate::passes::{run_pipeline, ClipThreshold, Pass, PassConfig, TargetScheme};
use crate::synth::{random_inputs, toy_convnet, ConvNetConfig, DEFAULT_SEED};

#[derive(Debug, Parser)]
#[command(name = "requant", version, about = "Re-quantize per-tensor 8-bit models into symmetric and power-of-two schemes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print per-layer parameters and multipliers.
    Inspect { model: PathBuf },
    /// Apply a scheme transform and passes, writing a new model.
    Transform(TransformArgs),
    /// Compare a model's integer execution against a float reference.
    Eval(EvalArgs),
    /// Compare the integer executions of two models.
    Diff(DiffArgs),
    /// Run the full ablation ladder for both target schemes.
    Ablate(AblateArgs),
    /// Write a seeded synthetic model and calibration set.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    pub model: PathBuf,
    #[arg(long, default_value = "symmetric-pow2")]
    pub scheme: TargetScheme,
    /// Comma-separated subset of bc,wcl,wcr,ref; empty for the naive baseline.
    #[arg(long, default_value = "", value_parser = parse_passes)]
    pub passes: PassList,
    #[arg(long, default_value = "6")]
    pub clip: ClipThreshold,
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Pass report path; a `.json` extension selects JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Run passes in the order given instead of the canonical order.
    #[arg(long)]
    pub keep_order: bool,
    /// Number of calibration inputs used for bias correction.
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SIZE)]
    pub calib_size: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    /// Model whose float execution is the reference (defaults to the model itself).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    pub model_a: PathBuf,
    pub model_b: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "6")]
    pub clip: ClipThreshold,
    /// Seed for the held-out evaluation inputs.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Held-out evaluation inputs; 0 evaluates on the calibration set.
    #[arg(long, default_value_t = 0)]
    pub eval_size: usize,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SIZE)]
    pub calib_size: usize,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SIZE)]
    pub calib_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassList(pub Vec<Pass>);

fn parse_passes(s: &str) -> std::result::Result<PassList, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(PassList)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

/// Per-layer summary table.
pub fn inspect(graph: &ModelGraph) -> Result<String> {
    let mults = layer_multipliers(graph)?;
    let mut out = String::new();
    let fmt_qp = |qp: &crate::ir::QuantParams| format!("{:?} S={:.6e} Z={}", qp.scheme, qp.scale, qp.zero_point);
    let _ = writeln!(out, "input {} {:?} {}", graph.input_id, graph.input_shape, fmt_qp(&graph.input_qp));
    for (k, v) in &graph.metadata {
        let _ = writeln!(out, "meta {k}={v}");
    }
    let _ = writeln!(
        out,
        "{:<12} {:<16} {:<40} {:<40} {:>14} {:>5} {:>5}",
        "layer", "op", "weight", "output", "multiplier", "shift", "pow2"
    );
    for layer in &graph.layers {
        let w = layer.weight_qp.as_ref().map_or("-".to_string(), fmt_qp);
        let (m, q, p2) = match mults.iter().find(|(id, _)| *id == layer.id) {
            Some((_, m)) => (format!("{:.8e}", m.value), m.shift.to_string(), if m.is_pow2 { "yes" } else { "no" }),
            None => ("-".into(), "-".into(), "-"),
        };
        let _ = writeln!(
            out,
            "{:<12} {:<16} {:<40} {:<40} {:>14} {:>5} {:>5}",
            layer.id,
            layer.op.name(),
            w,
            fmt_qp(&layer.output_qp),
            m,
            q,
            p2
        );
    }
    let violations = validate(graph);
    let _ = writeln!(out, "violations {}", violations.len());
    for v in violations {
        let _ = writeln!(out, "  {v}");
    }
    Ok(out)
}

fn load_calib_opt(path: Option<&Path>) -> Result<Option<CalibrationSet>> {
    path.map(load_calibration).transpose()
}

pub fn cmd_transform(args: &TransformArgs) -> Result<()> {
    let graph = load_model(&args.model)?;
    let mut cfg = PassConfig::new(args.scheme, &args.passes.0).with_clip(args.clip);
    cfg.keep_order = args.keep_order;
    cfg.check()?;
    let calib = match load_calib_opt(args.calib.as_deref())? {
        Some(c) => Some(c.truncated(args.calib_size)?),
        None => None,
    };
    let (out, report) = run_pipeline(&graph, &cfg, calib.as_ref())?;
    save_model(&out, &args.out)?;
    if let Some(path) = &args.report {
        let text = if is_json(path) { report.to_json() } else { report.to_text() };
        write_file(path, &text)?;
    }
    log::info!("{}: {} records, {} tolerated findings", cfg.label(), report.records.len(), report.tolerated.len());
    Ok(())
}

fn emit_eval(report: &crate::metrics::EvalReport, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_file(p, &if is_json(p) { report.to_json() } else { report.to_text() }),
        None => {
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let reference = match &args.reference {
        Some(p) => load_model(p)?,
        None => model.clone(),
    };
    let calib = load_calibration(&args.calib)?;
    let report = compare(ModelView::float(&reference), ModelView::quant(&model), &calib)?;
    emit_eval(&report, args.report.as_deref())
}

pub fn cmd_diff(args: &DiffArgs) -> Result<()> {
    let a = load_model(&args.model_a)?;
    let b = load_model(&args.model_b)?;
    let calib = load_calibration(&args.calib)?;
    let report = compare(ModelView::quant(&a), ModelView::quant(&b), &calib)?;
    emit_eval(&report, args.report.as_deref())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let calib_dir = args
        .calib
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("ablate requires --calib".into()))?;
    let graph = load_model(&args.model)?;
    let calib = load_calibration(calib_dir)?;
    let bc_calib = calib.truncated(args.calib_size)?;
    let eval = if args.eval_size == 0 {
        calib.clone()
    } else {
        random_inputs(&graph, args.eval_size, args.seed, true)?
    };
    let (table, models) = run_ablation(&graph, &bc_calib, &eval, args.clip, args.seed)?;
    for m in &models {
        save_model(&m.graph, args.out.join("models").join(&m.name))?;
        write_file(&args.out.join("reports").join(format!("{}.txt", m.name)), &m.report.to_text())?;
    }
    write_file(&args.out.join("ablation.json"), &table.to_json())?;
    let text = table.to_text();
    write_file(&args.out.join("ablation.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_fixture(args: &FixtureArgs) -> Result<()> {
    let cfg = ConvNetConfig { calib_size: args.calib_size, ..ConvNetConfig::default() };
    let (graph, calib) = toy_convnet(args.seed, &cfg)?;
    save_model(&graph, args.out.join("model"))?;
    save_calibration(&calib, args.out.join("calib"))?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Inspect { model } => {
            print!("{}", inspect(&load_model(model)?)?);
            Ok(())
        }
        Command::Transform(a) => cmd_transform(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Diff(a) => cmd_diff(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Fixture(a) => cmd_fixture(a),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_precondition() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("REQUANT_LOG", "warn")).try_init();
    run_with_args(std::env::args_os())
}
