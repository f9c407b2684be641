//! Re-quantization passes and the pipeline that composes them.

mod bias;
mod clip;
mod common;
mod correction;
mod folding;
mod report;
mod scheme;

use std::fmt;

pub use bias::bias_correction;
pub use clip::{auto_threshold, weight_clip, ClipThreshold, AUTO_GRID, DEFAULT_CLIP};
pub use correction::weight_correction;
pub use folding::round_error_folding;
pub use report::{Change, PassRecord, PassReport};
pub use scheme::{naive_requant, pow2_ranges, snap_multipliers, snap_pow2, symmetrize_ranges};

use crate::calibration::CalibrationSet;
use crate::error::{Error, Result};
use crate::interp::layer_multipliers;
use crate::ir::{validate, ModelGraph, ViolationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TargetScheme {
    Symmetric,
    /// Symmetric with power-of-two runtime multipliers.
    SymmetricPow2,
}

impl fmt::Display for TargetScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetScheme::Symmetric => "symmetric",
            TargetScheme::SymmetricPow2 => "symmetric-pow2",
        })
    }
}

impl std::str::FromStr for TargetScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "symmetric" => Ok(TargetScheme::Symmetric),
            "symmetric-pow2" => Ok(TargetScheme::SymmetricPow2),
            _ => Err(format!("unknown scheme {s:?} (expected symmetric or symmetric-pow2)")),
        }
    }
}

/// Compensation passes, declared in canonical execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pass {
    /// Weight clipping.
    Wcl,
    /// Weight correction.
    Wcr,
    /// Round-error folding.
    Ref,
    /// Bias correction.
    Bc,
}

impl Pass {
    pub fn name(self) -> &'static str {
        match self {
            Pass::Bc => "bc",
            Pass::Wcl => "wcl",
            Pass::Wcr => "wcr",
            Pass::Ref => "ref",
        }
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Pass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bc" => Ok(Pass::Bc),
            "wcl" => Ok(Pass::Wcl),
            "wcr" => Ok(Pass::Wcr),
            "ref" => Ok(Pass::Ref),
            other => Err(format!("unknown pass {other:?} (expected bc, wcl, wcr or ref)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassConfig {
    pub target: TargetScheme,
    pub passes: Vec<Pass>,
    pub clip: ClipThreshold,
    /// Run passes in the order given instead of the canonical WCL, WCR, REF, BC.
    pub keep_order: bool,
}

impl PassConfig {
    pub fn new(target: TargetScheme, passes: &[Pass]) -> Self {
        Self { target, passes: passes.to_vec(), clip: ClipThreshold::default(), keep_order: false }
    }

    pub fn with_clip(mut self, clip: ClipThreshold) -> Self {
        self.clip = clip;
        self
    }

    pub fn check(&self) -> Result<()> {
        let mut seen = self.passes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.passes.len() {
            return Err(Error::InvalidConfig("a pass is listed more than once".into()));
        }
        if self.passes.contains(&Pass::Ref) && self.target != TargetScheme::SymmetricPow2 {
            return Err(Error::SchemePrecondition(
                "round-error folding requires the symmetric-pow2 target scheme".into(),
            ));
        }
        if let ClipThreshold::Fixed(c) = self.clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::InvalidConfig(format!("clip threshold must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn has(&self, p: Pass) -> bool {
        self.passes.contains(&p)
    }

    fn ordered(&self) -> Vec<Pass> {
        let mut p = self.passes.clone();
        if !self.keep_order {
            p.sort();
        }
        p
    }

    /// Stable label such as `bc+wcl+wcr`, or `naive` for the empty set.
    pub fn label(&self) -> String {
        if self.passes.is_empty() {
            return "naive".into();
        }
        let mut p = self.passes.clone();
        p.sort_by_key(|p| [Pass::Bc, Pass::Wcl, Pass::Wcr, Pass::Ref].iter().position(|x| x == p));
        p.iter().map(|p| p.name()).collect::<Vec<_>>().join("+")
    }
}

/// Validator findings a configuration is allowed to leave behind: forward
/// weights (and bias) go stale whenever params change without weight correction.
fn tolerated(cfg: &PassConfig, kind: &ViolationKind) -> bool {
    let stale = matches!(kind, ViolationKind::ForwardWeightMismatch | ViolationKind::BiasMismatch);
    if cfg.passes.is_empty() {
        // the naive baseline reinterprets integers without re-deriving anything
        return stale || matches!(kind, ViolationKind::ValueOutOfRange(_) | ViolationKind::WeightDtype);
    }
    let corrected = cfg.has(Pass::Ref) || (cfg.has(Pass::Wcr) && cfg.target == TargetScheme::Symmetric);
    stale && !corrected
}

/// Applies the scheme transform, then the configured passes.
///
/// An empty pass list yields the naive baseline. For the power-of-two target
/// without REF, each multiplier `P * 2^-Q` is reduced to `2^-Q` right before
/// bias correction, which is what a shift-only datapath executes.
pub fn run_pipeline(
    graph: &ModelGraph,
    cfg: &PassConfig,
    calib: Option<&CalibrationSet>,
) -> Result<(ModelGraph, PassReport)> {
    cfg.check()?;
    if cfg.has(Pass::Bc) && calib.is_none() {
        return Err(Error::InvalidConfig("bias correction requires a calibration set".into()));
    }
    let violations = validate(graph);
    if !violations.is_empty() {
        return Err(Error::InvalidGraph(violations));
    }
    let mut report = PassReport::default();
    let mut g = if cfg.passes.is_empty() {
        let (g, r) = naive_requant(graph, cfg.target)?;
        report.extend(r);
        g
    } else {
        let (g, r) = match cfg.target {
            TargetScheme::Symmetric => symmetrize_ranges(graph)?,
            TargetScheme::SymmetricPow2 => pow2_ranges(graph)?,
        };
        report.extend(r);
        g
    };

    let snap_needed = cfg.target == TargetScheme::SymmetricPow2 && !cfg.has(Pass::Ref) && !cfg.passes.is_empty();
    let mut snapped = false;
    let order = cfg.ordered();
    for (i, &pass) in order.iter().enumerate() {
        if pass == Pass::Bc && snap_needed && !snapped {
            let (next, r) = snap_multipliers(&g)?;
            report.extend(r);
            g = next;
            snapped = true;
        }
        let (next, r) = match pass {
            Pass::Wcl => clip::clip_weights(&g, cfg.clip, cfg.target, order[i + 1..].contains(&Pass::Ref))?,
            Pass::Wcr => weight_correction(&g)?,
            Pass::Ref => round_error_folding(&g)?,
            Pass::Bc => bias_correction(&g, graph, calib.unwrap())?,
        };
        report.extend(r);
        g = next;
    }
    if snap_needed && !snapped {
        let (next, r) = snap_multipliers(&g)?;
        report.extend(r);
        g = next;
    }

    let mut hard = Vec::new();
    for v in validate(&g) {
        if tolerated(cfg, &v.kind) {
            report.tolerated.push(v.to_string());
        } else {
            hard.push(v);
        }
    }
    if !hard.is_empty() {
        return Err(Error::InvalidGraph(hard));
    }
    if cfg.target == TargetScheme::SymmetricPow2 {
        if let Some((id, _)) = layer_multipliers(&g)?.into_iter().find(|(_, m)| !m.is_pow2) {
            return Err(Error::SchemePrecondition(format!("{id}: multiplier is not a power of two")));
        }
    }
    g.metadata.insert("scheme".into(), cfg.target.to_string());
    g.metadata.insert("passes".into(), cfg.label());
    Ok((g, report))
}
