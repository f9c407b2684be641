//! Re-quantization of per-tensor quantized neural-network models.
//!
//! Loads a model in a small self-contained IR, rewrites it to satisfy a
//! stricter quantization scheme (symmetric, or symmetric with power-of-two
//! runtime multipliers), and checks the result with a bit-exact integer
//! interpreter and calibration-driven error reports.

pub mod calibration;
pub mod cli;
pub mod error;
pub mod float_bits;
pub mod interp;
pub mod ir;
pub mod metrics;
pub mod passes;
pub mod synth;

pub use error::{Error, Result};
