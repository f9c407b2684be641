//! Quantized-model intermediate representation.

mod graph;
mod io;
mod quant;
mod tensor;
mod validate;

pub use graph::{conv_geometry, ClampAttrs, ConvAttrs, LayerNode, ModelGraph, Op, Padding, PoolAttrs};
pub use io::{blob_name, load_model, save_model, TensorRole, IR_VERSION, MANIFEST};
pub(crate) use io::{json_error, read_blob, write_blob, write_json};
pub use quant::{
    derive_quant_params, dequantize_tensor, quantize_bias, quantize_bias_value, quantize_tensor,
    round_half_away, symmetric_from_scale, IntRange, QuantParams, Scheme,
};
pub use tensor::{DType, TensorBuffer, TensorData};
pub use validate::{validate, ParamRole, Violation, ViolationKind};
