//! Network intermediate representation.
//!
//! A [`ModelGraph`] is a validated chain of [`LayerSpec`]s. The textual
//! architecture document lives in [`arch`], the binary parameter container
//! in [`params`] and the tensor container in [`tensor`].

pub mod arch;
mod codec;
pub mod params;
pub mod tensor;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed_point::{Activation, FormatError, Precision, ACC_BITS};

pub use arch::{parse_architecture, to_architecture_text};
pub use codec::ContainerError;
pub use params::{load_params, LayerParams, ParamSet, RealLayerParams, RealParams};
pub use tensor::{RealTensor, Tensor};

/// Fractional bits of the reciprocal used by average pooling.
pub const AVGPOOL_RECIP_FRAC: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("layer {layer}: unsupported layer kind {kind:?}")]
    UnsupportedKind { layer: usize, kind: String },
    #[error("layer {layer}: unsupported activation {name:?}")]
    UnsupportedActivation { layer: usize, name: String },
    #[error("input: {0}")]
    InputFormat(FormatError),
    #[error("layer {layer}: {source}")]
    Format { layer: usize, source: FormatError },
    #[error("layer {layer}: {field} must be positive")]
    ZeroDimension { layer: usize, field: &'static str },
    #[error("layer {layer}: FC kernel must span input")]
    FcKernel { layer: usize },
    #[error("layer {layer}: FC layers take unit stride and no padding")]
    FcStridePad { layer: usize },
    #[error("layer {layer}: non-integral output dimension along {axis}")]
    NonIntegralOutput { layer: usize, axis: char },
    #[error("layer {layer}: average pooling requires c_out == c_in and no bias")]
    AvgPoolShape { layer: usize },
    #[error("layer {layer}: BinarySign activation requires a binary output format and vice versa")]
    ActivationFormat { layer: usize },
    #[error(
        "layer {layer}: input {found:?} (x, y, c) does not match layer {prev} output {expected:?}"
    )]
    ChainMismatch {
        layer: usize,
        prev: usize,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("layer {layer}: accumulator needs {bits} bits, limit is {ACC_BITS}")]
    AccumulatorWidth { layer: usize, bits: u32 },
    #[error("network has no layers")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    #[serde(rename = "FC")]
    Fc,
    AvgPool,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv => "Conv",
            LayerKind::Fc => "FC",
            LayerKind::AvgPool => "AvgPool",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "Conv" => Some(LayerKind::Conv),
            "FC" => Some(LayerKind::Fc),
            "AvgPool" => Some(LayerKind::AvgPool),
            _ => None,
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub x_in: usize,
    pub y_in: usize,
    pub c_in: usize,
    pub k_x: usize,
    pub k_y: usize,
    pub s_x: usize,
    pub s_y: usize,
    pub p_x: usize,
    pub p_y: usize,
    pub c_out: usize,
    /// Weight precision; ignored for average pooling.
    pub w_fmt: Precision,
    /// Output activation precision.
    pub a_fmt: Precision,
    pub act_fn: Activation,
    pub has_bias: bool,
}

fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = (input + 2 * pad).checked_sub(kernel)?;
    (span % stride == 0).then_some(span / stride + 1)
}

impl LayerSpec {
    /// Full-extent FC layer over an `x × y × c` input.
    pub fn fc(x_in: usize, y_in: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            kind: LayerKind::Fc,
            x_in,
            y_in,
            c_in,
            k_x: x_in,
            k_y: y_in,
            s_x: 1,
            s_y: 1,
            p_x: 0,
            p_y: 0,
            c_out,
            w_fmt: Precision::Binary,
            a_fmt: Precision::Binary,
            act_fn: Activation::BinarySign,
            has_bias: false,
        }
    }

    pub fn x_out(&self) -> usize {
        (self.x_in + 2 * self.p_x - self.k_x) / self.s_x + 1
    }

    pub fn y_out(&self) -> usize {
        (self.y_in + 2 * self.p_y - self.k_y) / self.s_y + 1
    }

    /// Output positions in the x/y plane.
    pub fn positions(&self) -> usize {
        self.x_out() * self.y_out()
    }

    /// Elements of one sliding window (all input channels).
    pub fn window_elems(&self) -> usize {
        self.k_x * self.k_y * self.c_in
    }

    /// Inputs reduced into one output element. Average pooling works per
    /// channel, so its kernel spans only the x/y window.
    pub fn kernel_elems(&self) -> usize {
        match self.kind {
            LayerKind::AvgPool => self.k_x * self.k_y,
            _ => self.window_elems(),
        }
    }

    pub fn weight_count(&self) -> usize {
        match self.kind {
            LayerKind::AvgPool => 0,
            _ => self.c_out * self.window_elems(),
        }
    }

    pub fn input_elems(&self) -> usize {
        self.x_in * self.y_in * self.c_in
    }

    pub fn output_elems(&self) -> usize {
        self.positions() * self.c_out
    }

    pub fn has_weights(&self) -> bool {
        self.kind != LayerKind::AvgPool
    }

    /// True when the multiply stage runs on binary weights (XNOR or
    /// sign-controlled add) and thus needs no DSP blocks.
    pub fn binary_weights(&self) -> bool {
        self.has_weights() && self.w_fmt.is_binary()
    }

    /// Fractional bits of the accumulator for a given input precision.
    pub fn acc_frac(&self, input: Precision) -> i32 {
        match self.kind {
            LayerKind::AvgPool => (input.frac_bits() + AVGPOOL_RECIP_FRAC) as i32,
            _ => (input.frac_bits() + self.w_fmt.frac_bits()) as i32,
        }
    }

    /// Worst-case signed accumulator width for a given input precision.
    pub fn accumulator_bits(&self, input: Precision) -> u32 {
        let terms = self.kernel_elems().max(1);
        let log2 = usize::BITS - (terms - 1).leading_zeros();
        match self.kind {
            LayerKind::AvgPool => log2 + input.total_bits() + AVGPOOL_RECIP_FRAC + 1,
            _ => log2 + input.total_bits() + self.w_fmt.total_bits(),
        }
    }

    /// Layer-local invariants (everything except chaining).
    pub fn validate(&self, layer: usize) -> Result<(), ModelError> {
        let dims = [
            ("x_in", self.x_in),
            ("y_in", self.y_in),
            ("c_in", self.c_in),
            ("k_x", self.k_x),
            ("k_y", self.k_y),
            ("s_x", self.s_x),
            ("s_y", self.s_y),
            ("c_out", self.c_out),
        ];
        for (field, v) in dims {
            if v == 0 {
                return Err(ModelError::ZeroDimension { layer, field });
            }
        }
        match self.kind {
            LayerKind::Fc => {
                if self.k_x != self.x_in || self.k_y != self.y_in {
                    return Err(ModelError::FcKernel { layer });
                }
                if self.s_x != 1 || self.s_y != 1 || self.p_x != 0 || self.p_y != 0 {
                    return Err(ModelError::FcStridePad { layer });
                }
            }
            LayerKind::AvgPool => {
                if self.c_out != self.c_in || self.has_bias {
                    return Err(ModelError::AvgPoolShape { layer });
                }
            }
            LayerKind::Conv => {}
        }
        if out_extent(self.x_in, self.k_x, self.s_x, self.p_x).is_none() {
            return Err(ModelError::NonIntegralOutput { layer, axis: 'x' });
        }
        if out_extent(self.y_in, self.k_y, self.s_y, self.p_y).is_none() {
            return Err(ModelError::NonIntegralOutput { layer, axis: 'y' });
        }
        if (self.act_fn == Activation::BinarySign) != self.a_fmt.is_binary() {
            return Err(ModelError::ActivationFormat { layer });
        }
        Ok(())
    }
}

/// `(x_out, y_out, c_out)` of a validated layer.
pub fn derive_output_dims(layer: &LayerSpec) -> (usize, usize, usize) {
    (layer.x_out(), layer.y_out(), layer.c_out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelGraph {
    name: String,
    input_fmt: Precision,
    layers: Vec<LayerSpec>,
}

impl ModelGraph {
    pub fn new(
        name: impl Into<String>,
        input_fmt: Precision,
        layers: Vec<LayerSpec>,
    ) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Empty);
        }
        let mut in_fmt = input_fmt;
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(i)?;
            if i > 0 {
                let prev = &layers[i - 1];
                let expected = (prev.x_out(), prev.y_out(), prev.c_out);
                let found = (layer.x_in, layer.y_in, layer.c_in);
                if expected != found {
                    return Err(ModelError::ChainMismatch {
                        layer: i,
                        prev: i - 1,
                        expected,
                        found,
                    });
                }
            }
            let bits = layer.accumulator_bits(in_fmt);
            if bits > ACC_BITS {
                return Err(ModelError::AccumulatorWidth { layer: i, bits });
            }
            in_fmt = layer.a_fmt;
        }
        Ok(Self {
            name: name.into(),
            input_fmt,
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_fmt(&self) -> Precision {
        self.input_fmt
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Precision of the activations entering layer `i`.
    pub fn input_precision(&self, i: usize) -> Precision {
        if i == 0 {
            self.input_fmt
        } else {
            self.layers[i - 1].a_fmt
        }
    }

    /// Input tensor dims as `(y, x, c)`.
    pub fn input_dims(&self) -> (usize, usize, usize) {
        let l = &self.layers[0];
        (l.y_in, l.x_in, l.c_in)
    }

    /// Output tensor dims as `(y, x, c)`.
    pub fn output_dims(&self) -> (usize, usize, usize) {
        let l = self.layers.last().unwrap();
        (l.y_out(), l.x_out(), l.c_out)
    }

    pub fn output_fmt(&self) -> Precision {
        self.layers.last().unwrap().a_fmt
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    /// Multiply-accumulates in Conv/FC layers.
    pub macs: u64,
    /// Additions in average-pooling layers.
    pub adds: u64,
    /// `2 * macs + adds`.
    pub ops: u64,
}

pub fn layer_op_count(layer: &LayerSpec) -> OpCount {
    let per_output = (layer.positions() * layer.c_out) as u64;
    match layer.kind {
        LayerKind::AvgPool => {
            let adds = per_output * layer.kernel_elems() as u64;
            OpCount {
                macs: 0,
                adds,
                ops: adds,
            }
        }
        _ => {
            let macs = per_output * layer.kernel_elems() as u64;
            OpCount {
                macs,
                adds: 0,
                ops: 2 * macs,
            }
        }
    }
}

pub fn op_count(graph: &ModelGraph) -> OpCount {
    graph
        .layers()
        .iter()
        .map(layer_op_count)
        .fold(OpCount::default(), |acc, c| OpCount {
            macs: acc.macs + c.macs,
            adds: acc.adds + c.adds,
            ops: acc.ops + c.ops,
        })
}
