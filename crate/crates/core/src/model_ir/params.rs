//! Binary parameter container.
//!
//! Layout (little-endian): `"NN2C"`, `u32` version, `u32` layer count, then
//! per layer a `u8` flag byte (bit 0 binary weights, bit 1 bias present), a
//! `u64` weight count with its payload, and a `u64` bias count followed by
//! `i32` bias values. Weights are ordered `[c_out][k_y][k_x][c_in]`.

use super::codec::{check_range, read_payload, write_payload, ContainerError, Reader};
use super::{LayerKind, ModelGraph};
use crate::fixed_point::{quantize_real, Activation, Precision};

pub const PARAMS_MAGIC: &[u8; 4] = b"NN2C";
pub const PARAMS_VERSION: u32 = 1;

const FLAG_BINARY: u8 = 0b01;
const FLAG_BIAS: u8 = 0b10;

/// Raw parameters of one layer. For layers with a BinarySign output the
/// bias entries are integer thresholds at the accumulator scale.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LayerParams {
    /// Raw weight codes; binary weights are `0`/`1`.
    pub weights: Vec<i32>,
    /// Raw bias (or threshold) codes at the accumulator scale.
    pub bias: Vec<i32>,
}

impl LayerParams {
    /// Weight code for output channel `co` at flat kernel index `k`
    /// (ordered `k_y`, `k_x`, `c_in`).
    pub fn weight(&self, window_elems: usize, co: usize, k: usize) -> i32 {
        self.weights[co * window_elems + k]
    }

    pub fn bias_or_zero(&self, co: usize) -> i64 {
        self.bias.get(co).copied().unwrap_or(0) as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSet {
    layers: Vec<LayerParams>,
}

fn expected_bias(graph: &ModelGraph, i: usize) -> usize {
    let l = &graph.layers()[i];
    if l.has_bias {
        l.c_out
    } else {
        0
    }
}

impl ParamSet {
    /// Check counts and code ranges against `graph`.
    pub fn new(graph: &ModelGraph, layers: Vec<LayerParams>) -> Result<Self, ContainerError> {
        if layers.len() != graph.len() {
            return Err(ContainerError::LayerCount {
                expected: graph.len(),
                found: layers.len(),
            });
        }
        for (i, (spec, p)) in graph.layers().iter().zip(&layers).enumerate() {
            if p.weights.len() != spec.weight_count() {
                return Err(ContainerError::ElementCount {
                    layer: i,
                    what: "weight",
                    expected: spec.weight_count() as u64,
                    found: p.weights.len() as u64,
                });
            }
            if p.bias.len() != expected_bias(graph, i) {
                return Err(ContainerError::ElementCount {
                    layer: i,
                    what: "bias",
                    expected: expected_bias(graph, i) as u64,
                    found: p.bias.len() as u64,
                });
            }
            if spec.has_weights() {
                check_range(spec.w_fmt, &p.weights, &format!("layer {i} weight"))?;
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerParams {
        &self.layers[i]
    }

    /// Decode to real values: weights in their format, biases at the
    /// accumulator scale of each layer.
    pub fn to_real(&self, graph: &ModelGraph) -> RealParams {
        let layers = graph
            .layers()
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let p = &self.layers[i];
                let scale = (-spec.acc_frac(graph.input_precision(i)) as f64).exp2();
                RealLayerParams {
                    weights: p.weights.iter().map(|&w| spec.w_fmt.decode(w)).collect(),
                    bias: p.bias.iter().map(|&b| b as f64 * scale).collect(),
                }
            })
            .collect();
        RealParams { layers }
    }

    pub fn to_bytes(&self, graph: &ModelGraph) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for (spec, p) in graph.layers().iter().zip(&self.layers) {
            let mut flags = 0;
            if spec.binary_weights() {
                flags |= FLAG_BINARY;
            }
            if spec.has_bias {
                flags |= FLAG_BIAS;
            }
            out.push(flags);
            out.extend_from_slice(&(p.weights.len() as u64).to_le_bytes());
            write_payload(spec.w_fmt, &p.weights, &mut out);
            out.extend_from_slice(&(p.bias.len() as u64).to_le_bytes());
            for b in &p.bias {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        out
    }
}

/// Read a parameter container for an already validated graph.
pub fn load_params(bytes: &[u8], graph: &ModelGraph) -> Result<ParamSet, ContainerError> {
    let mut r = Reader::new(bytes);
    r.magic(PARAMS_MAGIC)?;
    let version = r.u32()?;
    if version != PARAMS_VERSION {
        return Err(ContainerError::BadVersion(version));
    }
    let count = r.u32()? as usize;
    if count != graph.len() {
        return Err(ContainerError::LayerCount {
            expected: graph.len(),
            found: count,
        });
    }
    let mut layers = Vec::with_capacity(count);
    for (i, spec) in graph.layers().iter().enumerate() {
        let flags = r.u8()?;
        let expect_flags =
            ((spec.binary_weights() as u8) * FLAG_BINARY) | ((spec.has_bias as u8) * FLAG_BIAS);
        if flags != expect_flags {
            return Err(ContainerError::Flags { layer: i, flags });
        }
        let n_weights = r.u64()?;
        if n_weights != spec.weight_count() as u64 {
            return Err(ContainerError::ElementCount {
                layer: i,
                what: "weight",
                expected: spec.weight_count() as u64,
                found: n_weights,
            });
        }
        let weights = read_payload(
            &mut r,
            spec.w_fmt,
            n_weights as usize,
            &format!("layer {i} weight"),
        )?;
        let n_bias = r.u64()?;
        let want = expected_bias(graph, i) as u64;
        if n_bias != want {
            return Err(ContainerError::ElementCount {
                layer: i,
                what: "bias",
                expected: want,
                found: n_bias,
            });
        }
        let bias = (0..n_bias)
            .map(|_| r.i32())
            .collect::<Result<Vec<_>, _>>()?;
        layers.push(LayerParams { weights, bias });
    }
    r.finish()?;
    Ok(ParamSet { layers })
}

/// Real-valued parameters in the same layout as [`ParamSet`]. Biases and
/// thresholds are in real units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RealLayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RealParams {
    pub layers: Vec<RealLayerParams>,
}

impl RealParams {
    /// Quantize into the formats declared by `graph`. Binary weights take
    /// the sign (zero maps to `+1`); biases truncate at the accumulator
    /// scale; thresholds round up so that `acc >= threshold` keeps its
    /// real-valued meaning.
    pub fn quantize(&self, graph: &ModelGraph) -> Result<ParamSet, ContainerError> {
        let layers = graph
            .layers()
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let p = &self.layers[i];
                let weights = match (spec.kind, spec.w_fmt) {
                    (LayerKind::AvgPool, _) => Vec::new(),
                    (_, Precision::Binary) => {
                        p.weights.iter().map(|&w| (w >= 0.0) as i32).collect()
                    }
                    (_, Precision::Fixed(f)) => {
                        p.weights.iter().map(|&w| quantize_real(w, f).raw).collect()
                    }
                };
                let scale = (spec.acc_frac(graph.input_precision(i)) as f64).exp2();
                let bias = p
                    .bias
                    .iter()
                    .map(|&b| {
                        let scaled = b * scale;
                        let q = if spec.act_fn == Activation::BinarySign {
                            scaled.ceil()
                        } else {
                            scaled.floor()
                        };
                        q.clamp(i32::MIN as f64, i32::MAX as f64) as i32
                    })
                    .collect();
                LayerParams { weights, bias }
            })
            .collect();
        ParamSet::new(graph, layers)
    }
}
