//! Reference evaluation: the plain six-deep loop nest, one layer at a time.
//!
//! The quantized path is the bit-exact contract the stream simulator is
//! held to. The real path evaluates the same network in `f64` without any
//! intermediate quantization.

use thiserror::Error;

use crate::fixed_point::{
    apply_activation, Accumulator, AccumulatorOverflow, Activation, Precision,
};
use crate::model_ir::{
    LayerKind, LayerParams, LayerSpec, ModelGraph, ParamSet, RealLayerParams, RealParams,
    RealTensor, Tensor, AVGPOOL_RECIP_FRAC,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("layer {layer}: input dims {found:?} do not match expected {expected:?}")]
    Dims {
        layer: usize,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("layer {layer}: input precision {found} does not match expected {expected}")]
    Precision {
        layer: usize,
        expected: Precision,
        found: Precision,
    },
    #[error("parameter set has {found} layers, graph has {expected}")]
    ParamCount { expected: usize, found: usize },
    #[error("layer {layer}: {source}")]
    Overflow {
        layer: usize,
        source: AccumulatorOverflow,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Real,
    Quantized,
}

/// Result of [`run_network_ref`].
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkOutput {
    Quantized(Tensor),
    Real(RealTensor),
}

impl NetworkOutput {
    pub fn decode(&self) -> RealTensor {
        match self {
            NetworkOutput::Quantized(t) => t.decode(),
            NetworkOutput::Real(t) => t.clone(),
        }
    }
}

/// Fixed-point multiplier applied to average-pooling window sums:
/// `floor(2^16 / (k_x * k_y))`.
pub fn avgpool_reciprocal(layer: &LayerSpec) -> i64 {
    (1i64 << AVGPOOL_RECIP_FRAC) / (layer.k_x * layer.k_y) as i64
}

/// Input coordinate for a kernel offset, or `None` inside the padding.
pub fn input_coord(
    layer: &LayerSpec,
    y_out: usize,
    x_out: usize,
    k_y: usize,
    k_x: usize,
) -> Option<(usize, usize)> {
    let y = (y_out * layer.s_y + k_y).checked_sub(layer.p_y)?;
    let x = (x_out * layer.s_x + k_x).checked_sub(layer.p_x)?;
    (y < layer.y_in && x < layer.x_in).then_some((y, x))
}

fn check_dims(
    layer_idx: usize,
    layer: &LayerSpec,
    found: (usize, usize, usize),
) -> Result<(), OracleError> {
    let expected = (layer.y_in, layer.x_in, layer.c_in);
    if found != expected {
        return Err(OracleError::Dims {
            layer: layer_idx,
            expected,
            found,
        });
    }
    Ok(())
}

/// Output stage shared by every evaluator of the quantized contract: add
/// the bias (or use it as threshold for a binary output) and activate.
pub fn finish_output(
    layer: &LayerSpec,
    params: &LayerParams,
    co: usize,
    mut acc: Accumulator,
) -> Result<i32, AccumulatorOverflow> {
    let bias = params.bias_or_zero(co);
    let threshold = if layer.act_fn == Activation::BinarySign {
        bias
    } else {
        acc.add(bias)?;
        0
    };
    Ok(apply_activation(&acc, layer.act_fn, layer.a_fmt, threshold))
}

/// Bit-exact evaluation of one layer on raw codes.
pub fn run_layer_ref(
    layer: &LayerSpec,
    params: &LayerParams,
    input: &Tensor,
) -> Result<Tensor, OracleError> {
    run_layer_indexed(0, layer, params, input)
}

fn run_layer_indexed(
    idx: usize,
    layer: &LayerSpec,
    params: &LayerParams,
    input: &Tensor,
) -> Result<Tensor, OracleError> {
    check_dims(idx, layer, input.dims())?;
    let in_prec = input.precision();
    let frac = layer.acc_frac(in_prec);
    let window = layer.window_elems();
    let overflow = |source| OracleError::Overflow { layer: idx, source };
    let mut out = Tensor::zeros((layer.y_out(), layer.x_out(), layer.c_out), layer.a_fmt);
    for yo in 0..layer.y_out() {
        for xo in 0..layer.x_out() {
            for co in 0..layer.c_out {
                let mut acc = Accumulator::new(frac);
                for ky in 0..layer.k_y {
                    for kx in 0..layer.k_x {
                        let Some((y, x)) = input_coord(layer, yo, xo, ky, kx) else {
                            continue;
                        };
                        match layer.kind {
                            LayerKind::AvgPool => {
                                let a = in_prec.signed_value(input.get(y, x, co));
                                acc.add(a).map_err(overflow)?;
                            }
                            _ => {
                                for ci in 0..layer.c_in {
                                    let a = in_prec.signed_value(input.get(y, x, ci));
                                    let k = (ky * layer.k_x + kx) * layer.c_in + ci;
                                    let w = layer.w_fmt.signed_value(params.weight(window, co, k));
                                    acc.mac_raw(a, w).map_err(overflow)?;
                                }
                            }
                        }
                    }
                }
                if layer.kind == LayerKind::AvgPool {
                    let mut scaled = Accumulator::new(frac);
                    scaled
                        .mac_raw(acc.value(), avgpool_reciprocal(layer))
                        .map_err(overflow)?;
                    acc = scaled;
                }
                let raw = finish_output(layer, params, co, acc).map_err(overflow)?;
                out.set(yo, xo, co, raw);
            }
        }
    }
    Ok(out)
}

/// Real-valued evaluation of one layer. Binary outputs are `±1.0`.
pub fn run_layer_real(
    layer: &LayerSpec,
    params: &RealLayerParams,
    input: &RealTensor,
) -> Result<RealTensor, OracleError> {
    run_layer_real_indexed(0, layer, params, input)
}

fn run_layer_real_indexed(
    idx: usize,
    layer: &LayerSpec,
    params: &RealLayerParams,
    input: &RealTensor,
) -> Result<RealTensor, OracleError> {
    check_dims(idx, layer, input.dims())?;
    let window = layer.window_elems();
    let mut out = RealTensor::zeros((layer.y_out(), layer.x_out(), layer.c_out));
    for yo in 0..layer.y_out() {
        for xo in 0..layer.x_out() {
            for co in 0..layer.c_out {
                let mut acc = 0.0;
                for ky in 0..layer.k_y {
                    for kx in 0..layer.k_x {
                        let Some((y, x)) = input_coord(layer, yo, xo, ky, kx) else {
                            continue;
                        };
                        match layer.kind {
                            LayerKind::AvgPool => acc += input.get(y, x, co),
                            _ => {
                                for ci in 0..layer.c_in {
                                    let k = (ky * layer.k_x + kx) * layer.c_in + ci;
                                    acc += input.get(y, x, ci) * params.weights[co * window + k];
                                }
                            }
                        }
                    }
                }
                if layer.kind == LayerKind::AvgPool {
                    acc /= layer.kernel_elems() as f64;
                }
                let bias = params.bias.get(co).copied().unwrap_or(0.0);
                let v = match layer.act_fn {
                    Activation::BinarySign => {
                        if acc >= bias {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    Activation::Relu => (acc + bias).max(0.0),
                    Activation::None => acc + bias,
                };
                let i = out.index(yo, xo, co);
                out.data[i] = v;
            }
        }
    }
    Ok(out)
}

fn check_params(graph: &ModelGraph, found: usize) -> Result<(), OracleError> {
    if found != graph.len() {
        return Err(OracleError::ParamCount {
            expected: graph.len(),
            found,
        });
    }
    Ok(())
}

/// Quantized outputs of every layer in order.
pub fn trace_quantized(
    graph: &ModelGraph,
    params: &ParamSet,
    input: &Tensor,
) -> Result<Vec<Tensor>, OracleError> {
    check_params(graph, params.layers().len())?;
    if input.precision() != graph.input_fmt() {
        return Err(OracleError::Precision {
            layer: 0,
            expected: graph.input_fmt(),
            found: input.precision(),
        });
    }
    let mut outs: Vec<Tensor> = Vec::with_capacity(graph.len());
    for (i, layer) in graph.layers().iter().enumerate() {
        let src = outs.last().unwrap_or(input);
        let next = run_layer_indexed(i, layer, params.layer(i), src)?;
        outs.push(next);
    }
    Ok(outs)
}

/// Real-valued outputs of every layer in order.
pub fn trace_real(
    graph: &ModelGraph,
    params: &RealParams,
    input: &RealTensor,
) -> Result<Vec<RealTensor>, OracleError> {
    check_params(graph, params.layers.len())?;
    let mut outs: Vec<RealTensor> = Vec::with_capacity(graph.len());
    for (i, layer) in graph.layers().iter().enumerate() {
        let src = outs.last().unwrap_or(input);
        let next = run_layer_real_indexed(i, layer, &params.layers[i], src)?;
        outs.push(next);
    }
    Ok(outs)
}

/// Layer-by-layer network evaluation. Real mode decodes the parameters
/// and the input and never quantizes in between.
pub fn run_network_ref(
    graph: &ModelGraph,
    params: &ParamSet,
    input: &Tensor,
    mode: Mode,
) -> Result<NetworkOutput, OracleError> {
    match mode {
        Mode::Quantized => Ok(NetworkOutput::Quantized(
            trace_quantized(graph, params, input)?.pop().unwrap(),
        )),
        Mode::Real => Ok(NetworkOutput::Real(
            trace_real(graph, &params.to_real(graph), &input.decode())?
                .pop()
                .unwrap(),
        )),
    }
}

/// Per-layer maximum absolute difference between real and quantized runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DivergenceReport {
    /// Empty when no samples were given.
    pub per_layer: Vec<f64>,
}

/// Run every sample through both modes. The real path sees the sample as
/// given; the quantized path sees it quantized to the graph input format.
pub fn quantization_divergence(
    graph: &ModelGraph,
    params_real: &RealParams,
    params_quant: &ParamSet,
    inputs: &[RealTensor],
) -> Result<DivergenceReport, OracleError> {
    let mut per_layer = Vec::new();
    for sample in inputs {
        let real = trace_real(graph, params_real, sample)?;
        let quant = trace_quantized(graph, params_quant, &sample.quantize(graph.input_fmt()))?;
        per_layer.resize(graph.len(), 0.0f64);
        for (i, (r, q)) in real.iter().zip(&quant).enumerate() {
            let q = q.decode();
            let worst = r
                .data
                .iter()
                .zip(&q.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            per_layer[i] = per_layer[i].max(worst);
        }
    }
    Ok(DivergenceReport { per_layer })
}
