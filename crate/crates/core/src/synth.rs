//! Random networks, parameters and inputs for tests and demos.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::balancer::{divisors, AllocationPlan, LayerAlloc};
use crate::fixed_point::{Activation, Precision};
use crate::model_ir::{LayerKind, LayerParams, LayerSpec, ModelGraph, ParamSet, Tensor};

/// Bounds for [`random_graph`].
#[derive(Debug, Clone)]
pub struct GraphLimits {
    pub max_layers: usize,
    pub max_spatial: usize,
    pub max_channels: usize,
    pub max_kernel: usize,
    /// Candidate total widths; `1` selects binary.
    pub bits: Vec<u32>,
    pub strides: Vec<usize>,
    pub pads: Vec<usize>,
    pub allow_fc: bool,
    pub allow_avgpool: bool,
}

impl Default for GraphLimits {
    fn default() -> Self {
        Self {
            max_layers: 4,
            max_spatial: 16,
            max_channels: 8,
            max_kernel: 3,
            bits: vec![1, 4, 8, 16],
            strides: vec![1, 2],
            pads: vec![0, 1],
            allow_fc: true,
            allow_avgpool: true,
        }
    }
}

fn random_precision<R: Rng>(rng: &mut R, bits: &[u32]) -> Precision {
    let total = *bits.choose(rng).expect("at least one width");
    let frac = if total > 1 {
        rng.gen_range(0..total)
    } else {
        0
    };
    Precision::from_bits(total, frac).expect("valid width")
}

fn random_layer<R: Rng>(
    rng: &mut R,
    limits: &GraphLimits,
    (x, y, c): (usize, usize, usize),
    last: bool,
) -> LayerSpec {
    loop {
        let roll: f64 = rng.gen();
        let kind = if limits.allow_fc && last && roll < 0.25 {
            LayerKind::Fc
        } else if limits.allow_avgpool && roll > 0.8 {
            LayerKind::AvgPool
        } else {
            LayerKind::Conv
        };
        let a_fmt = random_precision(rng, &limits.bits);
        let act_fn = if a_fmt.is_binary() {
            Activation::BinarySign
        } else if rng.gen_bool(0.5) {
            Activation::Relu
        } else {
            Activation::None
        };
        let w_fmt = random_precision(rng, &limits.bits);
        let c_out = rng.gen_range(1..=limits.max_channels);
        let layer = match kind {
            LayerKind::Fc => LayerSpec {
                w_fmt,
                a_fmt,
                act_fn,
                has_bias: rng.gen_bool(0.7),
                ..LayerSpec::fc(x, y, c, c_out)
            },
            _ => {
                let k_x = rng.gen_range(1..=limits.max_kernel);
                let k_y = rng.gen_range(1..=limits.max_kernel);
                let s = *limits.strides.choose(rng).unwrap();
                let p = *limits.pads.choose(rng).unwrap();
                let pool = kind == LayerKind::AvgPool;
                LayerSpec {
                    kind,
                    x_in: x,
                    y_in: y,
                    c_in: c,
                    k_x,
                    k_y,
                    s_x: s,
                    s_y: s,
                    p_x: p,
                    p_y: p,
                    c_out: if pool { c } else { c_out },
                    w_fmt: if pool { Precision::Binary } else { w_fmt },
                    a_fmt,
                    act_fn,
                    has_bias: !pool && rng.gen_bool(0.7),
                }
            }
        };
        if layer.validate(0).is_ok()
            && layer.x_out() <= limits.max_spatial
            && layer.y_out() <= limits.max_spatial
        {
            return layer;
        }
    }
}

/// Draw a valid graph within `limits`.
pub fn random_graph<R: Rng>(rng: &mut R, limits: &GraphLimits) -> ModelGraph {
    loop {
        let input_fmt = random_precision(rng, &limits.bits);
        let mut dims = (
            rng.gen_range(1..=limits.max_spatial),
            rng.gen_range(1..=limits.max_spatial),
            rng.gen_range(1..=limits.max_channels),
        );
        let n = rng.gen_range(1..=limits.max_layers);
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let l = random_layer(rng, limits, dims, i + 1 == n);
            dims = (l.x_out(), l.y_out(), l.c_out);
            layers.push(l);
        }
        if let Ok(g) = ModelGraph::new(format!("random-{n}"), input_fmt, layers) {
            return g;
        }
    }
}

fn random_code<R: Rng>(rng: &mut R, prec: Precision) -> i32 {
    match prec {
        Precision::Binary => rng.gen_range(0..=1),
        Precision::Fixed(f) => rng.gen_range(f.min_raw()..=f.max_raw()) as i32,
    }
}

fn magnitude(prec: Precision) -> f64 {
    match prec {
        Precision::Binary => 1.0,
        Precision::Fixed(f) => -(f.min_raw() as f64),
    }
}

/// Uniform weights; biases and thresholds drawn on the scale of a typical
/// accumulator value so that activations do not all saturate.
pub fn random_params<R: Rng>(rng: &mut R, graph: &ModelGraph) -> ParamSet {
    let layers = graph
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let weights = (0..l.weight_count())
                .map(|_| random_code(rng, l.w_fmt))
                .collect();
            let spread = (l.kernel_elems() as f64).sqrt()
                * magnitude(l.w_fmt)
                * magnitude(graph.input_precision(i))
                / 2.0;
            let spread = spread.clamp(1.0, i32::MAX as f64 / 2.0) as i64;
            let bias = if l.has_bias {
                (0..l.c_out)
                    .map(|_| rng.gen_range(-spread..=spread) as i32)
                    .collect()
            } else {
                Vec::new()
            };
            LayerParams { weights, bias }
        })
        .collect();
    ParamSet::new(graph, layers).expect("generated parameters fit the graph")
}

pub fn random_input<R: Rng>(rng: &mut R, graph: &ModelGraph) -> Tensor {
    let prec = graph.input_fmt();
    let (y, x, c) = graph.input_dims();
    let data = (0..y * x * c).map(|_| random_code(rng, prec)).collect();
    Tensor::new((y, x, c), prec, data).expect("generated input fits the graph")
}

/// Any valid `(pe, simd)` per layer, uniformly over the choices.
pub fn random_plan<R: Rng>(rng: &mut R, graph: &ModelGraph) -> AllocationPlan {
    let layers = graph
        .layers()
        .iter()
        .map(|l| LayerAlloc {
            pe: rng.gen_range(1..=l.c_out),
            simd: *divisors(l.kernel_elems()).choose(rng).unwrap(),
        })
        .collect();
    AllocationPlan { layers }
}
