//! Shared helpers for the integration suites.
#![allow(dead_code)]

use dfmap::balancer::{allocate, AllocationPlan, LayerAlloc, ResourceBudget};
use dfmap::fixed_point::{Activation, Precision};
use dfmap::model_ir::{LayerKind, LayerSpec, ModelGraph};
use rand::seq::SliceRandom;
use rand::Rng;

/// A network whose unsnapped MAC targets are integral and reachable, with
/// the plan the balancer returns for a DSP budget equal to their sum.
pub struct BalancedCase {
    pub graph: ModelGraph,
    pub plan: AllocationPlan,
    pub budget: ResourceBudget,
}

fn fixed<R: Rng>(rng: &mut R) -> Precision {
    let total = *[4u32, 8, 16].choose(rng).unwrap();
    Precision::from_bits(total, rng.gen_range(0..total)).unwrap()
}

/// Chain with the same kernel size (`k * k * c`) in every layer and
/// strides/padding that map `x` to `x / s` exactly.
pub fn balanced_graph<R: Rng>(rng: &mut R) -> ModelGraph {
    loop {
        let n = rng.gen_range(2..=4);
        let c = rng.gen_range(1..=8);
        let k = *[1usize, 2, 3].choose(rng).unwrap();
        let mut x = 4 * rng.gen_range(3..=6);
        let input_fmt = fixed(rng);
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let s = match k {
                1 => 1,
                2 => 2,
                _ => *[1usize, 2].choose(rng).unwrap(),
            };
            let s = if x % s != 0 || x / s < 2 { 1 } else { s };
            let (k, s) = if k == 2 && s == 1 { (2, 2) } else { (k, s) };
            if x % s != 0 {
                break;
            }
            let a_fmt = fixed(rng);
            let layer = LayerSpec {
                kind: LayerKind::Conv,
                x_in: x,
                y_in: x,
                c_in: c,
                k_x: k,
                k_y: k,
                s_x: s,
                s_y: s,
                p_x: (k - 1) / 2 * (k % 2),
                p_y: (k - 1) / 2 * (k % 2),
                c_out: if i + 1 == n { rng.gen_range(1..=8) } else { c },
                w_fmt: fixed(rng),
                a_fmt,
                act_fn: if rng.gen_bool(0.5) {
                    Activation::Relu
                } else {
                    Activation::None
                },
                has_bias: rng.gen_bool(0.5),
            };
            x = layer.x_out();
            layers.push(layer);
        }
        if layers.len() < 2 {
            continue;
        }
        if let Ok(g) = ModelGraph::new("balanced", input_fmt, layers) {
            return g;
        }
    }
}

/// Draw graphs until the balancer's plan hits every unsnapped target
/// exactly, with `pe` dividing `c_out`, and no stage needs more than one
/// input element per cycle.
pub fn balanced_case<R: Rng>(rng: &mut R) -> BalancedCase {
    loop {
        let graph = balanced_graph(rng);
        let dist = dfmap::balancer::compute_distribution(&graph);
        let lcm = dist
            .shares()
            .iter()
            .fold(num_bigint::BigInt::from(1), |acc, d| {
                num_integer::Integer::lcm(&acc, d.denom())
            });
        let Ok(base) = u64::try_from(lcm) else {
            continue;
        };
        let m = rng.gen_range(1..=8);
        let total = base * m;
        let targets: Vec<u64> = dist.targets(&total.into());
        let budget = ResourceBudget {
            dsp: targets.iter().sum(),
            bram: 1 << 40,
            lut: 1 << 40,
            ..ResourceBudget::default()
        };
        let Ok(alloc) = allocate(&graph, &budget) else {
            continue;
        };
        let ok = graph
            .layers()
            .iter()
            .zip(&alloc.plan.layers)
            .zip(&targets)
            .all(|((l, a), &t): ((&LayerSpec, &LayerAlloc), &u64)| {
                let period = a.position_cycles(l);
                a.mac_units() as u64 == t && l.c_out % a.pe == 0 && l.s_x * l.s_y * l.c_in <= period
            });
        if ok {
            return BalancedCase {
                graph,
                plan: alloc.plan,
                budget,
            };
        }
    }
}

/// Halve the first layer's MAC units.
pub fn starve_first(plan: &AllocationPlan) -> Option<AllocationPlan> {
    let mut p = plan.clone();
    let a = &mut p.layers[0];
    if a.pe.is_multiple_of(2) {
        a.pe /= 2;
    } else if a.simd.is_multiple_of(2) {
        a.simd /= 2;
    } else {
        return None;
    }
    Some(p)
}

/// Signed value of a raw code: binary codes are `±1`.
fn signed(prec: Precision, raw: i32) -> i128 {
    if prec.is_binary() {
        if raw != 0 {
            1
        } else {
            -1
        }
    } else {
        raw as i128
    }
}

fn floor_div_pow2(v: i128, shift: i32) -> i128 {
    if shift >= 0 {
        v.div_euclid(1i128 << shift)
    } else {
        v * (1i128 << -shift)
    }
}

/// Independent evaluation of the quantized contract: the input is first
/// copied into a zero-padded array of `Option` values (padding is `None`
/// and contributes nothing), then each layer is a plain loop nest over
/// `i128`, and realignment uses floor division instead of shifts.
pub fn padded_reference(
    graph: &ModelGraph,
    params: &dfmap::model_ir::ParamSet,
    input: &dfmap::model_ir::Tensor,
) -> Vec<i32> {
    let mut prec = graph.input_fmt();
    let mut data: Vec<i32> = input.data().to_vec();
    for (i, l) in graph.layers().iter().enumerate() {
        let (yp, xp) = (l.y_in + 2 * l.p_y, l.x_in + 2 * l.p_x);
        let mut padded: Vec<Option<i128>> = vec![None; yp * xp * l.c_in];
        for y in 0..l.y_in {
            for x in 0..l.x_in {
                for c in 0..l.c_in {
                    let raw = data[(y * l.x_in + x) * l.c_in + c];
                    padded[((y + l.p_y) * xp + x + l.p_x) * l.c_in + c] = Some(signed(prec, raw));
                }
            }
        }
        let p = params.layer(i);
        let (yo, xo) = (l.y_out(), l.x_out());
        let pool = l.kind == LayerKind::AvgPool;
        let (acc_frac, recip) = if pool {
            (
                prec.frac_bits() as i32 + 16,
                (1i128 << 16) / (l.k_x * l.k_y) as i128,
            )
        } else {
            ((prec.frac_bits() + l.w_fmt.frac_bits()) as i32, 1)
        };
        let mut out = vec![0i32; yo * xo * l.c_out];
        for y in 0..yo {
            for x in 0..xo {
                for co in 0..l.c_out {
                    let mut acc: i128 = 0;
                    for ky in 0..l.k_y {
                        for kx in 0..l.k_x {
                            let (py, px) = (y * l.s_y + ky, x * l.s_x + kx);
                            if pool {
                                if let Some(v) = padded[(py * xp + px) * l.c_in + co] {
                                    acc += v;
                                }
                                continue;
                            }
                            for ci in 0..l.c_in {
                                let Some(a) = padded[(py * xp + px) * l.c_in + ci] else {
                                    continue;
                                };
                                let w = p.weights[((co * l.k_y + ky) * l.k_x + kx) * l.c_in + ci];
                                acc += a * signed(l.w_fmt, w);
                            }
                        }
                    }
                    acc *= recip;
                    let bias = if l.has_bias { p.bias[co] as i128 } else { 0 };
                    let code = match l.act_fn {
                        Activation::BinarySign => (acc >= bias) as i32,
                        act => {
                            let mut v = acc + bias;
                            if act == Activation::Relu && v < 0 {
                                v = 0;
                            }
                            let f = l.a_fmt.fixed().expect("fixed output");
                            let v = floor_div_pow2(v, acc_frac - f.frac_bits() as i32);
                            v.clamp(f.min_raw() as i128, f.max_raw() as i128) as i32
                        }
                    };
                    out[(y * xo + x) * l.c_out + co] = code;
                }
            }
        }
        data = out;
        prec = l.a_fmt;
    }
    data
}

/// Recount `(dsp, bram, lut)` of a plan from the cost rules: one DSP per
/// fixed-point MAC lane, LUT lanes for binary and pooling layers plus a
/// per-layer overhead, and BRAM for per-PE weight memories, the input
/// stage and the output FIFO.
pub fn independent_usage(
    graph: &ModelGraph,
    plan: &AllocationPlan,
    budget: &ResourceBudget,
) -> (u64, u64, u64) {
    let block = budget.bram_bits;
    let (mut dsp, mut bram, mut lut) = (0u64, 0u64, budget.lut_per_layer * graph.len() as u64);
    let mut in_bits = graph.input_fmt().total_bits() as u64;
    for (l, a) in graph.layers().iter().zip(&plan.layers) {
        let lanes = (a.pe * a.simd) as u64;
        let pool = l.kind == LayerKind::AvgPool;
        if pool || l.w_fmt.is_binary() {
            lut += lanes * budget.lut_per_binary_mac;
        } else {
            dsp += lanes;
        }
        if !pool {
            let folds = l.c_out.div_ceil(a.pe) as u64;
            let per_pe = folds * (l.k_x * l.k_y * l.c_in) as u64 * l.w_fmt.total_bits() as u64;
            bram += a.pe as u64 * per_pe.div_ceil(block);
        }
        let rows = if l.kind == LayerKind::Fc {
            l.y_in
        } else {
            l.k_y + l.s_y
        };
        bram += (rows * l.x_in * l.c_in) as u64 * in_bits / block
            + u64::from(!((rows * l.x_in * l.c_in) as u64 * in_bits).is_multiple_of(block));
        let fifo = budget.fifo_depth.unwrap_or(2 * l.c_out) as u64 * l.a_fmt.total_bits() as u64;
        bram += fifo.div_ceil(block);
        in_bits = l.a_fmt.total_bits() as u64;
    }
    (dsp, bram, lut)
}
