//! Throughput balancing: per-layer rate ratios, the normalized MAC
//! distribution, and the search for the largest plan that fits a budget.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::{LayerKind, LayerSpec, ModelGraph};
use crate::stream_sim::{fifo_depth, window_capacity};

/// Exact `c_out / (s_y * s_x * c_in)`, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateRatio {
    num: u64,
    den: u64,
}

impl RateRatio {
    pub fn new(num: u64, den: u64) -> Self {
        assert!(num > 0 && den > 0, "rate ratio terms must be positive");
        let g = num.gcd(&den);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn to_big(&self) -> BigRational {
        BigRational::new(self.num.into(), self.den.into())
    }
}

pub fn compute_ratio(layer: &LayerSpec) -> RateRatio {
    RateRatio::new(
        layer.c_out as u64,
        (layer.s_y * layer.s_x * layer.c_in) as u64,
    )
}

/// Share of the global MAC budget per layer; sums to one exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacDistribution {
    shares: Vec<BigRational>,
}

impl MacDistribution {
    pub fn shares(&self) -> &[BigRational] {
        &self.shares
    }

    pub fn share(&self, i: usize) -> &BigRational {
        &self.shares[i]
    }

    pub fn total(&self) -> BigRational {
        self.shares.iter().fold(BigRational::zero(), |a, b| a + b)
    }

    /// Unsnapped per-layer targets `budget * share`.
    pub fn scaled(&self, budget: &BigInt) -> Vec<BigRational> {
        let b = BigRational::from_integer(budget.clone());
        self.shares.iter().map(|d| &b * d).collect()
    }

    /// `max(1, floor(budget * share))` for every layer.
    pub fn targets(&self, budget: &BigInt) -> Vec<u64> {
        self.shares
            .iter()
            .map(|d| {
                let t = (budget * d.numer()).div_floor(d.denom());
                t.to_u64().unwrap_or(u64::MAX).max(1)
            })
            .collect()
    }
}

/// Normalized cumulative products of the rate ratios.
pub fn compute_distribution(graph: &ModelGraph) -> MacDistribution {
    let mut running = BigRational::one();
    let products: Vec<BigRational> = graph
        .layers()
        .iter()
        .map(|l| {
            running = &running * compute_ratio(l).to_big();
            running.clone()
        })
        .collect();
    let total = products.iter().fold(BigRational::zero(), |a, b| a + b);
    MacDistribution {
        shares: products.into_iter().map(|p| p / &total).collect(),
    }
}

/// Divisors of `n` in increasing order.
pub fn divisors(n: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            small.push(d);
            if d * d != n {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Largest `pe * simd <= target` with `pe <= c_out` and `simd` dividing
/// the kernel size. Ties go to the larger `simd`, then the smaller `pe`.
pub fn snap_allocation(layer: &LayerSpec, target_macs: u64) -> (usize, usize) {
    let target = target_macs.max(1);
    let mut best = (1usize, 1usize);
    for simd in divisors(layer.kernel_elems()) {
        if simd as u64 > target {
            break;
        }
        let pe = (target / simd as u64).min(layer.c_out as u64) as usize;
        let better = pe * simd > best.0 * best.1 || (pe * simd == best.0 * best.1 && simd > best.1);
        if better {
            best = (pe, simd);
        }
    }
    best
}

/// Output elements per cycle of a layer running `macs` lanes, with one
/// kernel taking `kernel_elems / simd` cycles per lane group.
pub fn out_rate(layer: &LayerSpec, macs: &BigRational) -> BigRational {
    macs / BigRational::from_integer(BigInt::from(layer.kernel_elems()))
}

/// Input elements per cycle the same layer consumes.
pub fn in_rate(layer: &LayerSpec, macs: &BigRational) -> BigRational {
    out_rate(layer, macs) / compute_ratio(layer).to_big()
}

/// Host deductions per resource.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reserved {
    pub dsp: u64,
    pub bram: u64,
    pub lut: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceBudget {
    pub dsp: u64,
    /// 18-kbit block count.
    pub bram: u64,
    pub lut: u64,
    pub reserved: Reserved,
    pub lut_per_binary_mac: u64,
    /// Control logic charged to every layer block.
    pub lut_per_layer: u64,
    pub clock_mhz: f64,
    /// Inter-layer FIFO depth; `None` uses twice the producer's channels.
    pub fifo_depth: Option<usize>,
    /// Bits per BRAM block.
    pub bram_bits: u64,
}

pub const DEFAULT_DSP: u64 = 840;
pub const DEFAULT_BRAM: u64 = 445;
pub const DEFAULT_LUT: u64 = 203_800;
pub const DEFAULT_LUT_PER_BINARY_MAC: u64 = 5;
pub const DEFAULT_LUT_PER_LAYER: u64 = 64;
pub const DEFAULT_CLOCK_MHZ: f64 = 100.0;
pub const BRAM_BLOCK_BITS: u64 = 18_432;

impl Default for ResourceBudget {
    fn default() -> Self {
        Self {
            dsp: DEFAULT_DSP,
            bram: DEFAULT_BRAM,
            lut: DEFAULT_LUT,
            reserved: Reserved::default(),
            lut_per_binary_mac: DEFAULT_LUT_PER_BINARY_MAC,
            lut_per_layer: DEFAULT_LUT_PER_LAYER,
            clock_mhz: DEFAULT_CLOCK_MHZ,
            fifo_depth: None,
            bram_bits: BRAM_BLOCK_BITS,
        }
    }
}

impl ResourceBudget {
    /// `(dsp, bram, lut)` left after the host reservation.
    pub fn available(&self) -> Result<(u64, u64, u64), AllocError> {
        let check = |resource, budget: u64, reserved: u64| {
            budget.checked_sub(reserved).ok_or(AllocError::Reserve {
                resource,
                reserved,
                budget,
            })
        };
        Ok((
            check("DSP", self.dsp, self.reserved.dsp)?,
            check("BRAM", self.bram, self.reserved.bram)?,
            check("LUT", self.lut, self.reserved.lut)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerAlloc {
    pub pe: usize,
    pub simd: usize,
}

impl LayerAlloc {
    pub fn mac_units(&self) -> usize {
        self.pe * self.simd
    }

    /// Cycles for one kernel: `kernel_elems / simd`.
    pub fn kernel_cycles(&self, layer: &LayerSpec) -> usize {
        layer.kernel_elems() / self.simd
    }

    /// Sequential passes over the output channels.
    pub fn folds(&self, layer: &LayerSpec) -> usize {
        layer.c_out.div_ceil(self.pe)
    }

    /// Cycles for all output channels of one position.
    pub fn position_cycles(&self, layer: &LayerSpec) -> usize {
        self.folds(layer) * self.kernel_cycles(layer)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub layers: Vec<LayerAlloc>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("plan has {found} layers, graph has {expected}")]
    LayerCount { expected: usize, found: usize },
    #[error("layer {layer}: pe {pe} outside 1..={c_out}")]
    Pe {
        layer: usize,
        pe: usize,
        c_out: usize,
    },
    #[error("layer {layer}: simd {simd} does not divide kernel size {kernel}")]
    Simd {
        layer: usize,
        simd: usize,
        kernel: usize,
    },
}

impl AllocationPlan {
    /// One PE with one lane everywhere.
    pub fn minimal(graph: &ModelGraph) -> Self {
        Self {
            layers: vec![LayerAlloc { pe: 1, simd: 1 }; graph.len()],
        }
    }

    pub fn total_mac_units(&self) -> usize {
        self.layers.iter().map(LayerAlloc::mac_units).sum()
    }

    pub fn validate(&self, graph: &ModelGraph) -> Result<(), PlanError> {
        if self.layers.len() != graph.len() {
            return Err(PlanError::LayerCount {
                expected: graph.len(),
                found: self.layers.len(),
            });
        }
        for (i, (a, l)) in self.layers.iter().zip(graph.layers()).enumerate() {
            if a.pe == 0 || a.pe > l.c_out {
                return Err(PlanError::Pe {
                    layer: i,
                    pe: a.pe,
                    c_out: l.c_out,
                });
            }
            if a.simd == 0 || l.kernel_elems() % a.simd != 0 {
                return Err(PlanError::Simd {
                    layer: i,
                    simd: a.simd,
                    kernel: l.kernel_elems(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerUsage {
    pub dsp: u64,
    pub lut: u64,
    pub bram: u64,
    /// Blocks holding weights (part of `bram`).
    pub weight_bram: u64,
    /// Blocks holding the input stage and output FIFO (part of `bram`).
    pub buffer_bram: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceUsage {
    pub dsp_used: u64,
    pub bram_used: u64,
    pub lut_used: u64,
    pub layers: Vec<LayerUsage>,
}

impl ResourceUsage {
    /// First resource exceeding `(dsp, bram, lut)`, with the layer using
    /// most of it.
    fn excess(&self, avail: (u64, u64, u64)) -> Option<AllocError> {
        let checks: [(&'static str, u64, u64, fn(&LayerUsage) -> u64); 3] = [
            ("DSP", self.dsp_used, avail.0, |l| l.dsp),
            ("BRAM", self.bram_used, avail.1, |l| l.bram),
            ("LUT", self.lut_used, avail.2, |l| l.lut),
        ];
        checks
            .into_iter()
            .find(|c| c.1 > c.2)
            .map(|(resource, needed, available, pick)| {
                let layer = (0..self.layers.len())
                    .max_by_key(|&i| (pick(&self.layers[i]), std::cmp::Reverse(i)))
                    .unwrap_or(0);
                AllocError::Infeasible {
                    resource,
                    needed,
                    available,
                    layer,
                }
            })
    }

    pub fn fits(&self, budget: &ResourceBudget) -> bool {
        budget.available().is_ok_and(|a| self.excess(a).is_none())
    }
}

fn blocks(bits: u64, block: u64) -> u64 {
    bits.div_ceil(block)
}

/// Cost of a plan. DSPs count one per fixed-point MAC lane; binary-weight
/// and pooling lanes cost LUTs; every PE gets its own weight memory.
pub fn estimate_resources(
    graph: &ModelGraph,
    plan: &AllocationPlan,
    budget: &ResourceBudget,
) -> ResourceUsage {
    let mut usage = ResourceUsage::default();
    for (i, (l, a)) in graph.layers().iter().zip(&plan.layers).enumerate() {
        let lanes = a.mac_units() as u64;
        let logic_lanes = l.binary_weights() || l.kind == LayerKind::AvgPool;
        let dsp = if logic_lanes { 0 } else { lanes };
        let lut = budget.lut_per_layer
            + if logic_lanes {
                lanes * budget.lut_per_binary_mac
            } else {
                0
            };
        let weight_bram = if l.has_weights() {
            let per_pe = (a.folds(l) * l.window_elems()) as u64 * l.w_fmt.total_bits() as u64;
            a.pe as u64 * blocks(per_pe, budget.bram_bits)
        } else {
            0
        };
        let in_bits = graph.input_precision(i).total_bits() as u64;
        let window_bits = window_capacity(l) as u64 * in_bits;
        let fifo_bits = fifo_depth(l, budget.fifo_depth) as u64 * l.a_fmt.total_bits() as u64;
        let buffer_bram =
            blocks(window_bits, budget.bram_bits) + blocks(fifo_bits, budget.bram_bits);
        let layer = LayerUsage {
            dsp,
            lut,
            bram: weight_bram + buffer_bram,
            weight_bram,
            buffer_bram,
        };
        usage.dsp_used += layer.dsp;
        usage.lut_used += layer.lut;
        usage.bram_used += layer.bram;
        usage.layers.push(layer);
    }
    usage
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AllocError {
    #[error("reserved {resource} ({reserved}) exceeds the budget ({budget})")]
    Reserve {
        resource: &'static str,
        reserved: u64,
        budget: u64,
    },
    #[error("infeasible budget: {needed} {resource} needed, {available} available (largest user: layer {layer})")]
    Infeasible {
        resource: &'static str,
        needed: u64,
        available: u64,
        layer: usize,
    },
}

/// An accepted plan together with the global MAC budget it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub plan: AllocationPlan,
    pub usage: ResourceUsage,
    pub mac_budget: BigInt,
}

fn plan_for(graph: &ModelGraph, dist: &MacDistribution, budget: &BigInt) -> AllocationPlan {
    let layers = graph
        .layers()
        .iter()
        .zip(dist.targets(budget))
        .map(|(l, t)| {
            let (pe, simd) = snap_allocation(l, t);
            LayerAlloc { pe, simd }
        })
        .collect();
    AllocationPlan { layers }
}

/// Smallest global budgets at which some layer's snapped allocation
/// changes, in increasing order.
fn breakpoints(graph: &ModelGraph, dist: &MacDistribution) -> Vec<BigInt> {
    let mut points = Vec::new();
    for (l, d) in graph.layers().iter().zip(dist.shares()) {
        let mut products: Vec<usize> = divisors(l.kernel_elems())
            .into_iter()
            .flat_map(|simd| (1..=l.c_out).map(move |pe| pe * simd))
            .filter(|&p| p > 1)
            .collect();
        products.sort_unstable();
        products.dedup();
        for p in products {
            // floor(B * n / d) >= p  <=>  B >= ceil(p * d / n)
            points.push((BigInt::from(p) * d.denom()).div_ceil(d.numer()));
        }
    }
    points.sort();
    points.dedup();
    points
}

/// Grow the global MAC budget through every point where the snapped plan
/// changes and keep the last plan before the first one that does not fit.
pub fn allocate(graph: &ModelGraph, budget: &ResourceBudget) -> Result<Allocation, AllocError> {
    let avail = budget.available()?;
    let dist = compute_distribution(graph);
    let mut mac_budget = BigInt::one();
    let mut plan = plan_for(graph, &dist, &mac_budget);
    let mut usage = estimate_resources(graph, &plan, budget);
    if let Some(err) = usage.excess(avail) {
        return Err(err);
    }
    for point in breakpoints(graph, &dist) {
        if point <= mac_budget {
            continue;
        }
        let next = plan_for(graph, &dist, &point);
        let next_usage = estimate_resources(graph, &next, budget);
        if next_usage.excess(avail).is_some() {
            break;
        }
        mac_budget = point;
        plan = next;
        usage = next_usage;
    }
    Ok(Allocation {
        plan,
        usage,
        mac_budget,
    })
}
