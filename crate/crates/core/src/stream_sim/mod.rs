//! Cycle-stepped model of the streaming pipeline.
//!
//! Every cycle is evaluated in two phases. All decisions (which buffer
//! accepts an element, which PE group computes, which stalls) are taken
//! from the state at the start of the cycle; then they are committed
//! together. Consequently an element written in cycle `t` is visible to
//! its reader from cycle `t + 1`, and freeing rows or FIFO slots in cycle
//! `t` admits new data only from `t + 1`.
//!
//! Per cycle:
//! - the injector offers one input element to the first layer;
//! - each input stage takes at most one element from its upstream FIFO,
//!   provided the element's row fits in the buffer;
//! - each PE group processes one SIMD word once the whole window of its
//!   current position is resident, and emits one output per active PE on
//!   the last word of a fold if its output FIFO has room;
//! - the collector drains the last FIFO.

pub mod fifo;
pub mod model;
pub mod pe;
pub mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balancer::{AllocationPlan, PlanError, DEFAULT_CLOCK_MHZ};
use crate::fixed_point::{AccumulatorOverflow, Precision};
use crate::model_ir::{op_count, LayerKind, LayerSpec, ModelGraph, ParamSet, Tensor};

pub use fifo::StreamFifo;
pub use model::{throughput_model, AnalyticReport, LayerModel};
pub use pe::{MacPath, PeGroup};
pub use window::{
    last_needed, low_row, window_capacity, window_sequence, WindowBuffer, WindowCoord,
};

/// Output FIFO depth of `layer`: the configured value or twice its
/// output channels.
pub fn fifo_depth(layer: &LayerSpec, configured: Option<usize>) -> usize {
    configured.unwrap_or(2 * layer.c_out)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("parameter set has {found} layers, graph has {expected}")]
    ParamCount { expected: usize, found: usize },
    #[error("input tensor {found:?} in {found_fmt} does not match expected {expected:?} in {expected_fmt}")]
    Input {
        expected: (usize, usize, usize),
        expected_fmt: Precision,
        found: (usize, usize, usize),
        found_fmt: Precision,
    },
    #[error("layer {layer}: FIFO depth {depth} cannot take the {pe} outputs of one fold")]
    FifoDepth {
        layer: usize,
        depth: usize,
        pe: usize,
    },
    #[error("deadlock: no progress since cycle {since}")]
    Deadlock { since: u64 },
    #[error("layer {layer}: {source}")]
    Overflow {
        layer: usize,
        source: AccumulatorOverflow,
    },
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub clock_mhz: f64,
    /// Overrides every inter-layer FIFO depth.
    pub fifo_depth: Option<usize>,
    /// Route binary layers through `±1` multiplication instead of XNOR.
    pub force_multiply: bool,
    /// Record the coordinates of every element pushed into each FIFO.
    pub trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            clock_mhz: DEFAULT_CLOCK_MHZ,
            fifo_depth: None,
            force_multiply: false,
            trace: false,
        }
    }
}

/// Per-layer cycle counters. Stalls are counted only after the first
/// busy cycle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub busy: u64,
    pub stalled_input: u64,
    pub stalled_output: u64,
    pub first_busy: Option<u64>,
    pub last_busy: Option<u64>,
}

impl LayerTiming {
    /// Cycles from the first to the last busy cycle.
    pub fn active_cycles(&self) -> u64 {
        match (self.first_busy, self.last_busy) {
            (Some(a), Some(b)) => b - a + 1,
            _ => 0,
        }
    }

    pub fn input_stall_fraction(&self) -> f64 {
        match self.active_cycles() {
            0 => 0.0,
            n => self.stalled_input as f64 / n as f64,
        }
    }
}

/// Milliseconds for `cycles` at `clock_mhz`.
pub fn latency_ms(cycles: u64, clock_mhz: f64) -> f64 {
    cycles as f64 / (clock_mhz * 1e3)
}

/// Giga-operations per second for `ops` finished in `latency_ms`.
pub fn throughput_gops(ops: u64, latency_ms: f64) -> f64 {
    if latency_ms > 0.0 {
        ops as f64 / (latency_ms * 1e6)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Cycle index of the final emission plus one.
    pub total_cycles: u64,
    pub clock_mhz: f64,
    pub latency_ms: f64,
    pub ops: u64,
    pub throughput_gops: f64,
    pub layers: Vec<LayerTiming>,
}

impl TimingReport {
    pub fn new(total_cycles: u64, clock_mhz: f64, ops: u64, layers: Vec<LayerTiming>) -> Self {
        let latency = latency_ms(total_cycles, clock_mhz);
        Self {
            total_cycles,
            clock_mhz,
            latency_ms: latency,
            ops,
            throughput_gops: throughput_gops(ops, latency),
            layers,
        }
    }
}

/// How a block receives its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputStageKind {
    /// `k_y + s_y` rows replayed as sliding windows.
    SlidingWindow,
    /// The whole input held once (FC layers).
    Cache,
}

#[derive(Debug, Clone)]
pub struct LayerBlock {
    layer: LayerSpec,
    stage: InputStageKind,
    input: WindowBuffer,
    pe: PeGroup,
    out: StreamFifo,
}

impl LayerBlock {
    pub fn layer(&self) -> &LayerSpec {
        &self.layer
    }

    pub fn stage_kind(&self) -> InputStageKind {
        self.stage
    }

    /// The sliding-window generator, absent for FC layers.
    pub fn window_buffer(&self) -> Option<&WindowBuffer> {
        (self.stage == InputStageKind::SlidingWindow).then_some(&self.input)
    }

    pub fn input_stage(&self) -> &WindowBuffer {
        &self.input
    }

    pub fn pe_group(&self) -> &PeGroup {
        &self.pe
    }

    pub fn output_fifo(&self) -> &StreamFifo {
        &self.out
    }
}

/// A pipeline ready to run. [`PipelineSim::run`] starts from this state
/// every time, so repeated runs are independent.
#[derive(Debug, Clone)]
pub struct PipelineSim {
    graph: ModelGraph,
    plan: AllocationPlan,
    blocks: Vec<LayerBlock>,
    options: SimOptions,
}

/// Element coordinates `(y, x, c)` in push order, per FIFO.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamTrace {
    pub fifo_pushes: Vec<Vec<(usize, usize, usize)>>,
}

/// Element counts observed on every stream after a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamCounts {
    /// Elements taken by each layer's input stage.
    pub accepted: Vec<u64>,
    pub pushed: Vec<u64>,
    pub popped: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub output: Tensor,
    pub timing: TimingReport,
    pub counts: StreamCounts,
    pub trace: Option<StreamTrace>,
}

pub fn build_pipeline(
    graph: &ModelGraph,
    plan: &AllocationPlan,
    params: &ParamSet,
) -> Result<PipelineSim, SimError> {
    build_pipeline_with(graph, plan, params, SimOptions::default())
}

pub fn build_pipeline_with(
    graph: &ModelGraph,
    plan: &AllocationPlan,
    params: &ParamSet,
    options: SimOptions,
) -> Result<PipelineSim, SimError> {
    plan.validate(graph)?;
    if params.layers().len() != graph.len() {
        return Err(SimError::ParamCount {
            expected: graph.len(),
            found: params.layers().len(),
        });
    }
    let mut blocks = Vec::with_capacity(graph.len());
    for (i, (layer, alloc)) in graph.layers().iter().zip(&plan.layers).enumerate() {
        let depth = fifo_depth(layer, options.fifo_depth);
        if depth < alloc.pe {
            return Err(SimError::FifoDepth {
                layer: i,
                depth,
                pe: alloc.pe,
            });
        }
        blocks.push(LayerBlock {
            layer: layer.clone(),
            stage: if layer.kind == LayerKind::Fc {
                InputStageKind::Cache
            } else {
                InputStageKind::SlidingWindow
            },
            input: WindowBuffer::new(layer),
            pe: PeGroup::new(
                layer,
                graph.input_precision(i),
                *alloc,
                params.layer(i),
                options.force_multiply,
            ),
            out: StreamFifo::new(depth),
        });
    }
    Ok(PipelineSim {
        graph: graph.clone(),
        plan: plan.clone(),
        blocks,
        options,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PeAction {
    Done,
    Busy,
    StallInput,
    StallOutput,
}

impl PipelineSim {
    pub fn blocks(&self) -> &[LayerBlock] {
        &self.blocks
    }

    pub fn plan(&self) -> &AllocationPlan {
        &self.plan
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    /// Cycles without progress after which the run is declared dead.
    fn deadlock_limit(&self) -> u64 {
        self.blocks
            .iter()
            .map(|b| (b.out.capacity() + b.input.capacity() + b.layer.kernel_elems()) as u64)
            .max()
            .unwrap_or(1)
    }

    pub fn run(&self, input: &Tensor) -> Result<SimOutcome, SimError> {
        if input.dims() != self.graph.input_dims() || input.precision() != self.graph.input_fmt() {
            return Err(SimError::Input {
                expected: self.graph.input_dims(),
                expected_fmt: self.graph.input_fmt(),
                found: input.dims(),
                found_fmt: input.precision(),
            });
        }
        let mut blocks = self.blocks.clone();
        let n = blocks.len();
        let total_out = self.graph.layers()[n - 1].output_elems();
        let data = input.data();
        let mut injected = 0usize;
        let mut accepted = vec![0u64; n];
        let mut collected = Vec::with_capacity(total_out);
        let mut timing = vec![LayerTiming::default(); n];
        let mut trace = self.options.trace.then(|| StreamTrace {
            fifo_pushes: vec![Vec::new(); n],
        });
        let limit = self.deadlock_limit();
        let mut actions = vec![PeAction::Done; n];
        let mut takes = vec![false; n];
        let mut emitted = Vec::new();
        let mut last_emit = 0u64;
        let mut idle = 0u64;
        let mut t = 0u64;
        loop {
            let finished = blocks.iter().all(|b| b.pe.done() && b.out.occupancy() == 0)
                && injected == data.len()
                && collected.len() == total_out;
            if finished {
                break;
            }

            // Decide from the start-of-cycle state.
            takes[0] = injected < data.len() && blocks[0].input.can_accept();
            for i in 1..n {
                takes[i] = blocks[i - 1].out.occupancy() > 0 && blocks[i].input.can_accept();
            }
            let drain = blocks[n - 1].out.occupancy();
            for (i, b) in blocks.iter().enumerate() {
                actions[i] = match b.pe.position() {
                    None => PeAction::Done,
                    Some(q) => {
                        let ready = last_needed(&b.layer, q).is_none_or(|e| b.input.received() > e);
                        if !ready {
                            PeAction::StallInput
                        } else if b.pe.at_last_word() && b.out.space() < b.pe.active() {
                            PeAction::StallOutput
                        } else {
                            PeAction::Busy
                        }
                    }
                };
            }

            // Commit.
            let mut progress = drain > 0 || takes.iter().any(|&x| x);
            for (i, block) in blocks.iter_mut().enumerate() {
                let stats = &mut timing[i];
                match actions[i] {
                    PeAction::Done => {}
                    PeAction::StallInput => {
                        if stats.first_busy.is_some() {
                            stats.stalled_input += 1;
                        }
                    }
                    PeAction::StallOutput => {
                        if stats.first_busy.is_some() {
                            stats.stalled_output += 1;
                        }
                    }
                    PeAction::Busy => {
                        progress = true;
                        stats.busy += 1;
                        stats.first_busy.get_or_insert(t);
                        stats.last_busy = Some(t);
                        let LayerBlock {
                            layer,
                            input,
                            pe,
                            out,
                            ..
                        } = block;
                        let q = pe.position().unwrap();
                        let first_channel = pe.fold() * pe.pe();
                        emitted.clear();
                        let completed = pe
                            .step(|y, x, c| input.get(y, x, c), &mut emitted)
                            .map_err(|source| SimError::Overflow { layer: i, source })?;
                        for (p, &raw) in emitted.iter().enumerate() {
                            out.push(raw);
                            if let Some(tr) = trace.as_mut() {
                                let (yo, xo) = window::position(layer, q);
                                tr.fifo_pushes[i].push((yo, xo, first_channel + p));
                            }
                        }
                        if !emitted.is_empty() && i == n - 1 {
                            last_emit = t;
                        }
                        if completed {
                            let next = match pe.position() {
                                Some(q) => low_row(layer, q),
                                None => usize::MAX,
                            };
                            input.release_below(next);
                        }
                    }
                }
            }
            if takes[0] {
                blocks[0].input.push(data[injected]);
                injected += 1;
                accepted[0] += 1;
            }
            for i in 1..n {
                if takes[i] {
                    let v = blocks[i - 1]
                        .out
                        .pop()
                        .expect("decided on a non-empty FIFO");
                    blocks[i].input.push(v);
                    accepted[i] += 1;
                }
            }
            for _ in 0..drain {
                collected.push(blocks[n - 1].out.pop().unwrap());
            }

            if progress {
                idle = 0;
            } else {
                idle += 1;
                if idle > limit {
                    return Err(SimError::Deadlock {
                        since: t - idle + 1,
                    });
                }
            }
            t += 1;
        }

        let output = Tensor::new(self.graph.output_dims(), self.graph.output_fmt(), collected)
            .expect("collector holds exactly the output tensor");
        let ops = op_count(&self.graph).ops;
        let counts = StreamCounts {
            accepted,
            pushed: blocks.iter().map(|b| b.out.pushed()).collect(),
            popped: blocks.iter().map(|b| b.out.popped()).collect(),
        };
        Ok(SimOutcome {
            output,
            timing: TimingReport::new(last_emit + 1, self.options.clock_mhz, ops, timing),
            counts,
            trace,
        })
    }
}

/// Run `sim` on `input`.
pub fn run(sim: &PipelineSim, input: &Tensor) -> Result<SimOutcome, SimError> {
    sim.run(input)
}

#[cfg(test)]
mod tests;
