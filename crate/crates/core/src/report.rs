//! Report documents for the command-line front end and their two
//! renderings: a fixed-width table for people and canonical JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::balancer::{
    Allocation, AllocationPlan, LayerAlloc, LayerUsage, ResourceBudget, ResourceUsage,
};
use crate::model_ir::{op_count, ModelGraph, OpCount};
use crate::stream_sim::{fifo_depth, throughput_model, window_capacity, LayerTiming, TimingReport};

/// One layer block of a compiled pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub index: usize,
    pub kind: String,
    /// Input `(y, x, c)`.
    pub input: (usize, usize, usize),
    /// Output `(y, x, c)`.
    pub output: (usize, usize, usize),
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub w_bits: u32,
    pub a_bits: u32,
    pub pe: usize,
    pub simd: usize,
    /// SIMD words per kernel pass.
    pub kernel_cycles: usize,
    pub folds: usize,
    pub cycles_per_position: usize,
    /// Elements held by the input stage.
    pub window_buffer: usize,
    pub fifo_depth: usize,
    /// Addresses in each PE's weight memory.
    pub weight_words: usize,
    pub cost: LayerUsage,
}

/// A compiled network: plan, per-block structure and resource tallies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineDescription {
    pub name: String,
    pub clock_mhz: f64,
    pub budget: ResourceBudget,
    pub usage: ResourceUsage,
    /// Global MAC budget the plan was snapped from, in decimal.
    pub mac_budget: String,
    pub total_mac_units: usize,
    pub ops: OpCount,
    /// Analytic prediction for one frame.
    pub predicted_cycles: u64,
    pub predicted_latency_ms: f64,
    pub predicted_gops: f64,
    pub blocks: Vec<BlockRecord>,
}

impl PipelineDescription {
    pub fn plan(&self) -> AllocationPlan {
        AllocationPlan {
            layers: self
                .blocks
                .iter()
                .map(|b| LayerAlloc {
                    pe: b.pe,
                    simd: b.simd,
                })
                .collect(),
        }
    }
}

pub fn describe(
    graph: &ModelGraph,
    alloc: &Allocation,
    budget: &ResourceBudget,
) -> PipelineDescription {
    let model = throughput_model(graph, &alloc.plan, budget.clock_mhz);
    let blocks = graph
        .layers()
        .iter()
        .zip(&alloc.plan.layers)
        .zip(&alloc.usage.layers)
        .enumerate()
        .map(|(index, ((l, a), cost))| BlockRecord {
            index,
            kind: l.kind.name().to_string(),
            input: (l.y_in, l.x_in, l.c_in),
            output: (l.y_out(), l.x_out(), l.c_out),
            kernel: (l.k_y, l.k_x),
            stride: (l.s_y, l.s_x),
            padding: (l.p_y, l.p_x),
            w_bits: if l.has_weights() {
                l.w_fmt.total_bits()
            } else {
                0
            },
            a_bits: l.a_fmt.total_bits(),
            pe: a.pe,
            simd: a.simd,
            kernel_cycles: a.kernel_cycles(l),
            folds: a.folds(l),
            cycles_per_position: a.position_cycles(l),
            window_buffer: window_capacity(l),
            fifo_depth: fifo_depth(l, budget.fifo_depth),
            weight_words: if l.has_weights() {
                a.folds(l) * a.kernel_cycles(l)
            } else {
                0
            },
            cost: *cost,
        })
        .collect();
    PipelineDescription {
        name: graph.name().to_string(),
        clock_mhz: budget.clock_mhz,
        budget: budget.clone(),
        usage: alloc.usage.clone(),
        mac_budget: alloc.mac_budget.to_string(),
        total_mac_units: alloc.plan.total_mac_units(),
        ops: op_count(graph),
        predicted_cycles: model.timing.total_cycles,
        predicted_latency_ms: model.timing.latency_ms,
        predicted_gops: model.timing.throughput_gops,
        blocks,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StallRow {
    pub layer: usize,
    pub busy: u64,
    pub stalled_input: u64,
    pub stalled_output: u64,
    pub active: u64,
    pub input_stall_fraction: f64,
}

impl StallRow {
    fn new(layer: usize, t: &LayerTiming) -> Self {
        Self {
            layer,
            busy: t.busy,
            stalled_input: t.stalled_input,
            stalled_output: t.stalled_output,
            active: t.active_cycles(),
            input_stall_fraction: t.input_stall_fraction(),
        }
    }
}

/// Result of one simulated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReportDoc {
    pub name: String,
    pub total_cycles: u64,
    pub clock_mhz: f64,
    pub latency_ms: f64,
    pub ops: OpCount,
    pub throughput_gops: f64,
    pub budget: ResourceBudget,
    pub usage: ResourceUsage,
    pub plan: AllocationPlan,
    pub stalls: Vec<StallRow>,
    /// Set when the output was checked against the reference.
    pub oracle_checked: bool,
}

impl SimReportDoc {
    pub fn new(
        graph: &ModelGraph,
        timing: &TimingReport,
        alloc: &Allocation,
        budget: &ResourceBudget,
        oracle_checked: bool,
    ) -> Self {
        Self {
            name: graph.name().to_string(),
            total_cycles: timing.total_cycles,
            clock_mhz: timing.clock_mhz,
            latency_ms: timing.latency_ms,
            ops: op_count(graph),
            throughput_gops: timing.throughput_gops,
            budget: budget.clone(),
            usage: alloc.usage.clone(),
            plan: alloc.plan.clone(),
            stalls: timing
                .layers
                .iter()
                .enumerate()
                .map(|(i, t)| StallRow::new(i, t))
                .collect(),
            oracle_checked,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Human,
    Machine,
}

pub trait ReportDocument: Serialize {
    fn human(&self) -> String;
}

/// Render `doc`. Machine output is pretty JSON with a trailing newline;
/// field order is fixed by the type, so equal documents give equal bytes.
pub fn render_report<D: ReportDocument>(doc: &D, format: Format) -> String {
    match format {
        Format::Human => doc.human(),
        Format::Machine => {
            let mut s = serde_json::to_string_pretty(doc).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

fn pct(used: u64, avail: u64) -> String {
    if avail == 0 {
        format!("{used}")
    } else {
        format!("{used} ({:.1}%)", 100.0 * used as f64 / avail as f64)
    }
}

fn summary_table(
    out: &mut String,
    latency_ms: f64,
    gops: f64,
    usage: &ResourceUsage,
    budget: &ResourceBudget,
) {
    let dsp = usage.dsp_used + budget.reserved.dsp;
    let bram = usage.bram_used + budget.reserved.bram;
    let lut = usage.lut_used + budget.reserved.lut;
    let _ = writeln!(
        out,
        "{:>14} {:>18} {:>18} {:>4} {:>14} {:>14}",
        "Latency [ms]", "Throughput [GOP/s]", "LUT", "FF", "DSP", "BRAM"
    );
    let _ = writeln!(
        out,
        "{:>14.6} {:>18.6} {:>18} {:>4} {:>14} {:>14}",
        latency_ms,
        gops,
        pct(lut, budget.lut),
        "n/a",
        pct(dsp, budget.dsp),
        pct(bram, budget.bram)
    );
}

impl ReportDocument for PipelineDescription {
    fn human(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "pipeline {} @ {} MHz (predicted)",
            self.name, self.clock_mhz
        );
        summary_table(
            &mut out,
            self.predicted_latency_ms,
            self.predicted_gops,
            &self.usage,
            &self.budget,
        );
        let _ = writeln!(
            out,
            "\n{:>5} {:<7} {:>14} {:>14} {:>5} {:>5} {:>8} {:>8} {:>8} {:>5} {:>6} {:>6} {:>5}",
            "layer",
            "kind",
            "in (y,x,c)",
            "out (y,x,c)",
            "pe",
            "simd",
            "cyc/pos",
            "window",
            "wwords",
            "fifo",
            "dsp",
            "lut",
            "bram"
        );
        for b in &self.blocks {
            let dims = |d: (usize, usize, usize)| format!("{}x{}x{}", d.0, d.1, d.2);
            let _ = writeln!(
                out,
                "{:>5} {:<7} {:>14} {:>14} {:>5} {:>5} {:>8} {:>8} {:>8} {:>5} {:>6} {:>6} {:>5}",
                b.index,
                b.kind,
                dims(b.input),
                dims(b.output),
                b.pe,
                b.simd,
                b.cycles_per_position,
                b.window_buffer,
                b.weight_words,
                b.fifo_depth,
                b.cost.dsp,
                b.cost.lut,
                b.cost.bram
            );
        }
        out
    }
}

impl ReportDocument for SimReportDoc {
    fn human(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "simulation {} @ {} MHz: {} cycles, {} ops",
            self.name, self.clock_mhz, self.total_cycles, self.ops.ops
        );
        summary_table(
            &mut out,
            self.latency_ms,
            self.throughput_gops,
            &self.usage,
            &self.budget,
        );
        let _ = writeln!(
            out,
            "\n{:>5} {:>5} {:>5} {:>12} {:>12} {:>12} {:>12} {:>8}",
            "layer", "pe", "simd", "busy", "stall in", "stall out", "active", "stall %"
        );
        for (s, a) in self.stalls.iter().zip(&self.plan.layers) {
            let _ = writeln!(
                out,
                "{:>5} {:>5} {:>5} {:>12} {:>12} {:>12} {:>12} {:>8.2}",
                s.layer,
                a.pe,
                a.simd,
                s.busy,
                s.stalled_input,
                s.stalled_output,
                s.active,
                100.0 * s.input_stall_fraction
            );
        }
        if self.oracle_checked {
            let _ = writeln!(out, "\noutput matches the reference");
        }
        out
    }
}
