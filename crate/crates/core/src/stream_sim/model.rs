//! Analytic timing: closed-form per-layer costs plus a position-level
//! schedule that replays the window-arrival and row-release rules of the
//! simulator without FIFO backpressure.

use serde::{Deserialize, Serialize};

use crate::balancer::AllocationPlan;
use crate::model_ir::{op_count, ModelGraph};

use super::window::{buffer_rows, last_needed, low_row};
use super::{LayerTiming, TimingReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerModel {
    /// `ceil(c_out / pe) * kernel_elems / simd`.
    pub cycles_per_position: u64,
    /// `positions * cycles_per_position`.
    pub busy_cycles: u64,
    /// Predicted first and last busy cycle.
    pub first_busy: u64,
    pub last_busy: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub timing: TimingReport,
    pub layers: Vec<LayerModel>,
    /// Largest per-layer busy time: the steady-state bound.
    pub bottleneck_cycles: u64,
    pub bottleneck_layer: usize,
    /// Cycle at which the last layer emits its first outputs.
    pub fill_cycles: u64,
}

/// Emission schedule of one layer, enough to derive when each of its
/// output elements becomes visible downstream.
struct Emissions {
    starts: Vec<u64>,
    pe: usize,
    words: u64,
    c_out: usize,
}

impl Emissions {
    /// First cycle at which output element `e` can be read downstream.
    fn visible(&self, e: usize) -> u64 {
        let q = e / self.c_out;
        let fold = (e % self.c_out / self.pe) as u64;
        self.starts[q] + (fold + 1) * self.words
    }
}

/// Predict the timing of `plan` on `graph`. Exact for a single layer
/// with the default FIFO depth; for chains the only neglected effect is
/// a full output FIFO holding a PE group back.
pub fn throughput_model(
    graph: &ModelGraph,
    plan: &AllocationPlan,
    clock_mhz: f64,
) -> AnalyticReport {
    let mut upstream: Option<Emissions> = None;
    let mut models = Vec::with_capacity(graph.len());
    let mut timings = Vec::with_capacity(graph.len());
    for (layer, alloc) in graph.layers().iter().zip(&plan.layers) {
        let positions = layer.positions();
        let per_pos = alloc.position_cycles(layer) as u64;
        let rows = buffer_rows(layer);
        let row_len = layer.x_in * layer.c_in;
        let mut starts = Vec::with_capacity(positions);
        let mut ends: Vec<u64> = Vec::with_capacity(positions);
        // Arrival of input elements, computed lazily in stream order.
        let mut next_e = 0usize;
        let mut last_arrival: Option<u64> = None;
        let mut admit_q = 0usize;
        for q in 0..positions {
            let mut ready = 0;
            if let Some(target) = last_needed(layer, q) {
                while next_e <= target {
                    let row = next_e / row_len;
                    while low_row(layer, admit_q).saturating_add(rows) <= row {
                        admit_q += 1;
                    }
                    debug_assert!(admit_q <= q);
                    let admitted = if admit_q == 0 {
                        0
                    } else {
                        ends[admit_q - 1] + 1
                    };
                    let produced = upstream.as_ref().map_or(0, |u| u.visible(next_e));
                    let after_prev = last_arrival.map_or(0, |a| a + 1);
                    last_arrival = Some(admitted.max(produced).max(after_prev));
                    next_e += 1;
                }
                if target + 1 == next_e {
                    ready = last_arrival.unwrap() + 1;
                }
            }
            let start = ready.max(ends.last().map_or(0, |e| e + 1));
            starts.push(start);
            ends.push(start + per_pos - 1);
        }
        let first = starts[0];
        let last = *ends.last().unwrap();
        let busy = positions as u64 * per_pos;
        models.push(LayerModel {
            cycles_per_position: per_pos,
            busy_cycles: busy,
            first_busy: first,
            last_busy: last,
        });
        timings.push(LayerTiming {
            busy,
            stalled_input: last - first + 1 - busy,
            stalled_output: 0,
            first_busy: Some(first),
            last_busy: Some(last),
        });
        upstream = Some(Emissions {
            starts,
            pe: alloc.pe,
            words: alloc.kernel_cycles(layer) as u64,
            c_out: layer.c_out,
        });
    }
    let last = upstream.expect("graph has at least one layer");
    let total = models.last().unwrap().last_busy + 1;
    let fill = last.starts[0] + last.words - 1;
    let (bottleneck_layer, bottleneck_cycles) = models
        .iter()
        .map(|m| m.busy_cycles)
        .enumerate()
        .max_by_key(|&(i, b)| (b, std::cmp::Reverse(i)))
        .unwrap();
    AnalyticReport {
        timing: TimingReport::new(total, clock_mhz, op_count(graph).ops, timings),
        layers: models,
        bottleneck_cycles,
        bottleneck_layer,
        fill_cycles: fill,
    }
}
