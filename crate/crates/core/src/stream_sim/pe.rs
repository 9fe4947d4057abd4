//! Processing-element group: weight memories, accumulators and the
//! position/fold/word counters that sequence one layer's work.

use crate::balancer::LayerAlloc;
use crate::fixed_point::{
    pack_bits, xnor_popcount_masked, Accumulator, AccumulatorOverflow, Precision,
};
use crate::model_ir::{LayerKind, LayerParams, LayerSpec};
use crate::oracle::{avgpool_reciprocal, finish_output};

use super::window::{kernel_coord, position};

/// Which arithmetic the MAC stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacPath {
    /// `a * w` on signed codes, padding skipped.
    Multiply,
    /// Binary activations and weights through XNOR and popcount.
    Xnor,
    /// Per-channel window sum for average pooling.
    Sum,
}

#[derive(Debug, Clone)]
pub struct PeGroup {
    layer: LayerSpec,
    in_prec: Precision,
    pe: usize,
    simd: usize,
    words: usize,
    folds: usize,
    path: MacPath,
    /// `memory[p][addr * simd + j]`.
    memory: Vec<Vec<i32>>,
    /// Packed weight words for the XNOR path: `packed[p][addr]`.
    packed: Vec<Vec<Vec<u64>>>,
    params: LayerParams,
    accs: Vec<Accumulator>,
    pos: usize,
    fold: usize,
    word: usize,
    /// Scratch for one SIMD word: activation codes and validity.
    lane_vals: Vec<i32>,
    lane_valid: Vec<bool>,
}

impl PeGroup {
    pub fn new(
        layer: &LayerSpec,
        in_prec: Precision,
        alloc: LayerAlloc,
        params: &LayerParams,
        force_multiply: bool,
    ) -> Self {
        let pe = alloc.pe;
        let simd = alloc.simd;
        let words = alloc.kernel_cycles(layer);
        let folds = alloc.folds(layer);
        let path = if layer.kind == LayerKind::AvgPool {
            MacPath::Sum
        } else if in_prec.is_binary() && layer.w_fmt.is_binary() && !force_multiply {
            MacPath::Xnor
        } else {
            MacPath::Multiply
        };
        let window = layer.window_elems();
        let mut memory = vec![Vec::new(); pe];
        if layer.has_weights() {
            for (p, mem) in memory.iter_mut().enumerate() {
                for f in 0..folds {
                    let co = f * pe + p;
                    for k in 0..words * simd {
                        mem.push(if co < layer.c_out {
                            params.weight(window, co, k)
                        } else {
                            0
                        });
                    }
                }
            }
        }
        let packed = if path == MacPath::Xnor {
            memory
                .iter()
                .map(|mem| {
                    mem.chunks(simd)
                        .map(|w| pack_bits(w.iter().map(|&b| b != 0)))
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        Self {
            layer: layer.clone(),
            in_prec,
            pe,
            simd,
            words,
            folds,
            path,
            memory,
            packed,
            params: params.clone(),
            accs: vec![Accumulator::new(layer.acc_frac(in_prec)); pe],
            pos: 0,
            fold: 0,
            word: 0,
            lane_vals: vec![0; simd],
            lane_valid: vec![false; simd],
        }
    }

    pub fn pe(&self) -> usize {
        self.pe
    }

    pub fn simd(&self) -> usize {
        self.simd
    }

    /// Index of the current pass over the output channels.
    pub fn fold(&self) -> usize {
        self.fold
    }

    pub fn path(&self) -> MacPath {
        self.path
    }

    /// Addresses per PE memory: one SIMD word per address.
    pub fn words_per_pe(&self) -> usize {
        self.folds * self.words
    }

    /// The `simd` weights of PE `p` at address `addr`.
    pub fn weight_word(&self, p: usize, addr: usize) -> &[i32] {
        &self.memory[p][addr * self.simd..(addr + 1) * self.simd]
    }

    /// Current output position, or `None` once the layer is finished.
    pub fn position(&self) -> Option<usize> {
        (self.pos < self.layer.positions()).then_some(self.pos)
    }

    pub fn done(&self) -> bool {
        self.pos >= self.layer.positions()
    }

    /// Output channels produced by the current fold.
    pub fn active(&self) -> usize {
        self.pe.min(self.layer.c_out - self.fold * self.pe)
    }

    /// True when the current cycle finishes a fold and emits outputs.
    pub fn at_last_word(&self) -> bool {
        self.word + 1 == self.words
    }

    /// Run one SIMD word. `read` returns the raw input code at `(y, x, c)`.
    /// Returns the emitted outputs (in channel order) on the last word of
    /// a fold and whether the position is complete.
    pub fn step(
        &mut self,
        read: impl Fn(usize, usize, usize) -> i32,
        out: &mut Vec<i32>,
    ) -> Result<bool, AccumulatorOverflow> {
        let l = &self.layer;
        let (yo, xo) = position(l, self.pos);
        let active = self.active();
        if self.word == 0 {
            let frac = l.acc_frac(self.in_prec);
            self.accs
                .iter_mut()
                .for_each(|a| *a = Accumulator::new(frac));
        }
        match self.path {
            MacPath::Sum => {
                for p in 0..active {
                    let co = self.fold * self.pe + p;
                    for j in 0..self.simd {
                        let (ky, kx, _) = kernel_coord(l, self.word * self.simd + j);
                        if let Some((y, x)) = crate::oracle::input_coord(l, yo, xo, ky, kx) {
                            self.accs[p].add(self.in_prec.signed_value(read(y, x, co)))?;
                        }
                    }
                }
            }
            _ => {
                for j in 0..self.simd {
                    let (ky, kx, ci) = kernel_coord(l, self.word * self.simd + j);
                    match crate::oracle::input_coord(l, yo, xo, ky, kx) {
                        Some((y, x)) => {
                            self.lane_vals[j] = read(y, x, ci);
                            self.lane_valid[j] = true;
                        }
                        None => {
                            self.lane_vals[j] = 0;
                            self.lane_valid[j] = false;
                        }
                    }
                }
                let addr = self.fold * self.words + self.word;
                if self.path == MacPath::Xnor {
                    let bits = pack_bits(self.lane_vals.iter().map(|&v| v != 0));
                    let mask = pack_bits(self.lane_valid.iter().copied());
                    for p in 0..active {
                        let dot = xnor_popcount_masked(&bits, &self.packed[p][addr], &mask);
                        self.accs[p].add(dot)?;
                    }
                } else {
                    for p in 0..active {
                        let w = &self.memory[p][addr * self.simd..(addr + 1) * self.simd];
                        for j in 0..self.simd {
                            if self.lane_valid[j] {
                                let a = self.in_prec.signed_value(self.lane_vals[j]);
                                self.accs[p].mac_raw(a, l.w_fmt.signed_value(w[j]))?;
                            }
                        }
                    }
                }
            }
        }
        if !self.at_last_word() {
            self.word += 1;
            return Ok(false);
        }
        for p in 0..active {
            let co = self.fold * self.pe + p;
            let mut acc = self.accs[p];
            if self.path == MacPath::Sum {
                let mut scaled = Accumulator::new(acc.frac());
                scaled.mac_raw(acc.value(), avgpool_reciprocal(l))?;
                acc = scaled;
            }
            out.push(finish_output(l, &self.params, co, acc)?);
        }
        self.word = 0;
        self.fold += 1;
        if self.fold < self.folds {
            return Ok(false);
        }
        self.fold = 0;
        self.pos += 1;
        Ok(true)
    }
}
