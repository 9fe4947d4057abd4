//! Sliding-window geometry and the line buffer feeding each PE group.

use crate::model_ir::{LayerKind, LayerSpec};

/// One coordinate of a window stream. `x`/`y` may lie in the padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowCoord {
    pub x: isize,
    pub y: isize,
    pub c: usize,
    pub padded: bool,
}

/// Every window of `layer` in processing order: output positions
/// row-major, and within a window channel-first, then x, then y.
pub fn window_sequence(layer: &LayerSpec) -> Vec<WindowCoord> {
    let mut seq = Vec::with_capacity(layer.positions() * layer.window_elems());
    for yo in 0..layer.y_out() {
        for xo in 0..layer.x_out() {
            for ky in 0..layer.k_y {
                for kx in 0..layer.k_x {
                    let y = (yo * layer.s_y + ky) as isize - layer.p_y as isize;
                    let x = (xo * layer.s_x + kx) as isize - layer.p_x as isize;
                    let padded =
                        y < 0 || x < 0 || y >= layer.y_in as isize || x >= layer.x_in as isize;
                    for c in 0..layer.c_in {
                        seq.push(WindowCoord { x, y, c, padded });
                    }
                }
            }
        }
    }
    seq
}

/// Rows of the input a window row range touches, clipped to the image.
fn valid_span(
    out: usize,
    stride: usize,
    pad: usize,
    kernel: usize,
    extent: usize,
) -> Option<(usize, usize)> {
    let first = (out * stride) as isize - pad as isize;
    let last = first + kernel as isize - 1;
    let lo = first.max(0);
    let hi = last.min(extent as isize - 1);
    (lo <= hi).then_some((lo as usize, hi as usize))
}

/// Output position `q` as `(y_out, x_out)`.
pub fn position(layer: &LayerSpec, q: usize) -> (usize, usize) {
    (q / layer.x_out(), q % layer.x_out())
}

/// Stream index of the last input element the window at position `q`
/// reads, or `None` when the window lies entirely in the padding.
pub fn last_needed(layer: &LayerSpec, q: usize) -> Option<usize> {
    let (yo, xo) = position(layer, q);
    let (_, y_hi) = valid_span(yo, layer.s_y, layer.p_y, layer.k_y, layer.y_in)?;
    let (_, x_hi) = valid_span(xo, layer.s_x, layer.p_x, layer.k_x, layer.x_in)?;
    Some((y_hi * layer.x_in + x_hi) * layer.c_in + layer.c_in - 1)
}

/// Lowest input row the window at position `q` may still read. Rows
/// below it can be released once the PE group reaches `q`.
pub fn low_row(layer: &LayerSpec, q: usize) -> usize {
    let (yo, _) = position(layer, q);
    (yo * layer.s_y).saturating_sub(layer.p_y)
}

/// Rows held by the input stage: `k_y + s_y` for sliding windows, the
/// whole feature map for FC layers.
pub fn buffer_rows(layer: &LayerSpec) -> usize {
    match layer.kind {
        LayerKind::Fc => layer.y_in,
        _ => layer.k_y + layer.s_y,
    }
}

/// Element capacity of the input stage.
pub fn window_capacity(layer: &LayerSpec) -> usize {
    buffer_rows(layer) * layer.x_in * layer.c_in
}

/// Decompose a flat kernel index into `(k_y, k_x, c_in)`.
pub fn kernel_coord(layer: &LayerSpec, k: usize) -> (usize, usize, usize) {
    match layer.kind {
        LayerKind::AvgPool => (k / layer.k_x, k % layer.k_x, 0),
        _ => (
            k / (layer.k_x * layer.c_in),
            (k / layer.c_in) % layer.k_x,
            k % layer.c_in,
        ),
    }
}

/// Ring of input rows. Elements arrive in stream order; a new element is
/// admitted only while its row fits above the lowest row still in use.
#[derive(Debug, Clone)]
pub struct WindowBuffer {
    channels: usize,
    row_len: usize,
    rows: usize,
    total: usize,
    data: Vec<i32>,
    received: usize,
    low_row: usize,
}

impl WindowBuffer {
    pub fn new(layer: &LayerSpec) -> Self {
        let row_len = layer.x_in * layer.c_in;
        let rows = buffer_rows(layer);
        Self {
            channels: layer.c_in,
            row_len,
            rows,
            total: layer.input_elems(),
            data: vec![0; rows * row_len],
            received: 0,
            low_row: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.data.len()
    }

    /// Elements written so far (the write cursor).
    pub fn received(&self) -> usize {
        self.received
    }

    pub fn low_row(&self) -> usize {
        self.low_row
    }

    pub fn can_accept(&self) -> bool {
        self.received < self.total
            && self.received / self.row_len < self.low_row.saturating_add(self.rows)
    }

    pub fn push(&mut self, raw: i32) {
        debug_assert!(self.can_accept());
        let cap = self.data.len();
        self.data[self.received % cap] = raw;
        self.received += 1;
    }

    /// Raw code at input coordinate `(y, x, c)`; the row must be resident.
    pub fn get(&self, y: usize, x: usize, c: usize) -> i32 {
        let flat = y * self.row_len + x * self.channels + c;
        debug_assert!(
            y >= self.low_row && flat < self.received,
            "read outside resident rows"
        );
        self.data[flat % self.data.len()]
    }

    /// Move the read cursor; rows below `row` become free.
    pub fn release_below(&mut self, row: usize) {
        self.low_row = self.low_row.max(row);
    }
}
