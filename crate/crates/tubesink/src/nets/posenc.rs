//! Fixed 3-D sinusoidal positional encodings, factorized over (t, y, x).
//!
//! The embedding width is split into three even-sized chunks, one per axis,
//! each filled with the classic interleaved sin/cos bands. Fixed encodings
//! keep the model free of positional init hyperparameters.

use crate::tensor::Tensor;

/// Per-axis chunk widths for a total width `d` (must be even). The time
/// axis gets roughly a third; leftover width goes to y then x. At very
/// small widths a trailing axis may receive no bands.
pub fn axis_chunks(d: usize) -> (usize, usize, usize) {
    assert!(d % 2 == 0, "positional encoding width must be even");
    let even = |v: usize| v - v % 2;
    let dt = even(d / 3).max(2).min(d);
    let rest = d - dt;
    let dy = even(rest / 2 + 1).min(rest);
    let dx = rest - dy;
    (dt, dy, dx)
}

fn fill_axis(out: &mut [f64], pos: f64, chunk: usize) {
    for i in 0..chunk / 2 {
        let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / chunk as f64);
        out[2 * i] = (pos * freq).sin();
        out[2 * i + 1] = (pos * freq).cos();
    }
}

/// Encoding rows for the given grid positions, shape `[n, d]`.
pub fn posenc_3d(positions: &[[usize; 3]], d: usize) -> Tensor {
    let (dt, dy, dx) = axis_chunks(d);
    let mut out = Tensor::zeros(positions.len(), d);
    for (row, pos) in positions.iter().enumerate() {
        let dst = out.row_mut(row);
        fill_axis(&mut dst[..dt], pos[0] as f64, dt);
        fill_axis(&mut dst[dt..dt + dy], pos[1] as f64, dy);
        fill_axis(&mut dst[dt + dy..], pos[2] as f64, dx);
    }
    out
}
