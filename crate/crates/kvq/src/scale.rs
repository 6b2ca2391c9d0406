//! Per-channel scale computation.
//!
//! The scale for channel (column) `d` is `max_t |K[t,d]| / 127`: the tightest
//! symmetric mapping of the column's range onto the integer interval
//! `[-127, 127]`. Two implementations are provided — a sequential reference
//! and a column-parallel variant — and they are bit-identical for every input
//! and worker count, because a column's max-abs reduction is independent of
//! every other column and insensitive to evaluation order.

use crate::tensor::{Fp32Matrix, ScaleVector};

/// Sequential reference: for each column, scan all rows for the maximum
/// absolute value, then divide by 127.
pub fn compute_scales_ref(k: &Fp32Matrix) -> ScaleVector {
    let mut out = vec![0.0f32; k.cols()];
    compute_scales_ref_into(k, &mut out);
    ScaleVector::from_raw(out)
}

/// Reference variant writing into a caller-owned buffer (used by the
/// benchmark harness to keep allocation out of timed regions).
///
/// # Panics
/// Panics if `out.len() != k.cols()`.
pub fn compute_scales_ref_into(k: &Fp32Matrix, out: &mut [f32]) {
    assert_eq!(out.len(), k.cols(), "scale buffer length must equal cols");
    let (rows, cols, data) = (k.rows(), k.cols(), k.data());
    for d in 0..cols {
        let mut max_abs = 0.0f32;
        for t in 0..rows {
            let v = data[t * cols + d].abs();
            if v > max_abs {
                max_abs = v;
            }
        }
        out[d] = max_abs / 127.0;
    }
}

/// Column-parallel variant: the scale vector is split into contiguous column
/// stripes, one per worker; each worker runs the same scan as the reference
/// over its own columns. Bit-identical to [`compute_scales_ref`] for any
/// worker count.
pub fn compute_scales_par(k: &Fp32Matrix, workers: usize) -> ScaleVector {
    let mut out = vec![0.0f32; k.cols()];
    compute_scales_par_into(k, workers, &mut out);
    ScaleVector::from_raw(out)
}

/// Column-parallel variant writing into a caller-owned buffer.
///
/// # Panics
/// Panics if `out.len() != k.cols()`.
pub fn compute_scales_par_into(k: &Fp32Matrix, workers: usize, out: &mut [f32]) {
    assert_eq!(out.len(), k.cols(), "scale buffer length must equal cols");
    let cols = k.cols();
    let workers = workers.clamp(1, cols);
    let stripe = cols.div_ceil(workers);
    if workers == 1 {
        scan_columns(k, 0, out);
        return;
    }
    std::thread::scope(|scope| {
        for (i, chunk) in out.chunks_mut(stripe).enumerate() {
            scope.spawn(move || scan_columns(k, i * stripe, chunk));
        }
    });
}

/// Scans columns `[first, first + out.len())`, writing one scale per column.
fn scan_columns(k: &Fp32Matrix, first: usize, out: &mut [f32]) {
    let (rows, cols, data) = (k.rows(), k.cols(), k.data());
    for (j, slot) in out.iter_mut().enumerate() {
        let d = first + j;
        let mut max_abs = 0.0f32;
        for t in 0..rows {
            let v = data[t * cols + d].abs();
            if v > max_abs {
                max_abs = v;
            }
        }
        *slot = max_abs / 127.0;
    }
}
