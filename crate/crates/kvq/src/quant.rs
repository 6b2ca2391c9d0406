//! Quantize/dequantize kernels behind a uniform backend interface.
//!
//! Five backends implement the same two maps:
//!
//! * quantize: `out[t,d] = clamp(round_half_even(K[t,d] / s_d), -127, 127)`,
//!   with the convention that a zero scale (an all-zero column) produces the
//!   code 0 directly;
//! * dequantize: `out[t,d] = f32(Q[t,d]) * s_d`.
//!
//! The backends differ **only** in how they decompose the work — they share
//! one element kernel, so their outputs are bit-identical for every input,
//! every shape, and every worker count. That equality is asserted by the
//! validation suite and is safe to rely on: pick a backend for speed, never
//! for results.
//!
//! | backend          | decomposition                                        |
//! |------------------|------------------------------------------------------|
//! | `scalar-ref`     | single-threaded double loop, one element at a time   |
//! | `parallel-naive` | row stripes across workers, per-element scale lookup |
//! | `blocked`        | row/column tiles; a block's scales staged once       |
//! | `coarsened`      | column stripes; each worker hoists its scales once   |
//! | `vectorized`     | 4-lane SIMD column groups (AVX2 where available)     |

use std::fmt;
use std::str::FromStr;

use crate::error::{KvqError, Result};
use crate::scale::compute_scales_par;
use crate::tensor::{Fp32Matrix, Int8Matrix, QuantizedCache, ScaleVector};

/// Identifier of a compute backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendId {
    ScalarRef,
    ParallelNaive,
    Blocked,
    Coarsened,
    Vectorized,
}

impl BackendId {
    /// Every backend, in canonical order.
    pub const ALL: [BackendId; 5] = [
        BackendId::ScalarRef,
        BackendId::ParallelNaive,
        BackendId::Blocked,
        BackendId::Coarsened,
        BackendId::Vectorized,
    ];

    /// Canonical command-line name.
    pub fn name(self) -> &'static str {
        match self {
            BackendId::ScalarRef => "scalar-ref",
            BackendId::ParallelNaive => "parallel-naive",
            BackendId::Blocked => "blocked",
            BackendId::Coarsened => "coarsened",
            BackendId::Vectorized => "vectorized",
        }
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackendId {
    type Err = KvqError;

    fn from_str(s: &str) -> Result<Self> {
        BackendId::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = BackendId::ALL.iter().map(|b| b.name()).collect();
                KvqError::Config(format!(
                    "unknown backend {s:?}; valid backends: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// Static description of one backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendDescriptor {
    pub id: BackendId,
    pub description: &'static str,
    /// Elements processed per SIMD group (1 for element-at-a-time backends).
    pub lane_width: usize,
    /// Whether any column count is supported (tail handling present).
    pub supports_any_cols: bool,
}

/// All five backend descriptors in canonical order.
pub fn list_backends() -> Vec<BackendDescriptor> {
    vec![
        BackendDescriptor {
            id: BackendId::ScalarRef,
            description: "single-threaded reference, one element per iteration",
            lane_width: 1,
            supports_any_cols: true,
        },
        BackendDescriptor {
            id: BackendId::ParallelNaive,
            description: "row-partitioned workers, per-element scale lookup",
            lane_width: 1,
            supports_any_cols: true,
        },
        BackendDescriptor {
            id: BackendId::Blocked,
            description: "cache-blocked tiles, block scales staged once per block",
            lane_width: 1,
            supports_any_cols: true,
        },
        BackendDescriptor {
            id: BackendId::Coarsened,
            description: "column-stripe workers, stripe scales hoisted once",
            lane_width: 1,
            supports_any_cols: true,
        },
        BackendDescriptor {
            id: BackendId::Vectorized,
            description: "4-lane SIMD column groups with scalar tail (AVX2 dispatched at runtime)",
            lane_width: 4,
            supports_any_cols: true,
        },
    ]
}

/// Default worker count: the host's available hardware parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// --------------------------------------------------------------------------
// Element kernels (shared by every backend)
// --------------------------------------------------------------------------

/// 1.5 * 2^23. Adding and subtracting this constant rounds an f32 to the
/// nearest integer with ties-to-even: for |v| <= 2^22 the addition lands in
/// [2^23, 2^24], where the float grid spacing is exactly 1, so the hardware's
/// round-to-nearest-even does the integer rounding, and the subtraction is
/// exact. Branch-free and vectorizable, unlike a `rintf` libcall.
const ROUND_SHIFT: f32 = 12_582_912.0;

/// Quantizes one element. Clamping *before* rounding is equivalent to
/// clamping after (any value the clamp changes maps to ±127 either way, and
/// the ties at ±126.5/±127.5 agree), and it guarantees |v| <= 127 so the
/// shift-rounding below is exact. A unit test pins the equivalence of this
/// kernel against `round_ties_even` composed with the clamp.
#[inline(always)]
pub(crate) fn quantize_elem(x: f32, s: f32) -> i8 {
    if s == 0.0 {
        return 0;
    }
    let v = (x / s).clamp(-127.0, 127.0);
    ((v + ROUND_SHIFT) - ROUND_SHIFT) as i8
}

/// Dequantizes one element.
#[inline(always)]
pub(crate) fn dequantize_elem(q: i8, s: f32) -> f32 {
    q as f32 * s
}

// --------------------------------------------------------------------------
// Span kernels (one row, or part of one)
// --------------------------------------------------------------------------

/// Portable 4-lane quantize span: explicit 4-element groups with a scalar
/// tail for `len % 4 != 0`.
fn quantize_span_portable(xs: &[f32], ss: &[f32], os: &mut [i8]) {
    let n = xs.len();
    let n4 = n - n % 4;
    let mut oc = os[..n4].chunks_exact_mut(4);
    for ((x, s), o) in xs[..n4]
        .chunks_exact(4)
        .zip(ss[..n4].chunks_exact(4))
        .zip(&mut oc)
    {
        o[0] = quantize_elem(x[0], s[0]);
        o[1] = quantize_elem(x[1], s[1]);
        o[2] = quantize_elem(x[2], s[2]);
        o[3] = quantize_elem(x[3], s[3]);
    }
    for i in n4..n {
        os[i] = quantize_elem(xs[i], ss[i]);
    }
}

/// Portable 4-lane dequantize span.
fn dequantize_span_portable(qs: &[i8], ss: &[f32], os: &mut [f32]) {
    let n = qs.len();
    let n4 = n - n % 4;
    let mut oc = os[..n4].chunks_exact_mut(4);
    for ((q, s), o) in qs[..n4]
        .chunks_exact(4)
        .zip(ss[..n4].chunks_exact(4))
        .zip(&mut oc)
    {
        o[0] = dequantize_elem(q[0], s[0]);
        o[1] = dequantize_elem(q[1], s[1]);
        o[2] = dequantize_elem(q[2], s[2]);
        o[3] = dequantize_elem(q[3], s[3]);
    }
    for i in n4..n {
        os[i] = dequantize_elem(qs[i], ss[i]);
    }
}

#[cfg(target_arch = "x86_64")]
mod simd {
    //! AVX2 span kernels, bit-identical to the shared element kernel:
    //! `vdivps`/`vmulps` are the IEEE operations the scalar code performs,
    //! min/max realize the same clamp (including ±inf from division by a
    //! denormal scale), the shift-round constant is shared, `vcvttps2dq`
    //! truncates an already-integral value, the signed packs never saturate
    //! because the values are already within [-127, 127], and zero-scale
    //! lanes are masked to the code 0 exactly like the scalar branch.

    use core::arch::x86_64::*;

    use super::{dequantize_elem, quantize_elem, ROUND_SHIFT};

    /// # Safety
    /// Caller must ensure AVX2 is available and the three slices have equal
    /// lengths.
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn quantize_span(xs: &[f32], ss: &[f32], os: &mut [i8]) {
        debug_assert!(xs.len() == ss.len() && xs.len() == os.len());
        let n = xs.len();
        let n8 = n - n % 8;
        let lo = _mm256_set1_ps(-127.0);
        let hi = _mm256_set1_ps(127.0);
        let shift = _mm256_set1_ps(ROUND_SHIFT);
        let zero = _mm256_setzero_ps();
        let mut i = 0;
        while i < n8 {
            let x = _mm256_loadu_ps(xs.as_ptr().add(i));
            let s = _mm256_loadu_ps(ss.as_ptr().add(i));
            let zero_scale = _mm256_cmp_ps(s, zero, _CMP_EQ_OQ);
            let v = _mm256_div_ps(x, s);
            let v = _mm256_min_ps(_mm256_max_ps(v, lo), hi);
            let v = _mm256_sub_ps(_mm256_add_ps(v, shift), shift);
            let q = _mm256_cvttps_epi32(v);
            let q = _mm256_andnot_si256(_mm256_castps_si256(zero_scale), q);
            let w = _mm_packs_epi32(
                _mm256_castsi256_si128(q),
                _mm256_extracti128_si256(q, 1),
            );
            let b = _mm_packs_epi16(w, _mm_setzero_si128());
            _mm_storel_epi64(os.as_mut_ptr().add(i) as *mut __m128i, b);
            i += 8;
        }
        for j in n8..n {
            os[j] = quantize_elem(xs[j], ss[j]);
        }
    }

    /// # Safety
    /// Caller must ensure AVX2 is available and the three slices have equal
    /// lengths.
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn dequantize_span(qs: &[i8], ss: &[f32], os: &mut [f32]) {
        debug_assert!(qs.len() == ss.len() && qs.len() == os.len());
        let n = qs.len();
        let n8 = n - n % 8;
        let mut i = 0;
        while i < n8 {
            let q8 = _mm_loadl_epi64(qs.as_ptr().add(i) as *const __m128i);
            let v = _mm256_cvtepi32_ps(_mm256_cvtepi8_epi32(q8));
            let s = _mm256_loadu_ps(ss.as_ptr().add(i));
            _mm256_storeu_ps(os.as_mut_ptr().add(i), _mm256_mul_ps(v, s));
            i += 8;
        }
        for j in n8..n {
            os[j] = dequantize_elem(qs[j], ss[j]);
        }
    }
}

/// Runtime dispatch decision for the vectorized backend.
#[inline]
fn avx2_available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

#[inline]
fn quantize_span(use_avx2: bool, xs: &[f32], ss: &[f32], os: &mut [i8]) {
    #[cfg(target_arch = "x86_64")]
    if use_avx2 {
        // SAFETY: `use_avx2` is only true when runtime detection succeeded,
        // and all three slices share the row length.
        unsafe { simd::quantize_span(xs, ss, os) };
        return;
    }
    let _ = use_avx2;
    quantize_span_portable(xs, ss, os);
}

#[inline]
fn dequantize_span(use_avx2: bool, qs: &[i8], ss: &[f32], os: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if use_avx2 {
        // SAFETY: as in `quantize_span`.
        unsafe { simd::dequantize_span(qs, ss, os) };
        return;
    }
    let _ = use_avx2;
    dequantize_span_portable(qs, ss, os);
}

// --------------------------------------------------------------------------
// Work decomposition
// --------------------------------------------------------------------------

/// Rows per worker stripe for a plain row partition.
fn stripe_rows_for(rows: usize, workers: usize) -> usize {
    rows.div_ceil(workers.clamp(1, rows.max(1)))
}

/// Runs `f` over matching row stripes of `input` and `output`, one stripe per
/// worker thread. When a single stripe covers the matrix the call is inlined
/// with no thread spawn. `f` receives whole rows, so per-stripe row offsets
/// are not needed.
fn row_striped<I, O, F>(
    input: &[I],
    output: &mut [O],
    rows: usize,
    cols: usize,
    stripe_rows: usize,
    f: F,
) where
    I: Sync,
    O: Send,
    F: Fn(&[I], &mut [O]) + Sync,
{
    debug_assert_eq!(input.len(), rows * cols);
    debug_assert_eq!(output.len(), rows * cols);
    let stripe_rows = stripe_rows.max(1);
    if stripe_rows >= rows {
        f(input, output);
        return;
    }
    let stripe = stripe_rows * cols;
    let f = &f;
    std::thread::scope(|scope| {
        for (ic, oc) in input.chunks(stripe).zip(output.chunks_mut(stripe)) {
            scope.spawn(move || f(ic, oc));
        }
    });
}

/// Raw pointer wrapper that may cross thread boundaries. Used by the
/// coarsened backend, whose workers write disjoint column stripes of one
/// output buffer — a partition `chunks_mut` cannot express.
#[derive(Clone, Copy)]
struct SendPtr<T>(*mut T);
unsafe impl<T: Send> Send for SendPtr<T> {}

impl<T> SendPtr<T> {
    /// Taking `self` (not the field) keeps closures capturing the whole
    /// wrapper, which is what carries the `Send` impl.
    fn get(self) -> *mut T {
        self.0
    }
}

/// Column-striped driver for the coarsened backend. Each worker owns columns
/// `[c0, c1)`, copies that slice of the scales once, then streams every row.
fn coarsened_striped<I, O, K>(
    input: &[I],
    output: &mut [O],
    rows: usize,
    cols: usize,
    scales: &[f32],
    workers: usize,
    kernel: K,
) where
    I: Copy + Sync,
    O: Copy + Send,
    K: Fn(I, f32) -> O + Sync,
{
    debug_assert_eq!(input.len(), rows * cols);
    debug_assert_eq!(output.len(), rows * cols);
    let workers = workers.clamp(1, cols);
    let stripe = cols.div_ceil(workers);
    if workers == 1 {
        let hoisted = scales.to_vec();
        for t in 0..rows {
            let base = t * cols;
            for (j, &s) in hoisted.iter().enumerate() {
                output[base + j] = kernel(input[base + j], s);
            }
        }
        return;
    }
    let out = SendPtr(output.as_mut_ptr());
    let kernel = &kernel;
    std::thread::scope(|scope| {
        for c0 in (0..cols).step_by(stripe) {
            let c1 = (c0 + stripe).min(cols);
            scope.spawn(move || {
                let hoisted = scales[c0..c1].to_vec();
                for t in 0..rows {
                    let base = t * cols;
                    for (j, &s) in hoisted.iter().enumerate() {
                        let idx = base + c0 + j;
                        // SAFETY: idx < rows * cols == output.len(), and the
                        // column ranges [c0, c1) are pairwise disjoint across
                        // workers, so no element is written by two threads.
                        // The scope guarantees the buffer outlives all workers.
                        unsafe { *out.get().add(idx) = kernel(input[idx], s) };
                    }
                }
            });
        }
    });
}

/// Tile shape for the blocked backend: small enough that a tile of input,
/// its output, and the staged scale slice stay resident in L1/L2 together.
const TILE_ROWS: usize = 64;
const TILE_COLS: usize = 256;

/// Processes one row stripe in cache-sized tiles, staging each column
/// block's scales into a local buffer once per block.
fn blocked_rows<I, O, K>(input: &[I], output: &mut [O], cols: usize, scales: &[f32], kernel: K)
where
    I: Copy,
    O: Copy,
    K: Fn(I, f32) -> O,
{
    let mut staged = [0.0f32; TILE_COLS];
    let rows = input.len() / cols;
    for t0 in (0..rows).step_by(TILE_ROWS) {
        let t1 = (t0 + TILE_ROWS).min(rows);
        for c0 in (0..cols).step_by(TILE_COLS) {
            let c1 = (c0 + TILE_COLS).min(cols);
            let width = c1 - c0;
            staged[..width].copy_from_slice(&scales[c0..c1]);
            for t in t0..t1 {
                let base = t * cols;
                for j in 0..width {
                    output[base + c0 + j] = kernel(input[base + c0 + j], staged[j]);
                }
            }
        }
    }
}

// --------------------------------------------------------------------------
// Public operations
// --------------------------------------------------------------------------

fn check_quantize_args(k: &Fp32Matrix, scales: &ScaleVector, out_len: usize) -> Result<()> {
    if scales.len() != k.cols() {
        return Err(KvqError::Dimension(format!(
            "scale vector length {} does not match matrix cols {}",
            scales.len(),
            k.cols()
        )));
    }
    if out_len != k.len() {
        return Err(KvqError::Dimension(format!(
            "output buffer length {} does not match element count {}",
            out_len,
            k.len()
        )));
    }
    Ok(())
}

/// Quantizes into a caller-owned buffer (`out.len() == rows * cols`),
/// keeping allocation out of the caller's timed regions.
pub fn quantize_into(
    k: &Fp32Matrix,
    scales: &ScaleVector,
    backend: BackendId,
    workers: usize,
    out: &mut [i8],
) -> Result<()> {
    check_quantize_args(k, scales, out.len())?;
    quantize_dispatch(k.rows(), k.cols(), k.data(), scales.as_slice(), backend, workers, out);
    Ok(())
}

/// Slice-level quantize dispatch; callers guarantee
/// `data.len() == out.len() == rows * cols` and `ss.len() == cols`.
pub(crate) fn quantize_dispatch(
    rows: usize,
    cols: usize,
    data: &[f32],
    ss: &[f32],
    backend: BackendId,
    workers: usize,
    out: &mut [i8],
) {
    match backend {
        BackendId::ScalarRef => {
            for t in 0..rows {
                for d in 0..cols {
                    out[t * cols + d] = quantize_elem(data[t * cols + d], ss[d]);
                }
            }
        }
        BackendId::ParallelNaive => {
            row_striped(data, out, rows, cols, stripe_rows_for(rows, workers), |ic, oc| {
                for (ri, ro) in ic.chunks_exact(cols).zip(oc.chunks_exact_mut(cols)) {
                    for d in 0..cols {
                        ro[d] = quantize_elem(ri[d], ss[d]);
                    }
                }
            });
        }
        BackendId::Blocked => {
            // Stripe boundaries aligned to the tile height so tiles never
            // straddle workers.
            let stripe = stripe_rows_for(rows, workers).div_ceil(TILE_ROWS) * TILE_ROWS;
            row_striped(data, out, rows, cols, stripe, |ic, oc| {
                blocked_rows(ic, oc, cols, ss, quantize_elem);
            });
        }
        BackendId::Coarsened => {
            coarsened_striped(data, out, rows, cols, ss, workers, quantize_elem);
        }
        BackendId::Vectorized => {
            let use_avx2 = avx2_available();
            row_striped(data, out, rows, cols, stripe_rows_for(rows, workers), |ic, oc| {
                for (ri, ro) in ic.chunks_exact(cols).zip(oc.chunks_exact_mut(cols)) {
                    quantize_span(use_avx2, ri, ss, ro);
                }
            });
        }
    }
}

/// Quantizes with an explicit worker count.
pub fn quantize_with_workers(
    k: &Fp32Matrix,
    scales: &ScaleVector,
    backend: BackendId,
    workers: usize,
) -> Result<Int8Matrix> {
    let mut out = vec![0i8; k.len()];
    quantize_into(k, scales, backend, workers, &mut out)?;
    Int8Matrix::from_vec(k.rows(), k.cols(), out)
}

/// Quantizes `K` against per-channel scales. Output codes are within
/// `[-127, 127]` and bit-identical across backends.
pub fn quantize(k: &Fp32Matrix, scales: &ScaleVector, backend: BackendId) -> Result<Int8Matrix> {
    quantize_with_workers(k, scales, backend, default_workers())
}

fn check_dequantize_args(q: &Int8Matrix, scales: &ScaleVector, out_len: usize) -> Result<()> {
    if scales.len() != q.cols() {
        return Err(KvqError::Dimension(format!(
            "scale vector length {} does not match matrix cols {}",
            scales.len(),
            q.cols()
        )));
    }
    if out_len != q.len() {
        return Err(KvqError::Dimension(format!(
            "output buffer length {} does not match element count {}",
            out_len,
            q.len()
        )));
    }
    Ok(())
}

/// Dequantizes into a caller-owned buffer.
pub fn dequantize_into(
    q: &Int8Matrix,
    scales: &ScaleVector,
    backend: BackendId,
    workers: usize,
    out: &mut [f32],
) -> Result<()> {
    check_dequantize_args(q, scales, out.len())?;
    dequantize_dispatch(q.rows(), q.cols(), q.data(), scales.as_slice(), backend, workers, out);
    Ok(())
}

/// Slice-level dequantize dispatch; callers guarantee
/// `data.len() == out.len() == rows * cols` and `ss.len() == cols`.
pub(crate) fn dequantize_dispatch(
    rows: usize,
    cols: usize,
    data: &[i8],
    ss: &[f32],
    backend: BackendId,
    workers: usize,
    out: &mut [f32],
) {
    match backend {
        BackendId::ScalarRef => {
            for t in 0..rows {
                for d in 0..cols {
                    out[t * cols + d] = dequantize_elem(data[t * cols + d], ss[d]);
                }
            }
        }
        BackendId::ParallelNaive => {
            row_striped(data, out, rows, cols, stripe_rows_for(rows, workers), |ic, oc| {
                for (ri, ro) in ic.chunks_exact(cols).zip(oc.chunks_exact_mut(cols)) {
                    for d in 0..cols {
                        ro[d] = dequantize_elem(ri[d], ss[d]);
                    }
                }
            });
        }
        BackendId::Blocked => {
            let stripe = stripe_rows_for(rows, workers).div_ceil(TILE_ROWS) * TILE_ROWS;
            row_striped(data, out, rows, cols, stripe, |ic, oc| {
                blocked_rows(ic, oc, cols, ss, dequantize_elem);
            });
        }
        BackendId::Coarsened => {
            coarsened_striped(data, out, rows, cols, ss, workers, dequantize_elem);
        }
        BackendId::Vectorized => {
            let use_avx2 = avx2_available();
            row_striped(data, out, rows, cols, stripe_rows_for(rows, workers), |ic, oc| {
                for (ri, ro) in ic.chunks_exact(cols).zip(oc.chunks_exact_mut(cols)) {
                    dequantize_span(use_avx2, ri, ss, ro);
                }
            });
        }
    }
}

/// Dequantizes with an explicit worker count.
pub fn dequantize_with_workers(
    q: &Int8Matrix,
    scales: &ScaleVector,
    backend: BackendId,
    workers: usize,
) -> Result<Fp32Matrix> {
    let mut out = vec![0.0f32; q.len()];
    dequantize_into(q, scales, backend, workers, &mut out)?;
    Fp32Matrix::from_vec(q.rows(), q.cols(), out)
}

/// Reconstructs approximate float values from codes and scales.
pub fn dequantize(q: &Int8Matrix, scales: &ScaleVector, backend: BackendId) -> Result<Fp32Matrix> {
    dequantize_with_workers(q, scales, backend, default_workers())
}

/// Computes scales from `K` and quantizes in one step.
pub fn quantize_cache(k: &Fp32Matrix, backend: BackendId) -> Result<QuantizedCache> {
    quantize_cache_with_workers(k, backend, default_workers())
}

/// [`quantize_cache`] with an explicit worker count. The scales are the
/// column-parallel computation's output, which is bit-identical to the
/// sequential reference for every worker count.
pub fn quantize_cache_with_workers(
    k: &Fp32Matrix,
    backend: BackendId,
    workers: usize,
) -> Result<QuantizedCache> {
    let scales = compute_scales_par(k, workers);
    let q = quantize_with_workers(k, &scales, backend, workers)?;
    QuantizedCache::new(q, scales)
}

/// Quantizes and immediately reconstructs: `dequantize(quantize_cache(K))`.
/// The output differs from `K` by at most `s_d / 2` per element (plus float
/// evaluation noise).
pub fn roundtrip(k: &Fp32Matrix, backend: BackendId) -> Result<Fp32Matrix> {
    roundtrip_with_workers(k, backend, default_workers())
}

/// [`roundtrip`] with an explicit worker count.
pub fn roundtrip_with_workers(
    k: &Fp32Matrix,
    backend: BackendId,
    workers: usize,
) -> Result<Fp32Matrix> {
    let cache = quantize_cache_with_workers(k, backend, workers)?;
    dequantize_with_workers(&cache.q, &cache.scales, backend, workers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::scale::compute_scales_ref;
    use crate::tensor::{make_fp32, Fill, RngSpec};

    fn fmat(rows: usize, cols: usize, data: &[f32]) -> Fp32Matrix {
        Fp32Matrix::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    fn sv(scales: &[f32]) -> ScaleVector {
        ScaleVector::from_vec(scales.to_vec()).unwrap()
    }

    /// Reference formulation of the element kernel: explicit
    /// round-ties-even, then clamp. The production kernel must match this
    /// bit-for-bit on every input.
    fn quantize_elem_reference(x: f32, s: f32) -> i8 {
        if s == 0.0 {
            return 0;
        }
        let q = (x / s).round_ties_even();
        q.clamp(-127.0, 127.0) as i8
    }

    #[test]
    fn element_kernel_matches_reference_formulation() {
        let mut probes: Vec<f32> = Vec::new();
        // Dense grid over the interesting range, step 1/16.
        let mut v = -130.0f32;
        while v <= 130.0 {
            probes.push(v);
            v += 0.0625;
        }
        // Tie points and their ulp neighbours.
        for base in [0.5f32, 1.5, 62.5, 63.5, 64.5, 125.5, 126.5, 127.5, 128.5] {
            for sign in [1.0f32, -1.0] {
                let t = base * sign;
                probes.push(t);
                probes.push(f32::from_bits(t.to_bits() - 1));
                probes.push(f32::from_bits(t.to_bits() + 1));
            }
        }
        probes.extend([
            0.0,
            -0.0,
            f32::MIN_POSITIVE,
            -f32::MIN_POSITIVE,
            1e-42,
            -1e-42,
            1e30,
            -1e30,
            f32::MAX,
            f32::MIN,
        ]);
        // Random finite floats across the whole exponent range.
        let mut g = SplitMix64::new(0xC0FFEE);
        while probes.len() < 300_000 {
            let x = f32::from_bits(g.next_u64() as u32);
            if x.is_finite() {
                probes.push(x);
            }
        }
        let scales = [
            1.0f32,
            0.5,
            0.25,
            1.0 / 127.0,
            3.7e-3,
             1e-30,
            1e30,
            f32::MIN_POSITIVE,
            0.0,
        ];
        for &x in &probes {
            for &s in &scales {
                assert_eq!(
                    quantize_elem(x, s),
                    quantize_elem_reference(x, s),
                    "x={x:?} ({:#010X}) s={s:?}",
                    x.to_bits()
                );
            }
        }
    }

    #[test]
    fn quantize_hand_traced() {
        let k = fmat(4, 1, &[127.0, -127.0, 63.5, -63.5]);
        let q = quantize(&k, &sv(&[1.0]), BackendId::ScalarRef).unwrap();
        assert_eq!(q.data(), &[127, -127, 64, -64]);
    }

    #[test]
    fn quantize_clamps() {
        let q = quantize(&fmat(1, 1, &[200.0]), &sv(&[1.0]), BackendId::ScalarRef).unwrap();
        assert_eq!(q.data(), &[127]);
        let q = quantize(&fmat(1, 1, &[-200.0]), &sv(&[1.0]), BackendId::ScalarRef).unwrap();
        assert_eq!(q.data(), &[-127]);
    }

    #[test]
    fn quantize_zero_scales() {
        let k = fmat(3, 2, &[0.0; 6]);
        let q = quantize(&k, &sv(&[0.0, 0.0]), BackendId::ScalarRef).unwrap();
        assert!(q.data().iter().all(|&c| c == 0));
        // The convention also covers nonzero values against a zero scale.
        let q = quantize(&fmat(1, 1, &[5.0]), &sv(&[0.0]), BackendId::Vectorized).unwrap();
        assert_eq!(q.data(), &[0]);
    }

    #[test]
    fn ties_round_to_even() {
        // k + 0.5 for integer k: result must always be even.
        let data: Vec<f32> = (-10..=10).map(|k| k as f32 + 0.5).collect();
        let m = fmat(data.len(), 1, &data);
        let q = quantize(&m, &sv(&[1.0]), BackendId::ScalarRef).unwrap();
        for (i, &code) in q.data().iter().enumerate() {
            assert_eq!(code % 2, 0, "tie {} must round to even, got {code}", data[i]);
            assert_eq!(code, data[i].round_ties_even() as i8);
        }
    }

    #[test]
    fn dequantize_hand_traced() {
        let q = Int8Matrix::from_vec(1, 1, vec![127]).unwrap();
        let m = dequantize(&q, &sv(&[1.0]), BackendId::ScalarRef).unwrap();
        assert_eq!(m.data(), &[127.0]);

        let q = Int8Matrix::from_vec(1, 1, vec![0]).unwrap();
        let m = dequantize(&q, &sv(&[0.0123]), BackendId::ScalarRef).unwrap();
        assert_eq!(m.data(), &[0.0]);

        let q = Int8Matrix::from_vec(1, 1, vec![64]).unwrap();
        let m = dequantize(&q, &sv(&[1.0 / 127.0]), BackendId::ScalarRef).unwrap();
        assert_eq!(m.data()[0], 64.0 * (1.0f32 / 127.0));
        assert!((m.data()[0] - 0.503937).abs() < 1e-6);
    }

    #[test]
    fn cache_endpoints() {
        let cache = quantize_cache(&fmat(2, 1, &[1.0, -1.0]), BackendId::ScalarRef).unwrap();
        assert_eq!(cache.q.data(), &[127, -127]);
        assert_eq!(cache.scales.as_slice(), &[1.0f32 / 127.0]);
    }

    #[test]
    fn cache_zero_column() {
        let cache = quantize_cache(&fmat(1, 1, &[0.0]), BackendId::ScalarRef).unwrap();
        assert_eq!(cache.q.data(), &[0]);
        assert_eq!(cache.scales.as_slice(), &[0.0]);
    }

    #[test]
    fn roundtrip_zeros_exact() {
        let k = make_fp32(4, 3, Fill::Zeros).unwrap();
        let r = roundtrip(&k, BackendId::ScalarRef).unwrap();
        assert!(r.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn roundtrip_unit_value() {
        let r = roundtrip(&fmat(1, 1, &[1.0]), BackendId::ScalarRef).unwrap();
        // 127 * (1/127) happens to be exactly 1.0 in f32.
        assert!((r.data()[0] - 1.0).abs() <= 1e-6);
        assert_eq!(r.data()[0], 1.0);
    }

    #[test]
    fn roundtrip_error_bound_small() {
        let k = make_fp32(64, 8, Fill::Rng(RngSpec::new(3))).unwrap();
        let cache = quantize_cache(&k, BackendId::ScalarRef).unwrap();
        let r = dequantize(&cache.q, &cache.scales, BackendId::ScalarRef).unwrap();
        for t in 0..k.rows() {
            for d in 0..k.cols() {
                let x = k.get(t, d);
                let err = (x - r.get(t, d)).abs();
                let bound = cache.scales.get(d) / 2.0 + (1.0f32).max(x.abs()) * 2.0f32.powi(-20);
                assert!(err <= bound, "({t},{d}): err {err} > bound {bound}");
            }
        }
    }

    #[test]
    fn all_backends_bit_identical() {
        let shapes = [(1, 1), (3, 5), (17, 4), (8, 7), (64, 64), (33, 129), (5, 1023)];
        for (rows, cols) in shapes {
            let k = make_fp32(rows, cols, Fill::Rng(RngSpec::new(rows as u64 * 31 + cols as u64)))
                .unwrap();
            let scales = compute_scales_ref(&k);
            let q_ref = quantize(&k, &scales, BackendId::ScalarRef).unwrap();
            let d_ref = dequantize(&q_ref, &scales, BackendId::ScalarRef).unwrap();
            for backend in BackendId::ALL {
                for workers in [1, 2, 3, 8] {
                    let q = quantize_with_workers(&k, &scales, backend, workers).unwrap();
                    assert_eq!(q.data(), q_ref.data(), "{backend} quantize {rows}x{cols} w={workers}");
                    let d = dequantize_with_workers(&q, &scales, backend, workers).unwrap();
                    for (i, (a, b)) in d.data().iter().zip(d_ref.data()).enumerate() {
                        assert_eq!(
                            a.to_bits(),
                            b.to_bits(),
                            "{backend} dequantize {rows}x{cols} w={workers} elem {i}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn vectorized_tail_widths() {
        for cols in [1, 2, 3, 5, 6, 7, 9, 11, 13, 15] {
            let k = make_fp32(19, cols, Fill::Rng(RngSpec::new(cols as u64))).unwrap();
            let scales = compute_scales_ref(&k);
            let a = quantize(&k, &scales, BackendId::ScalarRef).unwrap();
            let b = quantize(&k, &scales, BackendId::Vectorized).unwrap();
            assert_eq!(a.data(), b.data(), "cols={cols}");
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[test]
    fn simd_spans_match_portable() {
        if !avx2_available() {
            return;
        }
        let mut g = SplitMix64::new(17);
        let n = 1027; // odd length exercises the tail
        let xs: Vec<f32> = (0..n).map(|_| g.next_in_range(-2.0, 2.0)).collect();
        let ss: Vec<f32> = (0..n)
            .map(|i| if i % 13 == 0 { 0.0 } else { g.next_in_range(1e-4, 1.0) })
            .collect();
        let mut a = vec![0i8; n];
        let mut b = vec![0i8; n];
        quantize_span_portable(&xs, &ss, &mut a);
        unsafe { simd::quantize_span(&xs, &ss, &mut b) };
        assert_eq!(a, b);
        let mut fa = vec![0.0f32; n];
        let mut fb = vec![0.0f32; n];
        dequantize_span_portable(&a, &ss, &mut fa);
        unsafe { simd::dequantize_span(&a, &ss, &mut fb) };
        for i in 0..n {
            assert_eq!(fa[i].to_bits(), fb[i].to_bits(), "elem {i}");
        }
    }

    #[test]
    fn sign_symmetry() {
        let k = make_fp32(37, 23, Fill::Rng(RngSpec::new(8))).unwrap();
        let neg =
            Fp32Matrix::from_vec(37, 23, k.data().iter().map(|x| -x).collect()).unwrap();
        let scales = compute_scales_ref(&k);
        let q = quantize(&k, &scales, BackendId::ScalarRef).unwrap();
        let qn = quantize(&neg, &scales, BackendId::ScalarRef).unwrap();
        for (a, b) in q.data().iter().zip(qn.data()) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn lattice_idempotence() {
        let k = make_fp32(40, 24, Fill::Rng(RngSpec::new(21))).unwrap();
        let once = roundtrip(&k, BackendId::Blocked).unwrap();
        let twice = roundtrip(&once, BackendId::Blocked).unwrap();
        for (i, (a, b)) in once.data().iter().zip(twice.data()).enumerate() {
            assert_eq!(a.to_bits(), b.to_bits(), "elem {i}");
        }
    }

    #[test]
    fn descriptors() {
        let list = list_backends();
        assert_eq!(list.len(), 5);
        let ids: Vec<BackendId> = list.iter().map(|d| d.id).collect();
        assert_eq!(ids, BackendId::ALL);
        for d in &list {
            assert!(d.supports_any_cols);
            let expect_lanes = if d.id == BackendId::Vectorized { 4 } else { 1 };
            assert_eq!(d.lane_width, expect_lanes, "{}", d.id);
        }
    }

    #[test]
    fn backend_names_parse() {
        for b in BackendId::ALL {
            assert_eq!(b.name().parse::<BackendId>().unwrap(), b);
        }
        let err = "warp-speed".parse::<BackendId>().unwrap_err();
        assert!(matches!(err, KvqError::Config(_)));
        assert!(err.to_string().contains("vectorized"), "{err}");
    }

    #[test]
    fn shape_mismatches_rejected() {
        let k = make_fp32(2, 3, Fill::Ones).unwrap();
        let bad = sv(&[1.0, 1.0]);
        assert!(matches!(
            quantize(&k, &bad, BackendId::ScalarRef),
            Err(KvqError::Dimension(_))
        ));
        let good = sv(&[1.0, 1.0, 1.0]);
        let mut short = vec![0i8; 5];
        assert!(matches!(
            quantize_into(&k, &good, BackendId::ScalarRef, 1, &mut short),
            Err(KvqError::Dimension(_))
        ));
        let q = Int8Matrix::from_vec(2, 3, vec![0; 6]).unwrap();
        assert!(matches!(
            dequantize(&q, &bad, BackendId::ScalarRef),
            Err(KvqError::Dimension(_))
        ));
    }

    #[test]
    fn worker_counts_do_not_change_output() {
        let k = make_fp32(130, 66, Fill::Rng(RngSpec::new(55))).unwrap();
        let scales = compute_scales_ref(&k);
        let reference = quantize_with_workers(&k, &scales, BackendId::ParallelNaive, 1).unwrap();
        for workers in [2, 4, 5, 64, 129, 1000] {
            for backend in [BackendId::ParallelNaive, BackendId::Blocked, BackendId::Coarsened, BackendId::Vectorized] {
                let q = quantize_with_workers(&k, &scales, backend, workers).unwrap();
                assert_eq!(q.data(), reference.data(), "{backend} w={workers}");
            }
        }
    }
}
