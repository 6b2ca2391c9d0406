//! Matrix containers, deterministic fills, and memory accounting.
//!
//! All matrices are dense, row-major, and immutable after construction.
//! `Fp32Matrix` holds the original key/value cache block, `Int8Matrix` the
//! quantized codes, and `QuantizedCache` pairs the codes with their
//! per-channel scales — the unit that gets serialized to disk.

use crate::error::{KvqError, Result};
use crate::rng::SplitMix64;

/// Dense row-major matrix of finite 32-bit floats.
///
/// Invariants enforced at construction and deserialization:
/// `rows >= 1`, `cols >= 1`, `data.len() == rows * cols`, all elements finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Fp32Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

/// Dense row-major matrix of signed 8-bit quantized codes.
///
/// Every element lies in `[-127, 127]`; the code `-128` never appears, so
/// negating a quantized matrix is always representable.
#[derive(Debug, Clone, PartialEq)]
pub struct Int8Matrix {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

/// Per-channel scale factors: one non-negative f32 per matrix column.
///
/// Entry `d` is `max_t |K[t,d]| / 127`; it is zero exactly when column `d`
/// of the source matrix is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleVector {
    scales: Vec<f32>,
}

/// Quantized codes paired with the scales needed to reconstruct them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCache {
    pub q: Int8Matrix,
    pub scales: ScaleVector,
}

/// Seeded uniform distribution over a half-open interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RngSpec {
    pub seed: u64,
    pub low: f32,
    pub high: f32,
}

/// Fill pattern for [`make_fp32`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Zeros,
    Ones,
    Constant(f32),
    /// `+1, -1, +1, -1, …` by flat row-major index.
    AlternatingSigns,
    Rng(RngSpec),
}

impl RngSpec {
    /// Uniform over the symmetric unit interval `[-1, 1)`.
    pub fn new(seed: u64) -> Self {
        RngSpec { seed, low: -1.0, high: 1.0 }
    }

    /// Uniform over `[low, high)`.
    pub fn with_range(seed: u64, low: f32, high: f32) -> Result<Self> {
        if !low.is_finite() || !high.is_finite() {
            return Err(KvqError::Dimension(format!(
                "rng range bounds must be finite, got [{low}, {high})"
            )));
        }
        if low >= high {
            return Err(KvqError::Dimension(format!(
                "rng range must satisfy low < high, got [{low}, {high})"
            )));
        }
        Ok(RngSpec { seed, low, high })
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<usize> {
    if rows == 0 || cols == 0 {
        return Err(KvqError::Dimension(format!(
            "matrix dimensions must be at least 1x1, got {rows}x{cols}"
        )));
    }
    rows.checked_mul(cols).ok_or_else(|| {
        KvqError::Dimension(format!("element count {rows}x{cols} overflows usize"))
    })
}

impl Fp32Matrix {
    /// Builds a matrix from a flat row-major buffer, validating shape and
    /// rejecting non-finite elements.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let n = check_dims(rows, cols)?;
        if data.len() != n {
            return Err(KvqError::Dimension(format!(
                "data length {} does not match {rows}x{cols} = {n}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(KvqError::Format(format!(
                "data[{i}] (row {}, col {}) is not finite: {}",
                i / cols,
                i % cols,
                data[i]
            )));
        }
        Ok(Fp32Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Flat row-major view of the elements.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Element at token row `t`, channel column `d`.
    pub fn get(&self, t: usize, d: usize) -> f32 {
        self.data[t * self.cols + d]
    }

    /// Row `t` as a contiguous slice.
    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Serialized payload size in bytes (4 per element).
    pub fn payload_bytes(&self) -> usize {
        self.data.len() * 4
    }
}

impl Int8Matrix {
    /// Builds a matrix from a flat row-major buffer, rejecting the code
    /// `-128` which is outside the symmetric range.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<i8>) -> Result<Self> {
        let n = check_dims(rows, cols)?;
        if data.len() != n {
            return Err(KvqError::Dimension(format!(
                "data length {} does not match {rows}x{cols} = {n}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&q| q == i8::MIN) {
            return Err(KvqError::Format(format!(
                "data[{i}] (row {}, col {}) is -128, outside the symmetric range [-127, 127]",
                i / cols,
                i % cols
            )));
        }
        Ok(Int8Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn get(&self, t: usize, d: usize) -> i8 {
        self.data[t * self.cols + d]
    }

    pub fn row(&self, t: usize) -> &[i8] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Serialized payload size in bytes (1 per element).
    pub fn payload_bytes(&self) -> usize {
        self.data.len()
    }
}

impl ScaleVector {
    /// Builds a scale vector, rejecting negative or non-finite entries.
    pub fn from_vec(scales: Vec<f32>) -> Result<Self> {
        if scales.is_empty() {
            return Err(KvqError::Dimension(
                "scale vector must have at least one entry".to_string(),
            ));
        }
        if let Some(d) = scales.iter().position(|s| !s.is_finite() || *s < 0.0) {
            return Err(KvqError::Format(format!(
                "scales[{d}] must be a finite non-negative float, got {}",
                scales[d]
            )));
        }
        Ok(ScaleVector { scales })
    }

    /// Internal constructor for values that are non-negative and finite by
    /// construction (|x| / 127 of finite x).
    pub(crate) fn from_raw(scales: Vec<f32>) -> Self {
        debug_assert!(scales.iter().all(|s| s.is_finite() && *s >= 0.0));
        ScaleVector { scales }
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.scales
    }

    pub fn get(&self, d: usize) -> f32 {
        self.scales[d]
    }
}

impl QuantizedCache {
    /// Pairs codes with scales, checking that lengths line up.
    pub fn new(q: Int8Matrix, scales: ScaleVector) -> Result<Self> {
        if scales.len() != q.cols() {
            return Err(KvqError::Dimension(format!(
                "scale vector length {} does not match matrix cols {}",
                scales.len(),
                q.cols()
            )));
        }
        Ok(QuantizedCache { q, scales })
    }
}

/// Builds an `Fp32Matrix` of the requested shape from a fill pattern.
///
/// The `Rng` fill draws row-major from a [`SplitMix64`] stream, so the same
/// spec and shape produce a bit-identical matrix on every platform.
pub fn make_fp32(rows: usize, cols: usize, fill: Fill) -> Result<Fp32Matrix> {
    let n = check_dims(rows, cols)?;
    let data = match fill {
        Fill::Zeros => vec![0.0; n],
        Fill::Ones => vec![1.0; n],
        Fill::Constant(v) => {
            if !v.is_finite() {
                return Err(KvqError::Format(format!(
                    "constant fill value must be finite, got {v}"
                )));
            }
            vec![v; n]
        }
        Fill::AlternatingSigns => (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect(),
        Fill::Rng(spec) => {
            // Revalidate: specs can be built with struct syntax.
            let spec = RngSpec::with_range(spec.seed, spec.low, spec.high)?;
            let mut g = SplitMix64::new(spec.seed);
            (0..n).map(|_| g.next_in_range(spec.low, spec.high)).collect()
        }
    };
    Fp32Matrix::from_vec(rows, cols, data)
}

/// Total KV-cache footprint in bytes for a transformer configuration:
/// `2 * layers * heads * head_dim * seq_len * bytes_per_elem`
/// (the factor 2 covers keys and values).
///
/// Computed in checked 64-bit arithmetic; any overflow is reported rather
/// than wrapped.
pub fn estimate_kv_bytes(
    layers: u64,
    heads: u64,
    head_dim: u64,
    seq_len: u64,
    bytes_per_elem: u64,
) -> Result<u64> {
    for (name, v) in [
        ("layers", layers),
        ("heads", heads),
        ("head_dim", head_dim),
        ("seq_len", seq_len),
        ("bytes_per_elem", bytes_per_elem),
    ] {
        if v == 0 {
            return Err(KvqError::Dimension(format!("{name} must be at least 1")));
        }
    }
    2u64.checked_mul(layers)
        .and_then(|v| v.checked_mul(heads))
        .and_then(|v| v.checked_mul(head_dim))
        .and_then(|v| v.checked_mul(seq_len))
        .and_then(|v| v.checked_mul(bytes_per_elem))
        .ok_or_else(|| {
            KvqError::Overflow(format!(
                "2 * {layers} * {heads} * {head_dim} * {seq_len} * {bytes_per_elem} \
                 exceeds u64"
            ))
        })
}

/// Formats a byte count in decimal gigabytes with one fractional digit,
/// e.g. `137438953472` → `"137.4 GB"`.
pub fn format_gb(bytes: u64) -> String {
    format!("{:.1} GB", bytes as f64 / 1e9)
}
