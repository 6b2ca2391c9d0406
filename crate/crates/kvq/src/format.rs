//! The `KVQ1` binary on-disk format.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content                                             |
//! |-------|-----------------------------------------------------|
//! | 0–3   | magic `KVQ1`                                        |
//! | 4     | dtype: 0 = fp32 matrix, 1 = int8 matrix, 2 = cache  |
//! | 5–8   | rows (u32)                                          |
//! | 9–12  | cols (u32)                                          |
//! | 13…   | payload, row-major                                  |
//!
//! Payloads: fp32 uses 4 bytes per element (IEEE-754 LE); int8 uses 1 byte
//! per element (two's complement). dtype 2 stores the int8 payload followed
//! by `cols` fp32 scale factors. Deserialization validates every invariant
//! the in-memory types enforce (finite floats, no `-128` code, non-negative
//! scales) and rejects trailing bytes, so serialize/deserialize is a
//! bit-exact round trip in both directions.

use crate::error::{KvqError, Result};
use crate::tensor::{Fp32Matrix, Int8Matrix, QuantizedCache, ScaleVector};

pub const MAGIC: [u8; 4] = *b"KVQ1";
pub const HEADER_LEN: usize = 13;

pub const DTYPE_FP32: u8 = 0;
pub const DTYPE_INT8: u8 = 1;
pub const DTYPE_CACHE: u8 = 2;

/// Any value the format can hold, for callers that dispatch on dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum KvqValue {
    Fp32(Fp32Matrix),
    Int8(Int8Matrix),
    Cache(QuantizedCache),
}

impl KvqValue {
    /// Human-readable dtype name, used in error messages.
    pub fn dtype_name(&self) -> &'static str {
        match self {
            KvqValue::Fp32(_) => "fp32 matrix (dtype 0)",
            KvqValue::Int8(_) => "int8 matrix (dtype 1)",
            KvqValue::Cache(_) => "quantized cache (dtype 2)",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            KvqValue::Fp32(m) => m.to_bytes(),
            KvqValue::Int8(m) => m.to_bytes(),
            KvqValue::Cache(c) => c.to_bytes(),
        }
    }
}

fn header(dtype: u8, rows: usize, cols: usize) -> Result<Vec<u8>> {
    let rows32 = u32::try_from(rows)
        .map_err(|_| KvqError::Format(format!("rows {rows} exceeds the u32 header field")))?;
    let cols32 = u32::try_from(cols)
        .map_err(|_| KvqError::Format(format!("cols {cols} exceeds the u32 header field")))?;
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(dtype);
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&cols32.to_le_bytes());
    Ok(out)
}

/// Parsed header: dtype plus validated dimensions.
fn parse_header(bytes: &[u8]) -> Result<(u8, usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(KvqError::Format(format!(
            "stream too short for header: {} bytes, need {HEADER_LEN}",
            bytes.len()
        )));
    }
    if bytes[0..4] != MAGIC {
        return Err(KvqError::Format(format!(
            "bad magic {:02X?}, expected \"KVQ1\"",
            &bytes[0..4]
        )));
    }
    let dtype = bytes[4];
    if dtype > DTYPE_CACHE {
        return Err(KvqError::Format(format!(
            "unknown dtype code {dtype}, expected 0 (fp32), 1 (int8) or 2 (cache)"
        )));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(KvqError::Format(format!(
            "header declares degenerate shape {rows}x{cols}"
        )));
    }
    Ok((dtype, rows, cols))
}

fn expect_len(bytes: &[u8], want: usize, what: &str) -> Result<()> {
    if bytes.len() < want {
        return Err(KvqError::Format(format!(
            "truncated {what}: {} bytes, need {want}",
            bytes.len()
        )));
    }
    if bytes.len() > want {
        return Err(KvqError::Format(format!(
            "{} trailing bytes after {what}",
            bytes.len() - want
        )));
    }
    Ok(())
}

fn read_f32_payload(bytes: &[u8], n: usize, what: &str) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(n);
    for (i, chunk) in bytes.chunks_exact(4).enumerate().take(n) {
        let x = f32::from_le_bytes(chunk.try_into().unwrap());
        if !x.is_finite() {
            return Err(KvqError::Format(format!("{what}[{i}] is not finite: {x}")));
        }
        out.push(x);
    }
    Ok(out)
}

impl Fp32Matrix {
    /// Serializes as dtype 0.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header(DTYPE_FP32, self.rows(), self.cols()).expect("validated dims");
        out.reserve(self.payload_bytes());
        for x in self.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Deserializes a dtype-0 stream, consuming it exactly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (dtype, rows, cols) = parse_header(bytes)?;
        if dtype != DTYPE_FP32 {
            return Err(KvqError::Format(format!(
                "expected fp32 matrix (dtype 0), found dtype {dtype}"
            )));
        }
        let n = rows * cols;
        let payload = &bytes[HEADER_LEN..];
        expect_len(payload, n * 4, "fp32 payload")?;
        let data = read_f32_payload(payload, n, "payload")?;
        Fp32Matrix::from_vec(rows, cols, data)
    }
}

impl Int8Matrix {
    /// Serializes as dtype 1.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header(DTYPE_INT8, self.rows(), self.cols()).expect("validated dims");
        out.extend(self.data().iter().map(|&q| q as u8));
        out
    }

    /// Deserializes a dtype-1 stream, consuming it exactly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (dtype, rows, cols) = parse_header(bytes)?;
        if dtype != DTYPE_INT8 {
            return Err(KvqError::Format(format!(
                "expected int8 matrix (dtype 1), found dtype {dtype}"
            )));
        }
        let n = rows * cols;
        let payload = &bytes[HEADER_LEN..];
        expect_len(payload, n, "int8 payload")?;
        let data: Vec<i8> = payload.iter().map(|&b| b as i8).collect();
        // from_vec rejects -128 with the element coordinate.
        Int8Matrix::from_vec(rows, cols, data)
    }
}

impl QuantizedCache {
    /// Serializes as dtype 2: int8 payload, then `cols` fp32 scales.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = header(DTYPE_CACHE, self.q.rows(), self.q.cols()).expect("validated dims");
        out.reserve(self.q.payload_bytes() + self.scales.len() * 4);
        out.extend(self.q.data().iter().map(|&q| q as u8));
        for s in self.scales.as_slice() {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    /// Deserializes a dtype-2 stream, consuming it exactly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (dtype, rows, cols) = parse_header(bytes)?;
        if dtype != DTYPE_CACHE {
            return Err(KvqError::Format(format!(
                "expected quantized cache (dtype 2), found dtype {dtype}"
            )));
        }
        let n = rows * cols;
        let payload = &bytes[HEADER_LEN..];
        expect_len(payload, n + cols * 4, "cache payload")?;
        let data: Vec<i8> = payload[..n].iter().map(|&b| b as i8).collect();
        let q = Int8Matrix::from_vec(rows, cols, data)?;
        let raw = read_f32_payload(&payload[n..], cols, "scales")?;
        if let Some(d) = raw.iter().position(|s| *s < 0.0) {
            return Err(KvqError::Format(format!(
                "scales[{d}] is negative: {}",
                raw[d]
            )));
        }
        let scales = ScaleVector::from_vec(raw)?;
        QuantizedCache::new(q, scales)
    }
}

/// Deserializes any `KVQ1` stream, dispatching on the dtype byte.
pub fn from_bytes(bytes: &[u8]) -> Result<KvqValue> {
    let (dtype, _, _) = parse_header(bytes)?;
    match dtype {
        DTYPE_FP32 => Fp32Matrix::from_bytes(bytes).map(KvqValue::Fp32),
        DTYPE_INT8 => Int8Matrix::from_bytes(bytes).map(KvqValue::Int8),
        _ => QuantizedCache::from_bytes(bytes).map(KvqValue::Cache),
    }
}
