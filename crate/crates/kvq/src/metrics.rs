//! Reconstruction-quality metrics and the analytic error bound.
//!
//! Three empirical metrics compare an original matrix against its
//! reconstruction: the L2 (Frobenius) error, the maximum absolute per-element
//! error, and an attention surrogate — the mean absolute difference between
//! query/key dot products computed with original versus reconstructed keys.
//! All reductions accumulate in `f64`: at 10⁹ elements an `f32` accumulator
//! would lose the metric to rounding.

use crate::error::{KvqError, Result};
use crate::quant::{dequantize_with_workers, BackendId};
use crate::rng::SplitMix64;
use crate::tensor::{Fp32Matrix, QuantizedCache, ScaleVector};

/// Bundle of every metric for one reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// `sqrt(Σ (a - b)²)` over all elements.
    pub l2: f64,
    /// `max |a - b|` over all elements.
    pub max_abs: f64,
    /// Mean `|q·K_t - q·K̂_t|` over probe queries and key rows; present only
    /// when a probe was supplied.
    pub attention_mean_abs: Option<f64>,
    /// `max_d s_d / 2`: the worst per-element error the scales permit.
    pub theoretical_max: f64,
}

/// How to sample deterministic probe queries for [`attention_error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionProbeSpec {
    /// Number of query vectors to draw (uniform in `[-1, 1)` per component).
    pub num_queries: usize,
    /// Cap on the number of key rows scored; a deterministic prefix keeps
    /// the probe `O(queries · max_rows · cols)` on very tall matrices while
    /// preserving the mean statistically.
    pub max_rows: usize,
    /// Seed for the query stream.
    pub seed: u64,
}

impl AttentionProbeSpec {
    pub const DEFAULT_NUM_QUERIES: usize = 32;
    pub const DEFAULT_MAX_ROWS: usize = 4096;

    /// Default probe: 32 queries against at most 4096 key rows.
    pub fn new(seed: u64) -> Self {
        AttentionProbeSpec {
            num_queries: Self::DEFAULT_NUM_QUERIES,
            max_rows: Self::DEFAULT_MAX_ROWS,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_queries == 0 || self.max_rows == 0 {
            return Err(KvqError::Config(
                "attention probe requires num_queries >= 1 and max_rows >= 1".to_string(),
            ));
        }
        Ok(())
    }

    /// Draws the probe's queries: one RNG stream, queries emitted in order,
    /// each component uniform in `[-1, 1)`.
    pub fn sample_queries(&self, cols: usize) -> Vec<Vec<f32>> {
        let mut rng = SplitMix64::new(self.seed);
        (0..self.num_queries)
            .map(|_| (0..cols).map(|_| rng.next_in_range(-1.0, 1.0)).collect())
            .collect()
    }
}

fn check_same_shape(a: &Fp32Matrix, b: &Fp32Matrix) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(KvqError::Dimension(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

/// Frobenius norm of `A - B`, accumulated in `f64`.
pub fn l2_error(a: &Fp32Matrix, b: &Fp32Matrix) -> Result<f64> {
    check_same_shape(a, b)?;
    let mut acc = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = f64::from(*x) - f64::from(*y);
        acc += d * d;
    }
    Ok(acc.sqrt())
}

/// Largest absolute per-element difference between `A` and `B`.
pub fn max_abs_error(a: &Fp32Matrix, b: &Fp32Matrix) -> Result<f64> {
    check_same_shape(a, b)?;
    let mut worst = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = (f64::from(*x) - f64::from(*y)).abs();
        if d > worst {
            worst = d;
        }
    }
    Ok(worst)
}

/// Dot product with a fixed four-accumulator partition: deterministic for a
/// given length, and fast enough for multi-gigaelement probes.
fn dot_f64(q: &[f32], k: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut qc = q.chunks_exact(4);
    let mut kc = k.chunks_exact(4);
    for (qs, ks) in (&mut qc).zip(&mut kc) {
        acc[0] += f64::from(qs[0]) * f64::from(ks[0]);
        acc[1] += f64::from(qs[1]) * f64::from(ks[1]);
        acc[2] += f64::from(qs[2]) * f64::from(ks[2]);
        acc[3] += f64::from(qs[3]) * f64::from(ks[3]);
    }
    for (x, y) in qc.remainder().iter().zip(kc.remainder()) {
        acc[0] += f64::from(*x) * f64::from(*y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Attention-surrogate error against explicit query vectors: the mean over
/// all (query, row) pairs of `|q·K_t - q·K̂_t|`, raw (unscaled) dot products.
/// Rows beyond `max_rows` are ignored.
pub fn attention_error_with_queries(
    k: &Fp32Matrix,
    k_hat: &Fp32Matrix,
    queries: &[Vec<f32>],
    max_rows: usize,
) -> Result<f64> {
    check_same_shape(k, k_hat)?;
    if queries.is_empty() || max_rows == 0 {
        return Err(KvqError::Config(
            "attention probe requires at least one query and one row".to_string(),
        ));
    }
    for q in queries {
        if q.len() != k.cols() {
            return Err(KvqError::Dimension(format!(
                "query length {} does not match matrix cols {}",
                q.len(),
                k.cols()
            )));
        }
    }
    let rows = k.rows().min(max_rows);
    let mut acc = 0.0f64;
    for q in queries {
        for t in 0..rows {
            let orig = dot_f64(q, k.row(t));
            let recon = dot_f64(q, k_hat.row(t));
            acc += (orig - recon).abs();
        }
    }
    Ok(acc / (queries.len() * rows) as f64)
}

/// Attention-surrogate error with queries drawn from `probe`: deterministic
/// for a given probe, independent of backend or worker count.
pub fn attention_error(
    k: &Fp32Matrix,
    k_hat: &Fp32Matrix,
    probe: &AttentionProbeSpec,
) -> Result<f64> {
    probe.validate()?;
    let queries = probe.sample_queries(k.cols());
    attention_error_with_queries(k, k_hat, &queries, probe.max_rows)
}

/// Worst-case round-trip error the scale vector permits: `max_d s_d / 2`
/// (half the widest quantization step).
pub fn theoretical_max_error(scales: &ScaleVector) -> f64 {
    scales
        .as_slice()
        .iter()
        .fold(0.0f64, |m, &s| m.max(f64::from(s) / 2.0))
}

/// Computes every metric for `K` against the reconstruction of `cache`.
pub fn error_report(
    k: &Fp32Matrix,
    cache: &QuantizedCache,
    probe: Option<&AttentionProbeSpec>,
) -> Result<ErrorReport> {
    let recon = dequantize_with_workers(&cache.q, &cache.scales, BackendId::Vectorized, 1)?;
    let l2 = l2_error(k, &recon)?;
    let max_abs = max_abs_error(k, &recon)?;
    let attention_mean_abs = match probe {
        Some(p) => Some(attention_error(k, &recon, p)?),
        None => None,
    };
    Ok(ErrorReport {
        l2,
        max_abs,
        attention_mean_abs,
        theoretical_max: theoretical_max_error(&cache.scales),
    })
}
