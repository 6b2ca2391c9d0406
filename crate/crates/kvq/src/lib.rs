//! Per-channel symmetric INT8 quantization for transformer KV caches.
//!
//! A transformer's key/value cache holds one fp32 row per generated token
//! per layer and head; at long contexts the cache, not the weights,
//! dominates memory. This crate compresses cache matrices 4× by storing one
//! signed byte per element plus one fp32 scale per column (channel):
//!
//! * **scales** — `s_d = max_t |K[t,d]| / 127`, one per column;
//! * **quantize** — `Q[t,d] = clamp(round_half_even(K[t,d] / s_d), -127, 127)`,
//!   with all-zero columns mapping to code 0;
//! * **dequantize** — `K̂[t,d] = f32(Q[t,d]) · s_d`, so every element lands
//!   within `s_d / 2` of its original value.
//!
//! The code -128 is never produced: the range is symmetric, so negating a
//! matrix exactly negates its codes.
//!
//! Five interchangeable backends implement the maps with different work
//! decompositions (see [`quant`]); they are bit-identical by construction
//! and by test, so backend choice is purely a performance decision. The
//! supporting modules provide deterministic data generation ([`rng`],
//! [`tensor`]), a small binary file format ([`format`]), reconstruction
//! metrics ([`metrics`]), a timing harness ([`bench`]), and a named
//! validation battery ([`suite`]).
//!
//! ```
//! use kvq::{make_fp32, quantize_cache, dequantize, max_abs_error,
//!           theoretical_max_error, BackendId, Fill, RngSpec};
//!
//! let k = make_fp32(2048, 128, Fill::Rng(RngSpec::new(42)))?;
//! let cache = quantize_cache(&k, BackendId::Vectorized)?;
//! let k_hat = dequantize(&cache.q, &cache.scales, BackendId::Vectorized)?;
//!
//! let worst = max_abs_error(&k, &k_hat)?;
//! assert!(worst <= theoretical_max_error(&cache.scales) + 2f64.powi(-20));
//! # Ok::<(), kvq::KvqError>(())
//! ```

pub mod bench;
pub mod error;
pub mod format;
pub mod metrics;
pub mod quant;
pub mod rng;
pub mod scale;
pub mod suite;
pub mod tensor;

pub use bench::{
    default_test_matrix, detect_memory_budget, emit_csv, emit_json, emit_report, parse_csv,
    run_bench, run_bench_with, BenchConfig, BenchRecord, CsvRow, Op, ReportFormat, RunOptions,
    TestMatrix, CSV_HEADER,
};
pub use error::{KvqError, Result};
pub use format::{from_bytes, KvqValue};
pub use metrics::{
    attention_error, attention_error_with_queries, error_report, l2_error, max_abs_error,
    theoretical_max_error, AttentionProbeSpec, ErrorReport,
};
pub use quant::{
    default_workers, dequantize, dequantize_into, dequantize_with_workers, list_backends,
    quantize, quantize_cache, quantize_cache_with_workers, quantize_into, quantize_with_workers,
    roundtrip, roundtrip_with_workers, BackendDescriptor, BackendId,
};
pub use rng::SplitMix64;
pub use scale::{compute_scales_par, compute_scales_ref};
pub use suite::{battery_names, run_suite, suite_result_json, Category, SuiteResult};
pub use tensor::{
    estimate_kv_bytes, format_gb, make_fp32, Fill, Fp32Matrix, Int8Matrix, QuantizedCache,
    RngSpec, ScaleVector,
};
