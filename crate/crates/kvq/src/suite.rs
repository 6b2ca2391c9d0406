//! Named validation battery, runnable from the CLI.
//!
//! Six categories cover structure (types, serialization, RNG bounds),
//! metric identities, hand-constructed numerical cases, cross-backend
//! consistency, edge shapes, and larger stress matrices. Failures are data
//! (name + message), not errors: the suite always runs to completion, and
//! every test is seeded, so two consecutive runs produce identical results.
//!
//! One deliberate strengthening over common practice: backend comparisons
//! demand *exact* equality, not ±1 codes. All backends share a single
//! rounding kernel, so any deviation at all is a bug worth failing on.

use std::fmt;
use std::str::FromStr;

use crate::error::KvqError;
use crate::metrics::{attention_error, l2_error, max_abs_error, AttentionProbeSpec};
use crate::quant::{
    dequantize_with_workers, quantize_cache, quantize_with_workers, roundtrip, BackendId,
};
use crate::scale::{compute_scales_par, compute_scales_ref};
use crate::tensor::{make_fp32, Fill, Fp32Matrix, Int8Matrix, RngSpec, ScaleVector};

/// Test categories, selectable from the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Structural,
    Identity,
    Deterministic,
    Backend,
    Edge,
    Stress,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Structural,
        Category::Identity,
        Category::Deterministic,
        Category::Backend,
        Category::Edge,
        Category::Stress,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Structural => "structural",
            Category::Identity => "identity",
            Category::Deterministic => "deterministic",
            Category::Backend => "backend",
            Category::Edge => "edge",
            Category::Stress => "stress",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = KvqError;

    fn from_str(s: &str) -> crate::error::Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Category::ALL.iter().map(|c| c.name()).collect();
                KvqError::Config(format!(
                    "unknown category {s:?}; valid categories: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// Outcome of one battery run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteResult {
    pub total: usize,
    pub passed: usize,
    /// `(test name, failure message)`, in battery order.
    pub failures: Vec<(String, String)>,
}

impl SuiteResult {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

type TestResult = Result<(), String>;
type TestFn = fn() -> TestResult;

struct SuiteTest {
    name: &'static str,
    category: Category,
    run: TestFn,
}

/// Runs the battery, optionally restricted to `categories` (None = all).
/// Failures never abort the run; a panicking test is recorded as a failure.
pub fn run_suite(categories: Option<&[Category]>) -> SuiteResult {
    let mut total = 0;
    let mut passed = 0;
    let mut failures = Vec::new();
    for test in battery() {
        if let Some(wanted) = categories {
            if !wanted.contains(&test.category) {
                continue;
            }
        }
        total += 1;
        let outcome = std::panic::catch_unwind(test.run).unwrap_or_else(|payload| {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "test panicked".to_string());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(()) => passed += 1,
            Err(msg) => failures.push((test.name.to_string(), msg)),
        }
    }
    SuiteResult {
        total,
        passed,
        failures,
    }
}

/// Names of the battery tests that [`run_suite`] would execute for the same
/// category selection, in execution order — for rendering full listings.
pub fn battery_names(categories: Option<&[Category]>) -> Vec<&'static str> {
    battery()
        .iter()
        .filter(|t| categories.map_or(true, |wanted| wanted.contains(&t.category)))
        .map(|t| t.name)
        .collect()
}

/// Serializes a result as a small JSON document for machine consumption.
pub fn suite_result_json(result: &SuiteResult) -> String {
    let failures: Vec<String> = result
        .failures
        .iter()
        .map(|(name, msg)| {
            format!(
                "{{\"name\":{},\"message\":{}}}",
                json_string(name),
                json_string(msg)
            )
        })
        .collect();
    format!(
        "{{\"total\":{},\"passed\":{},\"failures\":[{}]}}\n",
        result.total,
        result.passed,
        failures.join(",")
    )
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

// --------------------------------------------------------------------------
// Shared checks
// --------------------------------------------------------------------------

fn expect(cond: bool, msg: impl FnOnce() -> String) -> TestResult {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Exact code comparison; failure messages carry the element coordinate so a
/// misbehaving backend is immediately localizable.
fn compare_codes(label: &str, got: &Int8Matrix, want: &Int8Matrix) -> TestResult {
    for t in 0..want.rows() {
        for d in 0..want.cols() {
            if got.get(t, d) != want.get(t, d) {
                return Err(format!(
                    "{label}: code mismatch at element ({t}, {d}): got {}, expected {}",
                    got.get(t, d),
                    want.get(t, d)
                ));
            }
        }
    }
    Ok(())
}

/// Bit-exact float comparison with coordinates, as above.
fn compare_values(label: &str, got: &Fp32Matrix, want: &Fp32Matrix) -> TestResult {
    for t in 0..want.rows() {
        for d in 0..want.cols() {
            if got.get(t, d).to_bits() != want.get(t, d).to_bits() {
                return Err(format!(
                    "{label}: value mismatch at element ({t}, {d}): got {:?}, expected {:?}",
                    got.get(t, d),
                    want.get(t, d)
                ));
            }
        }
    }
    Ok(())
}

fn seeded(rows: usize, cols: usize, seed: u64) -> Fp32Matrix {
    make_fp32(rows, cols, Fill::Rng(RngSpec::new(seed))).expect("valid shape")
}

fn e(err: impl fmt::Display) -> String {
    err.to_string()
}

/// Checks quantize + dequantize of every backend against scalar-ref on one
/// matrix, with exact equality.
fn backends_agree_on(k: &Fp32Matrix, label: &str) -> TestResult {
    let scales = compute_scales_ref(k);
    let q_ref = quantize_with_workers(k, &scales, BackendId::ScalarRef, 1).map_err(e)?;
    let d_ref = dequantize_with_workers(&q_ref, &scales, BackendId::ScalarRef, 1).map_err(e)?;
    for backend in BackendId::ALL {
        for workers in [1, 3] {
            let q = quantize_with_workers(k, &scales, backend, workers).map_err(e)?;
            compare_codes(&format!("{label}: {backend} (workers {workers})"), &q, &q_ref)?;
            let d = dequantize_with_workers(&q, &scales, backend, workers).map_err(e)?;
            compare_values(&format!("{label}: {backend} (workers {workers})"), &d, &d_ref)?;
        }
    }
    Ok(())
}

// --------------------------------------------------------------------------
// Battery
// --------------------------------------------------------------------------

fn battery() -> Vec<SuiteTest> {
    fn t(name: &'static str, category: Category, run: TestFn) -> SuiteTest {
        SuiteTest {
            name,
            category,
            run,
        }
    }
    use Category::*;
    vec![
        t("structural::fp32_matrix_shape_and_indexing", Structural, || {
            let k = seeded(6, 5, 10);
            expect(k.rows() == 6 && k.cols() == 5 && k.len() == 30, || {
                format!("shape reported {}x{} len {}", k.rows(), k.cols(), k.len())
            })?;
            expect(k.get(3, 2) == k.data()[3 * 5 + 2], || {
                "get() disagrees with row-major layout".to_string()
            })?;
            expect(k.row(4) == &k.data()[20..25], || {
                "row() slice disagrees with layout".to_string()
            })
        }),
        t("structural::fp32_serialization_round_trip", Structural, || {
            let k = seeded(7, 3, 11);
            let back = Fp32Matrix::from_bytes(&k.to_bytes()).map_err(e)?;
            compare_values("fp32 serialization", &back, &k)
        }),
        t("structural::cache_serialization_round_trip", Structural, || {
            let cache = quantize_cache(&seeded(9, 4, 12), BackendId::ScalarRef).map_err(e)?;
            let back = crate::tensor::QuantizedCache::from_bytes(&cache.to_bytes()).map_err(e)?;
            compare_codes("cache codes", &back.q, &cache.q)?;
            expect(back.scales.as_slice() == cache.scales.as_slice(), || {
                "cache scales changed across serialization".to_string()
            })
        }),
        t("structural::rng_values_within_bounds", Structural, || {
            let k = make_fp32(100, 40, Fill::Rng(RngSpec::with_range(13, -2.5, 0.5).map_err(e)?))
                .map_err(e)?;
            for (i, &x) in k.data().iter().enumerate() {
                if !(-2.5..0.5).contains(&x) {
                    return Err(format!("sample {i} = {x} outside [-2.5, 0.5)"));
                }
            }
            let unit = seeded(100, 40, 13);
            for (i, &x) in unit.data().iter().enumerate() {
                if !(-1.0..1.0).contains(&x) {
                    return Err(format!("sample {i} = {x} outside [-1, 1)"));
                }
            }
            Ok(())
        }),
        t("structural::int8_payload_is_quarter_of_fp32", Structural, || {
            let k = seeded(32, 16, 14);
            let cache = quantize_cache(&k, BackendId::ScalarRef).map_err(e)?;
            expect(k.payload_bytes() == 4 * cache.q.payload_bytes(), || {
                format!(
                    "payload ratio: fp32 {} vs int8 {}",
                    k.payload_bytes(),
                    cache.q.payload_bytes()
                )
            })
        }),
        t("structural::format_rejects_corruption", Structural, || {
            let bytes = seeded(3, 3, 15).to_bytes();
            let mut bad_magic = bytes.clone();
            bad_magic[0] = b'X';
            expect(Fp32Matrix::from_bytes(&bad_magic).is_err(), || {
                "corrupt magic accepted".to_string()
            })?;
            expect(Fp32Matrix::from_bytes(&bytes[..bytes.len() - 1]).is_err(), || {
                "truncated payload accepted".to_string()
            })?;
            let mut trailing = bytes.clone();
            trailing.push(0);
            expect(Fp32Matrix::from_bytes(&trailing).is_err(), || {
                "trailing bytes accepted".to_string()
            })
        }),
        t("identity::l2_error_of_matrix_with_itself_is_zero", Identity, || {
            let k = seeded(33, 17, 20);
            let v = l2_error(&k, &k).map_err(e)?;
            expect(v == 0.0, || format!("l2_error(K, K) = {v}"))
        }),
        t("identity::max_abs_error_of_matrix_with_itself_is_zero", Identity, || {
            let k = seeded(33, 17, 21);
            let v = max_abs_error(&k, &k).map_err(e)?;
            expect(v == 0.0, || format!("max_abs_error(K, K) = {v}"))
        }),
        t("identity::attention_error_of_matrix_with_itself_is_zero", Identity, || {
            let k = seeded(33, 16, 22);
            let v = attention_error(&k, &k, &AttentionProbeSpec::new(5)).map_err(e)?;
            expect(v == 0.0, || format!("attention_error(K, K) = {v}"))
        }),
        t("deterministic::scales_hand_traced", Deterministic, || {
            let k = Fp32Matrix::from_vec(2, 2, vec![0.25, -0.75, 0.5, 0.6]).map_err(e)?;
            let s = compute_scales_ref(&k);
            let want = [0.5f32 / 127.0, 0.75f32 / 127.0];
            for (d, &w) in want.iter().enumerate() {
                if s.get(d).to_bits() != w.to_bits() {
                    return Err(format!("scale[{d}] = {:?}, expected {w:?}", s.get(d)));
                }
            }
            Ok(())
        }),
        t("deterministic::quantize_hand_traced", Deterministic, || {
            let k = Fp32Matrix::from_vec(5, 1, vec![127.0, -127.0, 63.5, -63.5, 200.0]).map_err(e)?;
            let s = ScaleVector::from_vec(vec![1.0]).map_err(e)?;
            let q = quantize_with_workers(&k, &s, BackendId::ScalarRef, 1).map_err(e)?;
            let want: [i8; 5] = [127, -127, 64, -64, 127];
            compare_codes(
                "hand-traced quantize",
                &q,
                &Int8Matrix::from_vec(5, 1, want.to_vec()).map_err(e)?,
            )
        }),
        t("deterministic::dequantize_hand_traced", Deterministic, || {
            let q = Int8Matrix::from_vec(3, 1, vec![127, 0, 64]).map_err(e)?;
            let s = ScaleVector::from_vec(vec![1.0 / 127.0]).map_err(e)?;
            let m = dequantize_with_workers(&q, &s, BackendId::ScalarRef, 1).map_err(e)?;
            let want = [1.0f32, 0.0, 64.0 * (1.0f32 / 127.0)];
            for (i, &w) in want.iter().enumerate() {
                if m.data()[i].to_bits() != w.to_bits() {
                    return Err(format!("value[{i}] = {:?}, expected {w:?}", m.data()[i]));
                }
            }
            Ok(())
        }),
        t("deterministic::ties_round_to_even", Deterministic, || {
            let data: Vec<f32> = (-8..=8).map(|k| k as f32 + 0.5).collect();
            let k = Fp32Matrix::from_vec(data.len(), 1, data.clone()).map_err(e)?;
            let s = ScaleVector::from_vec(vec![1.0]).map_err(e)?;
            let q = quantize_with_workers(&k, &s, BackendId::ScalarRef, 1).map_err(e)?;
            for (i, &code) in q.data().iter().enumerate() {
                let want = data[i].round_ties_even() as i8;
                if code != want || code % 2 != 0 {
                    return Err(format!("tie {} quantized to {code}, expected {want}", data[i]));
                }
            }
            Ok(())
        }),
        t("deterministic::rng_fill_repeatable", Deterministic, || {
            let a = seeded(24, 8, 30);
            let b = seeded(24, 8, 30);
            compare_values("same-seed fills", &a, &b)?;
            let c = seeded(24, 8, 31);
            expect(a.data() != c.data(), || {
                "different seeds produced identical matrices".to_string()
            })
        }),
        t("deterministic::zero_scale_column_convention", Deterministic, || {
            let k = Fp32Matrix::from_vec(2, 2, vec![0.0, 3.5, 0.0, -1.25]).map_err(e)?;
            let cache = quantize_cache(&k, BackendId::ScalarRef).map_err(e)?;
            expect(cache.scales.get(0) == 0.0, || {
                format!("all-zero column got scale {}", cache.scales.get(0))
            })?;
            expect(cache.q.get(0, 0) == 0 && cache.q.get(1, 0) == 0, || {
                "all-zero column did not map to code 0".to_string()
            })?;
            let r = dequantize_with_workers(&cache.q, &cache.scales, BackendId::ScalarRef, 1)
                .map_err(e)?;
            expect(r.get(0, 0) == 0.0 && r.get(1, 0) == 0.0, || {
                "zero-scale column did not reconstruct to 0.0".to_string()
            })
        }),
        t("backend::quantize_matches_scalar_reference", Backend, || {
            let k = seeded(96, 48, 40);
            let scales = compute_scales_ref(&k);
            let want = quantize_with_workers(&k, &scales, BackendId::ScalarRef, 1).map_err(e)?;
            for backend in &BackendId::ALL[1..] {
                let got = quantize_with_workers(&k, &scales, *backend, 4).map_err(e)?;
                compare_codes(&format!("{backend} quantize"), &got, &want)?;
            }
            Ok(())
        }),
        t("backend::dequantize_matches_scalar_reference", Backend, || {
            let k = seeded(96, 48, 41);
            let cache = quantize_cache(&k, BackendId::ScalarRef).map_err(e)?;
            let want =
                dequantize_with_workers(&cache.q, &cache.scales, BackendId::ScalarRef, 1).map_err(e)?;
            for backend in &BackendId::ALL[1..] {
                let got =
                    dequantize_with_workers(&cache.q, &cache.scales, *backend, 4).map_err(e)?;
                compare_values(&format!("{backend} dequantize"), &got, &want)?;
            }
            Ok(())
        }),
        t("backend::all_pairs_produce_identical_outputs", Backend, || {
            let k = seeded(64, 33, 42);
            let scales = compute_scales_ref(&k);
            let outputs: Vec<(BackendId, Int8Matrix)> = BackendId::ALL
                .iter()
                .map(|&b| Ok((b, quantize_with_workers(&k, &scales, b, 2).map_err(e)?)))
                .collect::<Result<_, String>>()?;
            for (i, (ba, qa)) in outputs.iter().enumerate() {
                for (bb, qb) in &outputs[i + 1..] {
                    compare_codes(&format!("{ba} vs {bb}"), qb, qa)?;
                }
            }
            Ok(())
        }),
        t("backend::worker_count_does_not_change_results", Backend, || {
            let k = seeded(70, 18, 43);
            let scales = compute_scales_ref(&k);
            let want = quantize_with_workers(&k, &scales, BackendId::ParallelNaive, 1).map_err(e)?;
            for backend in &BackendId::ALL[1..] {
                for workers in [2, 5, 16, 100] {
                    let got = quantize_with_workers(&k, &scales, *backend, workers).map_err(e)?;
                    compare_codes(&format!("{backend} with {workers} workers"), &got, &want)?;
                }
            }
            Ok(())
        }),
        t("backend::parallel_scales_match_sequential", Backend, || {
            let k = seeded(128, 37, 44);
            let want = compute_scales_ref(&k);
            for workers in [1, 2, 3, 8, 37, 200] {
                let got = compute_scales_par(&k, workers);
                for d in 0..want.len() {
                    if got.get(d).to_bits() != want.get(d).to_bits() {
                        return Err(format!(
                            "scale mismatch at column {d} with {workers} workers: got {:?}, expected {:?}",
                            got.get(d),
                            want.get(d)
                        ));
                    }
                }
            }
            Ok(())
        }),
        t("edge::one_by_one_matrix", Edge, || {
            let k = Fp32Matrix::from_vec(1, 1, vec![-3.25]).map_err(e)?;
            backends_agree_on(&k, "1x1")?;
            let cache = quantize_cache(&k, BackendId::Vectorized).map_err(e)?;
            expect(cache.q.get(0, 0) == -127, || {
                format!("1x1 extreme value code {}", cache.q.get(0, 0))
            })
        }),
        t("edge::single_row_and_single_column", Edge, || {
            backends_agree_on(&seeded(1, 19, 50), "single row")?;
            backends_agree_on(&seeded(19, 1, 51), "single column")
        }),
        t("edge::minimal_vectorizable_width", Edge, || {
            backends_agree_on(&seeded(23, 4, 52), "width 4")
        }),
        t("edge::non_multiple_of_four_tails", Edge, || {
            backends_agree_on(&seeded(23, 5, 53), "width 5")?;
            backends_agree_on(&seeded(23, 7, 54), "width 7")
        }),
        t("edge::all_zeros", Edge, || {
            let k = make_fp32(16, 6, Fill::Zeros).map_err(e)?;
            backends_agree_on(&k, "all zeros")?;
            let r = roundtrip(&k, BackendId::Blocked).map_err(e)?;
            compare_values("all-zeros round trip", &r, &k)
        }),
        t("edge::all_ones", Edge, || {
            let k = make_fp32(16, 6, Fill::Ones).map_err(e)?;
            backends_agree_on(&k, "all ones")?;
            let cache = quantize_cache(&k, BackendId::Coarsened).map_err(e)?;
            expect(cache.q.data().iter().all(|&c| c == 127), || {
                "all-ones matrix should hit code 127 everywhere".to_string()
            })?;
            // 127 * (1/127) is exact in f32, so ones reconstruct exactly.
            let r = roundtrip(&k, BackendId::Coarsened).map_err(e)?;
            compare_values("all-ones round trip", &r, &k)
        }),
        t("edge::alternating_signs", Edge, || {
            let k = make_fp32(12, 9, Fill::AlternatingSigns).map_err(e)?;
            backends_agree_on(&k, "alternating signs")?;
            let cache = quantize_cache(&k, BackendId::ParallelNaive).map_err(e)?;
            for t in 0..k.rows() {
                for d in 0..k.cols() {
                    let want = if k.get(t, d) > 0.0 { 127 } else { -127 };
                    if cache.q.get(t, d) != want {
                        return Err(format!(
                            "alternating signs: code at ({t}, {d}) = {}, expected {want}",
                            cache.q.get(t, d)
                        ));
                    }
                }
            }
            let r = roundtrip(&k, BackendId::ParallelNaive).map_err(e)?;
            compare_values("alternating-signs round trip", &r, &k)
        }),
        t("stress::error_bound_holds_on_large_matrix", Stress, || {
            let k = seeded(4096, 512, 60);
            let cache = quantize_cache(&k, BackendId::Vectorized).map_err(e)?;
            let r = dequantize_with_workers(&cache.q, &cache.scales, BackendId::Vectorized, 4)
                .map_err(e)?;
            let eps = 2.0f64.powi(-20);
            for t in 0..k.rows() {
                for d in 0..k.cols() {
                    let x = f64::from(k.get(t, d));
                    let err = (x - f64::from(r.get(t, d))).abs();
                    let bound = f64::from(cache.scales.get(d)) / 2.0 + eps * x.abs().max(1.0);
                    if err > bound {
                        return Err(format!(
                            "bound violated at ({t}, {d}): |{x} - {}| = {err} > {bound}",
                            r.get(t, d)
                        ));
                    }
                }
            }
            Ok(())
        }),
        t("stress::round_trip_is_idempotent", Stress, || {
            let k = seeded(4096, 512, 61);
            let once = roundtrip(&k, BackendId::Vectorized).map_err(e)?;
            let twice = roundtrip(&once, BackendId::Vectorized).map_err(e)?;
            compare_values("second round trip", &twice, &once)
        }),
        t("stress::cache_serialization_on_large_matrix", Stress, || {
            let cache = quantize_cache(&seeded(4096, 512, 62), BackendId::Vectorized).map_err(e)?;
            let back = crate::tensor::QuantizedCache::from_bytes(&cache.to_bytes()).map_err(e)?;
            compare_codes("large cache codes", &back.q, &cache.q)?;
            expect(back.scales.as_slice() == cache.scales.as_slice(), || {
                "large cache scales changed across serialization".to_string()
            })
        }),
        t("stress::negating_input_negates_codes", Stress, || {
            let k = seeded(2048, 256, 63);
            let neg = Fp32Matrix::from_vec(
                k.rows(),
                k.cols(),
                k.data().iter().map(|x| -x).collect(),
            )
            .map_err(e)?;
            let scales = compute_scales_ref(&k);
            let q = quantize_with_workers(&k, &scales, BackendId::Vectorized, 2).map_err(e)?;
            let qn = quantize_with_workers(&neg, &scales, BackendId::Vectorized, 2).map_err(e)?;
            for t in 0..k.rows() {
                for d in 0..k.cols() {
                    if q.get(t, d) != -qn.get(t, d) {
                        return Err(format!(
                            "sign asymmetry at ({t}, {d}): {} vs {}",
                            q.get(t, d),
                            qn.get(t, d)
                        ));
                    }
                }
            }
            Ok(())
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_battery_passes() {
        let result = run_suite(None);
        assert!(result.total >= 25, "battery has {} tests", result.total);
        assert_eq!(result.passed, result.total, "failures: {:?}", result.failures);
        assert!(result.is_success());
    }

    #[test]
    fn battery_covers_every_category() {
        for category in Category::ALL {
            let result = run_suite(Some(&[category]));
            assert!(result.total >= 1, "{category} has no tests");
            assert!(result.is_success(), "{category} failures: {:?}", result.failures);
        }
    }

    #[test]
    fn category_counts() {
        assert_eq!(run_suite(Some(&[Category::Identity])).total, 3);
        assert_eq!(run_suite(Some(&[Category::Structural])).total, 6);
        let two = run_suite(Some(&[Category::Identity, Category::Edge]));
        assert_eq!(
            two.total,
            run_suite(Some(&[Category::Identity])).total
                + run_suite(Some(&[Category::Edge])).total
        );
    }

    #[test]
    fn suite_runs_are_deterministic() {
        let a = run_suite(Some(&[Category::Deterministic, Category::Identity]));
        let b = run_suite(Some(&[Category::Deterministic, Category::Identity]));
        assert_eq!(a, b);
    }

    #[test]
    fn category_names_parse() {
        for c in Category::ALL {
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
        }
        assert!("fuzz".parse::<Category>().is_err());
    }

    #[test]
    fn mismatch_message_carries_coordinates() {
        // A deliberately perturbed output must be reported with its element
        // coordinate — the debugging contract for backend comparisons.
        let want = Int8Matrix::from_vec(3, 4, vec![1; 12]).unwrap();
        let mut data = vec![1i8; 12];
        data[2 * 4 + 3] += 1;
        let got = Int8Matrix::from_vec(3, 4, data).unwrap();
        let msg = compare_codes("stub backend", &got, &want).unwrap_err();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(msg.contains("got 2, expected 1"), "{msg}");
        assert!(msg.contains("stub backend"), "{msg}");
    }

    #[test]
    fn result_json_shape() {
        let result = SuiteResult {
            total: 27,
            passed: 26,
            failures: vec![("backend::x".to_string(), "code \"off\" at (1, 2)".to_string())],
        };
        let text = suite_result_json(&result);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["total"], 27);
        assert_eq!(value["passed"], 26);
        assert_eq!(value["failures"][0]["name"], "backend::x");
        assert_eq!(value["failures"][0]["message"], "code \"off\" at (1, 2)");
        // A clean result serializes with an empty failures array.
        let clean = suite_result_json(&SuiteResult { total: 25, passed: 25, failures: vec![] });
        let value: serde_json::Value = serde_json::from_str(&clean).unwrap();
        assert_eq!(value["failures"].as_array().unwrap().len(), 0);
    }
}
