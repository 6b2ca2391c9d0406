//! Property tests: statements that must hold for *every* input, checked
//! over randomized shapes, fills, backends, and worker counts.

use proptest::prelude::*;

use kvq::{
    compute_scales_ref, dequantize_with_workers, make_fp32, quantize_cache_with_workers,
    quantize_with_workers, BackendId, Fill, Fp32Matrix, QuantizedCache, RngSpec,
};

fn fill_strategy() -> impl Strategy<Value = Fill> {
    prop_oneof![
        any::<u64>().prop_map(|s| Fill::Rng(RngSpec::new(s))),
        (any::<u64>(), -50.0f32..50.0, 0.1f32..100.0).prop_map(|(s, lo, w)| {
            Fill::Rng(RngSpec::with_range(s, lo, lo + w).expect("valid range"))
        }),
        (-100.0f32..100.0).prop_map(Fill::Constant),
        Just(Fill::Zeros),
        Just(Fill::Ones),
        Just(Fill::AlternatingSigns),
    ]
}

fn backend_strategy() -> impl Strategy<Value = BackendId> {
    (0usize..5).prop_map(|i| BackendId::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Every element of every reconstruction is within half a quantization
    /// step of its original, plus float-evaluation slack.
    #[test]
    fn round_trip_error_within_half_step(
        rows in 1usize..=512,
        cols in 1usize..=512,
        fill in fill_strategy(),
        backend in backend_strategy(),
        workers in 1usize..=4,
    ) {
        let k = make_fp32(rows, cols, fill).unwrap();
        let cache = quantize_cache_with_workers(&k, backend, workers).unwrap();
        let r = dequantize_with_workers(&cache.q, &cache.scales, backend, workers).unwrap();
        let eps = 2.0f64.powi(-20);
        for t in 0..rows {
            for d in 0..cols {
                let x = f64::from(k.get(t, d));
                let err = (x - f64::from(r.get(t, d))).abs();
                let bound = f64::from(cache.scales.get(d)) / 2.0 + eps * x.abs().max(1.0);
                prop_assert!(
                    err <= bound,
                    "({t}, {d}) of {rows}x{cols} {fill:?} via {backend}: err {err:e} > bound {bound:e}"
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Backend and worker count never change a single output bit.
    #[test]
    fn backends_and_workers_are_bit_identical(
        rows in 1usize..=96,
        cols in 1usize..=96,
        fill in fill_strategy(),
        workers in 1usize..=8,
    ) {
        let k = make_fp32(rows, cols, fill).unwrap();
        let scales = compute_scales_ref(&k);
        let q_ref = quantize_with_workers(&k, &scales, BackendId::ScalarRef, 1).unwrap();
        let d_ref = dequantize_with_workers(&q_ref, &scales, BackendId::ScalarRef, 1).unwrap();
        for backend in BackendId::ALL {
            let q = quantize_with_workers(&k, &scales, backend, workers).unwrap();
            prop_assert_eq!(q.data(), q_ref.data(), "{} quantize", backend);
            let d = dequantize_with_workers(&q, &scales, backend, workers).unwrap();
            for (i, (a, b)) in d.data().iter().zip(d_ref.data()).enumerate() {
                prop_assert_eq!(a.to_bits(), b.to_bits(), "{} dequantize elem {}", backend, i);
            }
        }
    }

    /// The symmetric range means code -128 can never appear, and negating
    /// the input exactly negates the codes.
    #[test]
    fn codes_are_symmetric_and_never_minus_128(
        rows in 1usize..=96,
        cols in 1usize..=96,
        seed in any::<u64>(),
    ) {
        let k = make_fp32(rows, cols, Fill::Rng(RngSpec::new(seed))).unwrap();
        let neg = Fp32Matrix::from_vec(
            rows,
            cols,
            k.data().iter().map(|x| -x).collect(),
        ).unwrap();
        let scales = compute_scales_ref(&k);
        let q = quantize_with_workers(&k, &scales, BackendId::Vectorized, 2).unwrap();
        let qn = quantize_with_workers(&neg, &scales, BackendId::Vectorized, 2).unwrap();
        for (a, b) in q.data().iter().zip(qn.data()) {
            prop_assert!(*a != i8::MIN && *b != i8::MIN);
            prop_assert_eq!(*a, -*b);
        }
    }

    /// Serialization is lossless for fp32 matrices and quantized caches.
    #[test]
    fn files_round_trip_bit_exactly(
        rows in 1usize..=64,
        cols in 1usize..=64,
        fill in fill_strategy(),
        backend in backend_strategy(),
    ) {
        let k = make_fp32(rows, cols, fill).unwrap();
        let back = Fp32Matrix::from_bytes(&k.to_bytes()).unwrap();
        prop_assert_eq!(back.rows(), rows);
        prop_assert_eq!(back.cols(), cols);
        for (a, b) in back.data().iter().zip(k.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        let cache = quantize_cache_with_workers(&k, backend, 2).unwrap();
        let cache_back = QuantizedCache::from_bytes(&cache.to_bytes()).unwrap();
        prop_assert_eq!(cache_back.q.data(), cache.q.data());
        for (a, b) in cache_back.scales.as_slice().iter().zip(cache.scales.as_slice()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
