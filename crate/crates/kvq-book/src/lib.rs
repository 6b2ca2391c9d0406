//! Compiled companion to the guide under `book/`.
//!
//! Each module below carries one chapter of the guide as its documentation,
//! included verbatim from the markdown sources. Rustdoc turns every fenced
//! Rust block in those chapters into a doc-test of this crate, so
//! `cargo test` executes the exact code readers see. If the library's API or
//! behaviour drifts from the text, the workspace stops building green.
//!
//! The crate exports nothing; its entire purpose is the doc-tests.

#![doc = include_str!("../../../book/src/overview.md")]

#[doc = include_str!("../../../README.md")]
pub mod readme {}

#[doc = include_str!("../../../book/src/ch01-why-quantize.md")]
pub mod ch01_why_quantize {}

#[doc = include_str!("../../../book/src/ch02-quantization-scheme.md")]
pub mod ch02_quantization_scheme {}

#[doc = include_str!("../../../book/src/ch03-kernel-backends.md")]
pub mod ch03_kernel_backends {}

#[doc = include_str!("../../../book/src/ch04-error-metrics.md")]
pub mod ch04_error_metrics {}

#[doc = include_str!("../../../book/src/ch05-benchmarking.md")]
pub mod ch05_benchmarking {}

#[doc = include_str!("../../../book/src/ch06-file-format-and-cli.md")]
pub mod ch06_file_format_and_cli {}
