//! `kvq` — command-line front end for the kvq library.
//!
//! Subcommands cover the whole pipeline: generating deterministic fp32
//! matrices, quantizing them into int8 cache files, reconstructing them,
//! timing the kernel backends, running the validation battery, and sizing
//! KV caches ahead of deployment.
//!
//! Exit codes: `0` success, `2` usage or configuration error, `3` malformed
//! data (dimensions, file format, arithmetic overflow), `4` resource limit
//! exceeded, `5` validation or verification failure, `6` I/O failure.
//!
//! Every flag can also be set through an environment variable with the
//! `KVQ_` prefix (`KVQ_BACKEND`, `KVQ_SEED`, `KVQ_WORKERS`, …); explicit
//! flags win over the environment.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use kvq::{
    battery_names, default_test_matrix, default_workers, dequantize_with_workers,
    detect_memory_budget, emit_report, estimate_kv_bytes, format_gb, from_bytes, list_backends,
    make_fp32, quantize_cache_with_workers, run_bench_with, run_suite, suite_result_json,
    theoretical_max_error, AttentionProbeSpec, BackendId, BenchRecord, Category, Fill, KvqError,
    KvqValue, Op, ReportFormat, RngSpec, RunOptions, TestMatrix,
};

/// Golden-ratio stride separating each config's probe stream from its fill
/// stream; matches the derivation used by the standard benchmark matrix.
const PROBE_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Per-channel INT8 quantization toolkit for transformer KV-cache matrices.
#[derive(Parser)]
#[command(name = "kvq", version, about, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

const EXIT_CODES: &str = "Exit codes:
  0  success
  2  usage or configuration error
  3  malformed data (dimensions, file format, overflow)
  4  resource limit exceeded
  5  validation or verification failure
  6  I/O failure

Every flag can also be set via an environment variable with the KVQ_ prefix
(KVQ_BACKEND, KVQ_SEED, KVQ_WORKERS, ...); explicit flags win.";

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic fp32 matrix file, uniform over [-1, 1).
    Gen {
        /// Rows (sequence positions).
        rows: usize,
        /// Columns (channels).
        cols: usize,
        /// RNG seed; the same seed always produces the same file.
        #[arg(long, env = "KVQ_SEED", default_value_t = 42)]
        seed: u64,
        /// Output path.
        #[arg(long, env = "KVQ_OUT")]
        out: PathBuf,
    },
    /// Quantize an fp32 matrix file into an int8 cache file.
    Quantize {
        /// Input fp32 matrix file.
        input: PathBuf,
        /// Output cache file.
        #[arg(long, env = "KVQ_OUT")]
        out: PathBuf,
        /// Kernel backend.
        #[arg(long, env = "KVQ_BACKEND", default_value = "vectorized")]
        backend: String,
        /// Worker threads for parallel backends (default: all hardware threads).
        #[arg(long, env = "KVQ_WORKERS")]
        workers: Option<usize>,
        /// Recompute with scalar-ref and require bit-identical output.
        #[arg(long, env = "KVQ_VERIFY")]
        verify: bool,
    },
    /// Reconstruct an fp32 matrix file from an int8 cache file.
    Dequantize {
        /// Input cache file.
        input: PathBuf,
        /// Output fp32 matrix file.
        #[arg(long, env = "KVQ_OUT")]
        out: PathBuf,
        /// Kernel backend.
        #[arg(long, env = "KVQ_BACKEND", default_value = "vectorized")]
        backend: String,
        /// Worker threads for parallel backends (default: all hardware threads).
        #[arg(long, env = "KVQ_WORKERS")]
        workers: Option<usize>,
        /// Recompute with scalar-ref and require bit-identical output.
        #[arg(long, env = "KVQ_VERIFY")]
        verify: bool,
    },
    /// Time the kernel backends over the standard shape ladder and write a report.
    Bench {
        /// Row scale factor in (0, 1] applied to the standard shapes.
        #[arg(long, env = "KVQ_SCALE_FACTOR", default_value_t = 0.05)]
        scale_factor: f64,
        /// Comma-separated backends (default: all five).
        #[arg(long, env = "KVQ_BACKENDS")]
        backends: Option<String>,
        /// Comma-separated ops: scales, quantize, dequantize, roundtrip
        /// (default: quantize,dequantize).
        #[arg(long, env = "KVQ_OPS")]
        ops: Option<String>,
        /// Report format: csv or json.
        #[arg(long, env = "KVQ_FORMAT", default_value = "csv")]
        format: String,
        /// Report destination; "-" writes the report to stdout and moves the
        /// summary to stderr.
        #[arg(long, env = "KVQ_OUT", default_value = "-")]
        out: PathBuf,
        /// Base seed; config number i is filled from seed + i (default 42).
        #[arg(long, env = "KVQ_SEED")]
        seed: Option<u64>,
        /// Worker threads for parallel backends (default: all hardware threads).
        #[arg(long, env = "KVQ_WORKERS")]
        workers: Option<usize>,
        /// Refuse configs whose working set exceeds this many bytes
        /// (default: 75% of available memory).
        #[arg(long, env = "KVQ_MEMORY_BUDGET")]
        memory_budget: Option<u64>,
    },
    /// Run the validation battery and list every test's outcome.
    Validate {
        /// Comma-separated categories: structural, identity, deterministic,
        /// backend, edge, stress (default: all).
        #[arg(long, env = "KVQ_CATEGORIES")]
        categories: Option<String>,
        /// Also write the result as JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Size a KV cache and its INT8 alternative.
    Estimate {
        /// Transformer layers.
        layers: u64,
        /// Attention heads per layer.
        heads: u64,
        /// Channels per head.
        head_dim: u64,
        /// Cached sequence length in tokens.
        seq_len: u64,
        /// Element precision of the baseline cache.
        #[arg(value_enum)]
        precision: Precision,
    },
    /// List the available kernel backends.
    Backends,
}

#[derive(ValueEnum, Clone, Copy)]
enum Precision {
    Fp32,
    Fp16,
    Int8,
}

impl Precision {
    fn name(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Fp16 => "fp16",
            Precision::Int8 => "int8",
        }
    }

    fn bytes(self) -> u64 {
        match self {
            Precision::Fp32 => 4,
            Precision::Fp16 => 2,
            Precision::Int8 => 1,
        }
    }
}

/// Restore the default SIGPIPE disposition so pipelines like
/// `kvq bench --out - | head` terminate this process quietly when the
/// consumer closes the pipe, instead of panicking mid-write.
#[cfg(unix)]
fn reset_sigpipe() {
    // SAFETY: resetting a signal disposition to SIG_DFL has no preconditions.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                KvqError::Config(_) => 2,
                KvqError::Dimension(_) | KvqError::Format(_) | KvqError::Overflow(_) => 3,
                KvqError::Resource(_) => 4,
                KvqError::Io(_) => 6,
            })
        }
    }
}

fn run(command: Command) -> kvq::Result<ExitCode> {
    match command {
        Command::Gen { rows, cols, seed, out } => cmd_gen(rows, cols, seed, &out),
        Command::Quantize { input, out, backend, workers, verify } => {
            cmd_quantize(&input, &out, &backend, workers, verify)
        }
        Command::Dequantize { input, out, backend, workers, verify } => {
            cmd_dequantize(&input, &out, &backend, workers, verify)
        }
        Command::Bench {
            scale_factor,
            backends,
            ops,
            format,
            out,
            seed,
            workers,
            memory_budget,
        } => cmd_bench(
            scale_factor,
            backends.as_deref(),
            ops.as_deref(),
            &format,
            &out,
            seed,
            workers,
            memory_budget,
        ),
        Command::Validate { categories, json } => {
            cmd_validate(categories.as_deref(), json.as_deref())
        }
        Command::Estimate { layers, heads, head_dim, seq_len, precision } => {
            cmd_estimate(layers, heads, head_dim, seq_len, precision)
        }
        Command::Backends => cmd_backends(),
    }
}

fn cmd_gen(rows: usize, cols: usize, seed: u64, out: &Path) -> kvq::Result<ExitCode> {
    let k = make_fp32(rows, cols, Fill::Rng(RngSpec::new(seed)))?;
    let bytes = k.to_bytes();
    write_file(out, &bytes)?;
    println!(
        "wrote {}: {rows} x {cols} fp32 matrix, seed {seed}, {} bytes total",
        out.display(),
        bytes.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_quantize(
    input: &Path,
    out: &Path,
    backend: &str,
    workers: Option<usize>,
    verify: bool,
) -> kvq::Result<ExitCode> {
    let backend: BackendId = backend.parse()?;
    let workers = workers.unwrap_or_else(default_workers);
    let k = match parse_value(input, &read_file(input)?)? {
        KvqValue::Fp32(k) => k,
        other => {
            return Err(KvqError::Format(format!(
                "{}: expected an fp32 matrix, found {}",
                input.display(),
                other.dtype_name()
            )))
        }
    };
    let cache = quantize_cache_with_workers(&k, backend, workers)?;
    if verify {
        let reference = quantize_cache_with_workers(&k, BackendId::ScalarRef, 1)?;
        if cache != reference {
            eprintln!("verify: {backend} disagrees with scalar-ref; output not written");
            return Ok(ExitCode::from(5));
        }
        println!("verify: {backend} output is bit-identical to scalar-ref");
    }
    write_file(out, &cache.to_bytes())?;
    let ratio = k.payload_bytes() as f64 / cache.q.payload_bytes() as f64;
    println!("quantized {} -> {}", input.display(), out.display());
    println!("  backend: {backend}");
    println!("  rows: {}", k.rows());
    println!("  cols: {}", k.cols());
    println!("  payload compression ratio: {ratio:.1}");
    println!(
        "  theoretical max error: {:.6e}",
        theoretical_max_error(&cache.scales)
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_dequantize(
    input: &Path,
    out: &Path,
    backend: &str,
    workers: Option<usize>,
    verify: bool,
) -> kvq::Result<ExitCode> {
    let backend: BackendId = backend.parse()?;
    let workers = workers.unwrap_or_else(default_workers);
    let cache = match parse_value(input, &read_file(input)?)? {
        KvqValue::Cache(c) => c,
        other => {
            return Err(KvqError::Format(format!(
                "{}: expected a quantized cache, found {}",
                input.display(),
                other.dtype_name()
            )))
        }
    };
    let recon = dequantize_with_workers(&cache.q, &cache.scales, backend, workers)?;
    if verify {
        let reference = dequantize_with_workers(&cache.q, &cache.scales, BackendId::ScalarRef, 1)?;
        if recon != reference {
            eprintln!("verify: {backend} disagrees with scalar-ref; output not written");
            return Ok(ExitCode::from(5));
        }
        println!("verify: {backend} output is bit-identical to scalar-ref");
    }
    write_file(out, &recon.to_bytes())?;
    println!("reconstructed {} -> {}", input.display(), out.display());
    println!("  backend: {backend}");
    println!("  rows: {}", recon.rows());
    println!("  cols: {}", recon.cols());
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    scale_factor: f64,
    backends: Option<&str>,
    ops: Option<&str>,
    format: &str,
    out: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
    memory_budget: Option<u64>,
) -> kvq::Result<ExitCode> {
    let format: ReportFormat = format.parse()?;
    let backends = backends.map(parse_list::<BackendId>).transpose()?;
    let ops = ops.map(parse_list::<Op>).transpose()?;

    let mut configs = default_test_matrix(scale_factor)?.configs().to_vec();
    for (i, cfg) in configs.iter_mut().enumerate() {
        if let Some(b) = &backends {
            cfg.backends = b.clone();
        }
        if let Some(o) = &ops {
            cfg.ops = o.clone();
        }
        if let Some(base) = seed {
            cfg.seed = base.wrapping_add(i as u64);
            cfg.probe = Some(AttentionProbeSpec::new(
                cfg.seed.wrapping_add(PROBE_SEED_STRIDE),
            ));
        }
    }
    let matrix = TestMatrix::new(configs)?;
    let options = RunOptions {
        workers: workers.unwrap_or_else(default_workers),
        memory_budget: memory_budget.unwrap_or_else(detect_memory_budget),
    };
    let records = run_bench_with(&matrix, &options)?;

    let to_stdout = out.as_os_str() == "-";
    if to_stdout {
        let mut stdout = std::io::stdout().lock();
        emit_report(&records, format, &mut stdout)?;
    } else {
        let mut file = fs::File::create(out).map_err(|e| io_with_path(out, e))?;
        emit_report(&records, format, &mut file)?;
    }

    let summary = render_summary(&records, &matrix, &options);
    if to_stdout {
        eprint!("{summary}");
    } else {
        print!("{summary}");
        println!("report written to {}", out.display());
    }
    for r in &records {
        if r.timer_warning {
            eprintln!(
                "warning: timer resolution exceeds 1% of the median for {} / {} / {}",
                r.config_name, r.backend, r.op
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Human-readable run summary: inputs line, one row per record, then one
/// reconstruction-quality line per config.
fn render_summary(records: &[BenchRecord], matrix: &TestMatrix, options: &RunOptions) -> String {
    let mut s = String::new();
    let seeds: Vec<String> = matrix
        .configs()
        .iter()
        .map(|c| c.seed.to_string())
        .collect();
    let _ = writeln!(
        s,
        "inputs: uniform [-1, 1) fills, config seeds {}",
        seeds.join(", ")
    );
    let _ = writeln!(
        s,
        "workers: {}, memory budget: {} bytes",
        options.workers, options.memory_budget
    );
    let _ = writeln!(
        s,
        "{:<22} {:>8} {:>6}  {:<14} {:<10} {:>12} {:>12} {:>9}",
        "config", "rows", "cols", "backend", "op", "median ms", "min ms", "speedup"
    );
    for r in records {
        let _ = writeln!(
            s,
            "{:<22} {:>8} {:>6}  {:<14} {:<10} {:>12.4} {:>12.4} {:>9.2}",
            r.config_name,
            r.rows,
            r.cols,
            r.backend.name(),
            r.op.name(),
            r.time_ms_median,
            r.time_ms_min,
            r.speedup_vs_scalar
        );
    }
    let mut seen: Vec<&String> = Vec::new();
    for r in records {
        if seen.contains(&&r.config_name) {
            continue;
        }
        seen.push(&r.config_name);
        if let Some(e) = &r.error {
            let attention = e
                .attention_mean_abs
                .map_or_else(|| "-".to_string(), |a| format!("{a:.3e}"));
            let _ = writeln!(
                s,
                "quality {:<15} l2 {:.3e}  max abs {:.3e}  attention {}  bound {:.3e}",
                r.config_name, e.l2, e.max_abs, attention, e.theoretical_max
            );
        }
    }
    s
}

fn cmd_validate(categories: Option<&str>, json: Option<&Path>) -> kvq::Result<ExitCode> {
    let categories = categories.map(parse_list::<Category>).transpose()?;
    let result = run_suite(categories.as_deref());
    let failed: HashMap<&str, &str> = result
        .failures
        .iter()
        .map(|(name, msg)| (name.as_str(), msg.as_str()))
        .collect();
    for name in battery_names(categories.as_deref()) {
        match failed.get(name) {
            Some(msg) => println!("FAIL {name}: {msg}"),
            None => println!("PASS {name}"),
        }
    }
    println!("validation: {} / {} tests passed", result.passed, result.total);
    if let Some(path) = json {
        write_file(path, suite_result_json(&result).as_bytes())?;
    }
    Ok(if result.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(5)
    })
}

fn cmd_estimate(
    layers: u64,
    heads: u64,
    head_dim: u64,
    seq_len: u64,
    precision: Precision,
) -> kvq::Result<ExitCode> {
    let chosen = estimate_kv_bytes(layers, heads, head_dim, seq_len, precision.bytes())?;
    let int8 = estimate_kv_bytes(layers, heads, head_dim, seq_len, 1)?;
    let fp32 = estimate_kv_bytes(layers, heads, head_dim, seq_len, 4)?;
    println!(
        "KV cache, {layers} layers x {heads} heads x {head_dim} head dims x {seq_len} tokens (keys + values):"
    );
    println!(
        "  {}: {chosen} bytes ({})",
        precision.name(),
        format_gb(chosen)
    );
    if !matches!(precision, Precision::Int8) {
        println!("  int8: {int8} bytes ({})", format_gb(int8));
    }
    println!("  fp32/int8 ratio: {:.1}", fp32 as f64 / int8 as f64);
    Ok(ExitCode::SUCCESS)
}

fn cmd_backends() -> kvq::Result<ExitCode> {
    for d in list_backends() {
        let widths = if d.supports_any_cols {
            "any column count"
        } else {
            "restricted column counts"
        };
        println!(
            "{:<15} lanes {}, {} — {}",
            d.id.name(),
            d.lane_width,
            widths,
            d.description
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// Parses a comma-separated list, trimming whitespace and dropping repeats
/// while preserving first-seen order.
fn parse_list<T: FromStr<Err = KvqError> + PartialEq>(csv: &str) -> kvq::Result<Vec<T>> {
    let mut items = Vec::new();
    for part in csv.split(',') {
        let item: T = part.trim().parse()?;
        if !items.contains(&item) {
            items.push(item);
        }
    }
    Ok(items)
}

fn read_file(path: &Path) -> kvq::Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_with_path(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> kvq::Result<()> {
    fs::write(path, bytes).map_err(|e| io_with_path(path, e))
}

fn io_with_path(path: &Path, err: std::io::Error) -> KvqError {
    KvqError::Io(std::io::Error::new(
        err.kind(),
        format!("{}: {err}", path.display()),
    ))
}

/// Decodes a container file, prefixing decode errors with the path.
fn parse_value(path: &Path, bytes: &[u8]) -> kvq::Result<KvqValue> {
    from_bytes(bytes).map_err(|e| match e {
        KvqError::Format(msg) => KvqError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
