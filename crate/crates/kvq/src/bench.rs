//! Benchmark harness: the eight-configuration test matrix, warmup/median
//! timing, backend speedups, and CSV/JSON report emission.
//!
//! Methodology, fixed on purpose:
//!
//! * every (config, backend, op) cell runs `warmup_runs` untimed executions
//!   followed by `timed_runs` timed ones, on buffers allocated before any
//!   clock starts — the harness times kernels, not setup;
//! * the median timed run is the headline number (robust to scheduler
//!   outliers); the min is recorded so either convention can be rebuilt;
//! * speedups are relative to the scalar reference measured in the same
//!   process for the same config and op — never across machines;
//! * configs run sequentially and nothing else runs concurrently with a
//!   timed region in this process.
//!
//! Every backend's output buffer is compared bit-for-bit against the scalar
//! reference after its last timed run, so a report can only be produced by a
//! run whose backends actually agreed.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{KvqError, Result};
use crate::metrics::{
    attention_error, l2_error, max_abs_error, theoretical_max_error, AttentionProbeSpec,
    ErrorReport,
};
use crate::quant::{dequantize_dispatch, quantize_dispatch, BackendId};
use crate::scale::{compute_scales_par, compute_scales_par_into, compute_scales_ref_into};
use crate::tensor::{make_fp32, Fill, Fp32Matrix, Int8Matrix, RngSpec};

/// Operations the harness can time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    /// Per-channel scale computation (column-parallel; the scalar-ref row
    /// uses the sequential reference).
    Scales,
    Quantize,
    Dequantize,
    /// Scales + quantize + dequantize, end to end.
    Roundtrip,
}

impl Op {
    pub const ALL: [Op; 4] = [Op::Scales, Op::Quantize, Op::Dequantize, Op::Roundtrip];

    pub fn name(self) -> &'static str {
        match self {
            Op::Scales => "scales",
            Op::Quantize => "quantize",
            Op::Dequantize => "dequantize",
            Op::Roundtrip => "roundtrip",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Op {
    type Err = KvqError;

    fn from_str(s: &str) -> Result<Self> {
        Op::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Op::ALL.iter().map(|o| o.name()).collect();
                KvqError::Config(format!(
                    "unknown op {s:?}; valid ops: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// One benchmark configuration: a matrix shape plus what to run on it.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub backends: Vec<BackendId>,
    pub ops: Vec<Op>,
    pub warmup_runs: usize,
    pub timed_runs: usize,
    pub seed: u64,
    /// When present, an error report is computed once per config from the
    /// round-trip output and attached to every record of the config.
    pub probe: Option<AttentionProbeSpec>,
}

impl BenchConfig {
    pub const DEFAULT_WARMUP_RUNS: usize = 2;
    pub const DEFAULT_TIMED_RUNS: usize = 5;

    /// A config with the standard protocol: all backends, quantize +
    /// dequantize, 2 warmups, 5 timed runs, no probe.
    pub fn new(name: &str, rows: usize, cols: usize, seed: u64) -> Self {
        BenchConfig {
            name: name.to_string(),
            rows,
            cols,
            backends: BackendId::ALL.to_vec(),
            ops: vec![Op::Quantize, Op::Dequantize],
            warmup_runs: Self::DEFAULT_WARMUP_RUNS,
            timed_runs: Self::DEFAULT_TIMED_RUNS,
            seed,
            probe: None,
        }
    }
}

/// Ordered, uniquely named sequence of configs.
#[derive(Debug, Clone)]
pub struct TestMatrix {
    configs: Vec<BenchConfig>,
}

impl TestMatrix {
    /// Validates that names are unique and safe for the CSV report (no
    /// commas, quotes, or line breaks).
    pub fn new(configs: Vec<BenchConfig>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for cfg in &configs {
            if cfg.name.contains([',', '"', '\n', '\r']) {
                return Err(KvqError::Config(format!(
                    "config name {:?} contains characters not representable in reports",
                    cfg.name
                )));
            }
            if !seen.insert(cfg.name.clone()) {
                return Err(KvqError::Config(format!(
                    "duplicate config name {:?}",
                    cfg.name
                )));
            }
        }
        Ok(TestMatrix { configs })
    }

    pub fn configs(&self) -> &[BenchConfig] {
        &self.configs
    }
}

/// The eight standard shapes, from cache-resident to production-scale.
/// Row counts scale with `scale_factor` in [`default_test_matrix`]; column
/// counts never scale, because error statistics depend on the head dimension.
pub const DEFAULT_SHAPES: [(&str, usize, usize); 8] = [
    ("Small", 2048, 128),
    ("Medium", 16384, 256),
    ("Large", 65536, 256),
    ("Very Large", 131072, 256),
    ("Realistic Small", 131072, 1024),
    ("Realistic Medium", 131072, 2048),
    ("Realistic Large", 131072, 4096),
    ("Realistic V. Large", 131072, 8192),
];

/// Scales a row count: nearest multiple of 64 (ties up), minimum 64.
fn scale_rows(rows: usize, scale_factor: f64) -> usize {
    let units = (rows as f64 * scale_factor / 64.0 + 0.5).floor() as usize;
    (units * 64).max(64)
}

/// The standard eight-config matrix with row counts scaled by
/// `scale_factor` (in `(0, 1]`). Each config carries a deterministic seed
/// and an attention probe, so runs produce full error reports.
pub fn default_test_matrix(scale_factor: f64) -> Result<TestMatrix> {
    if !(scale_factor > 0.0 && scale_factor <= 1.0) {
        return Err(KvqError::Config(format!(
            "scale factor must be in (0, 1], got {scale_factor}"
        )));
    }
    let configs = DEFAULT_SHAPES
        .iter()
        .enumerate()
        .map(|(i, &(name, rows, cols))| {
            let seed = 42 + i as u64;
            let mut cfg = BenchConfig::new(name, scale_rows(rows, scale_factor), cols, seed);
            cfg.probe = Some(AttentionProbeSpec::new(seed.wrapping_add(0x9E3779B97F4A7C15)));
            cfg
        })
        .collect();
    TestMatrix::new(configs)
}

/// One timed cell of the run.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub config_name: String,
    pub rows: usize,
    pub cols: usize,
    pub backend: BackendId,
    pub op: Op,
    /// Median of the timed runs, milliseconds, 9 significant digits.
    pub time_ms_median: f64,
    /// Fastest timed run, milliseconds, 9 significant digits.
    pub time_ms_min: f64,
    /// Scalar-ref median / this backend's median, same config and op.
    pub speedup_vs_scalar: f64,
    /// Reconstruction quality, present when the config carried a probe.
    pub error: Option<ErrorReport>,
    /// Set when the clock's resolution exceeds 1% of the median time, i.e.
    /// the measurement is quantization-limited.
    pub timer_warning: bool,
}

/// Runtime knobs that are about the host, not the workload.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Worker threads for parallel backends.
    pub workers: usize,
    /// Refuse configs whose working set exceeds this many bytes.
    pub memory_budget: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: crate::quant::default_workers(),
            memory_budget: detect_memory_budget(),
        }
    }
}

/// Bytes the harness materializes for one config: the fp32 input, reference
/// int8 + reconstruction copies, scratch output buffers, scale vectors, and
/// probe queries.
pub fn estimate_working_set(rows: usize, cols: usize) -> u64 {
    let n = rows as u64 * cols as u64;
    // k(4) + q_ref(1) + recon_ref(4) + q_buf(1) + f_buf(4) per element,
    // scale vectors and queries per column.
    14 * n + 256 * cols as u64
}

/// Reads the value of `key` (a kB-denominated field) from meminfo text.
fn meminfo_field(text: &str, key: &str) -> Option<u64> {
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix(key) {
            let rest = rest.trim_start_matches(':').trim();
            let kb: u64 = rest.split_whitespace().next()?.parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}

/// Available bytes according to meminfo-formatted text: `MemAvailable`,
/// falling back to `MemTotal`.
pub fn parse_meminfo(text: &str) -> Option<u64> {
    meminfo_field(text, "MemAvailable").or_else(|| meminfo_field(text, "MemTotal"))
}

/// Default memory budget: 75% of the host's available memory, or 8 GiB when
/// that cannot be determined.
pub fn detect_memory_budget() -> u64 {
    let text = std::fs::read_to_string("/proc/meminfo").unwrap_or_default();
    parse_meminfo(&text).map_or(8 << 30, |avail| avail / 4 * 3)
}

/// Rounds to 9 significant decimal digits — the precision reports are
/// serialized with. Times and speedups are stored pre-rounded so a record
/// and its serialized form are the same numbers.
pub fn round_sig9(x: f64) -> f64 {
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Smallest nonzero interval the monotonic clock reports, in milliseconds.
fn timer_resolution_ms() -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..8 {
        let t0 = Instant::now();
        let delta = loop {
            let d = t0.elapsed();
            if !d.is_zero() {
                break d.as_secs_f64() * 1e3;
            }
        };
        best = best.min(delta);
    }
    best
}

/// Runs the matrix with default options (all hardware threads, detected
/// memory budget).
pub fn run_bench(matrix: &TestMatrix) -> Result<Vec<BenchRecord>> {
    run_bench_with(matrix, &RunOptions::default())
}

/// Runs every config × backend × op cell of `matrix` and returns one record
/// per cell, in matrix order (configs outer, ops middle, backends inner).
pub fn run_bench_with(matrix: &TestMatrix, opts: &RunOptions) -> Result<Vec<BenchRecord>> {
    for cfg in matrix.configs() {
        if cfg.timed_runs == 0 {
            return Err(KvqError::Config(format!(
                "config {:?} requests zero timed runs",
                cfg.name
            )));
        }
        let need = estimate_working_set(cfg.rows, cfg.cols);
        if need > opts.memory_budget {
            return Err(KvqError::Resource(format!(
                "config {:?} ({}x{}) needs ~{} bytes of working set, budget is {} bytes; \
                 lower the scale factor or raise the budget",
                cfg.name, cfg.rows, cfg.cols, need, opts.memory_budget
            )));
        }
    }
    let timer_res_ms = timer_resolution_ms();
    let mut records = Vec::new();
    for cfg in matrix.configs() {
        run_config(cfg, opts, timer_res_ms, &mut records)?;
    }
    Ok(records)
}

/// Reference outputs every backend must reproduce, plus scratch buffers the
/// timed executions write into.
struct ConfigWorkspace {
    k: Fp32Matrix,
    scales: Vec<f32>,
    q_ref: Int8Matrix,
    recon_ref: Vec<f32>,
    sc_buf: Vec<f32>,
    q_buf: Vec<i8>,
    f_buf: Vec<f32>,
}

fn run_config(
    cfg: &BenchConfig,
    opts: &RunOptions,
    timer_res_ms: f64,
    records: &mut Vec<BenchRecord>,
) -> Result<()> {
    let k = make_fp32(cfg.rows, cfg.cols, Fill::Rng(RngSpec::new(cfg.seed)))?;
    let n = k.len();
    let (rows, cols) = (cfg.rows, cfg.cols);

    let scale_vec = compute_scales_par(&k, opts.workers);
    let mut q_data = vec![0i8; n];
    quantize_dispatch(rows, cols, k.data(), scale_vec.as_slice(), BackendId::ScalarRef, 1, &mut q_data);
    let q_ref = Int8Matrix::from_vec(rows, cols, q_data)?;
    let mut recon_ref = vec![0.0f32; n];
    dequantize_dispatch(rows, cols, q_ref.data(), scale_vec.as_slice(), BackendId::ScalarRef, 1, &mut recon_ref);

    let error = match &cfg.probe {
        Some(probe) => {
            let recon = Fp32Matrix::from_vec(rows, cols, recon_ref.clone())?;
            Some(ErrorReport {
                l2: l2_error(&k, &recon)?,
                max_abs: max_abs_error(&k, &recon)?,
                attention_mean_abs: Some(attention_error(&k, &recon, probe)?),
                theoretical_max: theoretical_max_error(&scale_vec),
            })
        }
        None => None,
    };

    let mut ws = ConfigWorkspace {
        k,
        scales: scale_vec.as_slice().to_vec(),
        q_ref,
        recon_ref,
        sc_buf: vec![0.0f32; cols],
        q_buf: vec![0i8; n],
        f_buf: vec![0.0f32; n],
    };

    for &op in &cfg.ops {
        let (base_median, base_min) = time_cell(cfg, opts, &mut ws, BackendId::ScalarRef, op);
        for &backend in &cfg.backends {
            let (median, min) = if backend == BackendId::ScalarRef {
                (base_median, base_min)
            } else {
                time_cell(cfg, opts, &mut ws, backend, op)
            };
            records.push(BenchRecord {
                config_name: cfg.name.clone(),
                rows,
                cols,
                backend,
                op,
                time_ms_median: median,
                time_ms_min: min,
                speedup_vs_scalar: base_median / median,
                error: error.clone(),
                timer_warning: timer_res_ms > median * 0.01,
            });
        }
    }
    Ok(())
}

/// Times one (backend, op) cell: warmups, timed runs, then a bit-exact
/// comparison of the scratch buffers against the scalar reference outputs.
/// Returns (median, min) in milliseconds, rounded to report precision.
fn time_cell(
    cfg: &BenchConfig,
    opts: &RunOptions,
    ws: &mut ConfigWorkspace,
    backend: BackendId,
    op: Op,
) -> (f64, f64) {
    let workers = opts.workers;
    let (rows, cols) = (cfg.rows, cfg.cols);
    let mut samples = Vec::with_capacity(cfg.timed_runs);
    for run in 0..cfg.warmup_runs + cfg.timed_runs {
        let start = Instant::now();
        match op {
            Op::Scales => {
                if backend == BackendId::ScalarRef {
                    compute_scales_ref_into(&ws.k, &mut ws.sc_buf);
                } else {
                    compute_scales_par_into(&ws.k, workers, &mut ws.sc_buf);
                }
            }
            Op::Quantize => {
                quantize_dispatch(rows, cols, ws.k.data(), &ws.scales, backend, workers, &mut ws.q_buf);
            }
            Op::Dequantize => {
                dequantize_dispatch(rows, cols, ws.q_ref.data(), &ws.scales, backend, workers, &mut ws.f_buf);
            }
            Op::Roundtrip => {
                if backend == BackendId::ScalarRef {
                    compute_scales_ref_into(&ws.k, &mut ws.sc_buf);
                } else {
                    compute_scales_par_into(&ws.k, workers, &mut ws.sc_buf);
                }
                quantize_dispatch(rows, cols, ws.k.data(), &ws.sc_buf, backend, workers, &mut ws.q_buf);
                dequantize_dispatch(rows, cols, &ws.q_buf, &ws.sc_buf, backend, workers, &mut ws.f_buf);
            }
        }
        if run >= cfg.warmup_runs {
            // Clamp to the clock's resolution so a zero reading (possible on
            // coarse clocks) cannot produce a zero time or infinite speedup.
            samples.push((start.elapsed().as_secs_f64() * 1e3).max(1e-6));
        }
    }
    verify_cell(cfg, ws, backend, op);
    samples.sort_by(f64::total_cmp);
    (
        round_sig9(samples[samples.len() / 2]),
        round_sig9(samples[0]),
    )
}

/// Panics (with the first differing coordinate) if the buffers a cell's
/// timed executions produced differ from the scalar reference outputs.
fn verify_cell(cfg: &BenchConfig, ws: &ConfigWorkspace, backend: BackendId, op: Op) {
    let cols = cfg.cols;
    let scales_ok = |got: &[f32]| {
        if let Some(d) = (0..got.len()).find(|&d| got[d].to_bits() != ws.scales[d].to_bits()) {
            panic!(
                "backend disagreement in config {:?}: {backend}/{op} scale[{d}] = {:?}, scalar-ref computed {:?}",
                cfg.name, got[d], ws.scales[d]
            );
        }
    };
    let codes_ok = |got: &[i8]| {
        let want = ws.q_ref.data();
        if let Some(i) = (0..got.len()).find(|&i| got[i] != want[i]) {
            panic!(
                "backend disagreement in config {:?}: {backend}/{op} code[{},{}] = {}, scalar-ref computed {}",
                cfg.name, i / cols, i % cols, got[i], want[i]
            );
        }
    };
    let recon_ok = |got: &[f32]| {
        let want = &ws.recon_ref;
        if let Some(i) = (0..got.len()).find(|&i| got[i].to_bits() != want[i].to_bits()) {
            panic!(
                "backend disagreement in config {:?}: {backend}/{op} value[{},{}] = {:?}, scalar-ref computed {:?}",
                cfg.name, i / cols, i % cols, got[i], want[i]
            );
        }
    };
    match op {
        Op::Scales => scales_ok(&ws.sc_buf),
        Op::Quantize => codes_ok(&ws.q_buf),
        Op::Dequantize => recon_ok(&ws.f_buf),
        Op::Roundtrip => {
            scales_ok(&ws.sc_buf);
            codes_ok(&ws.q_buf);
            recon_ok(&ws.f_buf);
        }
    }
}

// --------------------------------------------------------------------------
// Report emission and parsing
// --------------------------------------------------------------------------

/// Report serialization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = KvqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(KvqError::Config(format!(
                "unknown report format {other:?}; valid formats: csv, json"
            ))),
        }
    }
}

/// The exact CSV column set, in order.
pub const CSV_HEADER: &str = "config_name,rows,cols,backend,op,time_ms_median,time_ms_min,\
                              speedup_vs_scalar,l2_error,max_abs_error,attention_error,theoretical_max";

fn error_fields(record: &BenchRecord) -> [Option<f64>; 4] {
    match &record.error {
        Some(e) => [
            Some(e.l2),
            Some(e.max_abs),
            e.attention_mean_abs,
            Some(e.theoretical_max),
        ],
        None => [None; 4],
    }
}

/// Writes records as CSV or JSON. Floats carry 9 significant digits; error
/// columns are empty (CSV) or null (JSON) for records without a report.
pub fn emit_report<W: Write>(
    records: &[BenchRecord],
    format: ReportFormat,
    dest: &mut W,
) -> Result<()> {
    if records.is_empty() {
        return Err(KvqError::Config(
            "refusing to emit a report with zero records".to_string(),
        ));
    }
    match format {
        ReportFormat::Csv => emit_csv_to(records, dest),
        ReportFormat::Json => emit_json_to(records, dest),
    }
}

fn emit_csv_to<W: Write>(records: &[BenchRecord], dest: &mut W) -> Result<()> {
    writeln!(dest, "{CSV_HEADER}")?;
    for r in records {
        let errs = error_fields(r);
        let err_cols: Vec<String> = errs
            .iter()
            .map(|e| e.map(fmt_sig9).unwrap_or_default())
            .collect();
        writeln!(
            dest,
            "{},{},{},{},{},{},{},{},{}",
            r.config_name,
            r.rows,
            r.cols,
            r.backend,
            r.op,
            fmt_sig9(r.time_ms_median),
            fmt_sig9(r.time_ms_min),
            fmt_sig9(r.speedup_vs_scalar),
            err_cols.join(",")
        )?;
    }
    Ok(())
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

fn emit_json_to<W: Write>(records: &[BenchRecord], dest: &mut W) -> Result<()> {
    writeln!(dest, "[")?;
    for (i, r) in records.iter().enumerate() {
        let errs = error_fields(r);
        let err_json: Vec<String> = errs
            .iter()
            .map(|e| e.map_or_else(|| "null".to_string(), fmt_sig9))
            .collect();
        let comma = if i + 1 < records.len() { "," } else { "" };
        writeln!(
            dest,
            "  {{\"config_name\":{},\"rows\":{},\"cols\":{},\"backend\":{},\"op\":{},\
             \"time_ms_median\":{},\"time_ms_min\":{},\"speedup_vs_scalar\":{},\
             \"l2_error\":{},\"max_abs_error\":{},\"attention_error\":{},\"theoretical_max\":{}}}{comma}",
            json_string(&r.config_name),
            r.rows,
            r.cols,
            json_string(r.backend.name()),
            json_string(r.op.name()),
            fmt_sig9(r.time_ms_median),
            fmt_sig9(r.time_ms_min),
            fmt_sig9(r.speedup_vs_scalar),
            err_json[0],
            err_json[1],
            err_json[2],
            err_json[3],
        )?;
    }
    writeln!(dest, "]")?;
    Ok(())
}

/// [`emit_report`] into a string, CSV format.
pub fn emit_csv(records: &[BenchRecord]) -> Result<String> {
    let mut buf = Vec::new();
    emit_report(records, ReportFormat::Csv, &mut buf)?;
    Ok(String::from_utf8(buf).expect("reports are ASCII"))
}

/// [`emit_report`] into a string, JSON format.
pub fn emit_json(records: &[BenchRecord]) -> Result<String> {
    let mut buf = Vec::new();
    emit_report(records, ReportFormat::Json, &mut buf)?;
    Ok(String::from_utf8(buf).expect("reports are ASCII"))
}

/// One parsed CSV data row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub config_name: String,
    pub rows: usize,
    pub cols: usize,
    pub backend: String,
    pub op: String,
    pub time_ms_median: f64,
    pub time_ms_min: f64,
    pub speedup_vs_scalar: f64,
    pub l2_error: Option<f64>,
    pub max_abs_error: Option<f64>,
    pub attention_error: Option<f64>,
    pub theoretical_max: Option<f64>,
}

/// Parses a CSV report produced by [`emit_report`], validating the header
/// and field count.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| KvqError::Format("empty CSV report".to_string()))?;
    if header != CSV_HEADER {
        return Err(KvqError::Format(format!(
            "unexpected CSV header {header:?}"
        )));
    }
    let req_float = |field: &str, name: &str| -> Result<f64> {
        field
            .parse()
            .map_err(|_| KvqError::Format(format!("bad {name} value {field:?}")))
    };
    let opt_float = |field: &str, name: &str| -> Result<Option<f64>> {
        if field.is_empty() {
            Ok(None)
        } else {
            req_float(field, name).map(Some)
        }
    };
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(KvqError::Format(format!(
                "line {}: expected 12 fields, found {}",
                lineno + 2,
                f.len()
            )));
        }
        out.push(CsvRow {
            config_name: f[0].to_string(),
            rows: f[1]
                .parse()
                .map_err(|_| KvqError::Format(format!("bad rows value {:?}", f[1])))?,
            cols: f[2]
                .parse()
                .map_err(|_| KvqError::Format(format!("bad cols value {:?}", f[2])))?,
            backend: f[3].to_string(),
            op: f[4].to_string(),
            time_ms_median: req_float(f[5], "time_ms_median")?,
            time_ms_min: req_float(f[6], "time_ms_min")?,
            speedup_vs_scalar: req_float(f[7], "speedup_vs_scalar")?,
            l2_error: opt_float(f[8], "l2_error")?,
            max_abs_error: opt_float(f[9], "max_abs_error")?,
            attention_error: opt_float(f[10], "attention_error")?,
            theoretical_max: opt_float(f[11], "theoretical_max")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_scaling_tables() {
        let base = [2048usize, 16384, 65536, 131072];
        let expect_full = [2048usize, 16384, 65536, 131072];
        let expect_quarter = [512usize, 4096, 16384, 32768];
        let expect_twentieth = [128usize, 832, 3264, 6528];
        let expect_hundredth = [64usize, 192, 640, 1280];
        for (i, &rows) in base.iter().enumerate() {
            assert_eq!(scale_rows(rows, 1.0), expect_full[i]);
            assert_eq!(scale_rows(rows, 0.25), expect_quarter[i]);
            assert_eq!(scale_rows(rows, 0.05), expect_twentieth[i]);
            assert_eq!(scale_rows(rows, 0.01), expect_hundredth[i]);
        }
        // Floor of 64 even when the scaled value rounds to zero.
        assert_eq!(scale_rows(64, 0.01), 64);
    }

    #[test]
    fn default_matrix_shapes() {
        let m = default_test_matrix(1.0).unwrap();
        assert_eq!(m.configs().len(), 8);
        for (cfg, &(name, rows, cols)) in m.configs().iter().zip(&DEFAULT_SHAPES) {
            assert_eq!(cfg.name, name);
            assert_eq!(cfg.rows, rows);
            assert_eq!(cfg.cols, cols);
            assert_eq!(cfg.warmup_runs, 2);
            assert_eq!(cfg.timed_runs, 5);
            assert!(cfg.probe.is_some());
        }
        assert_eq!(m.configs()[0].rows * m.configs()[0].cols, 262_144);
        let m = default_test_matrix(0.05).unwrap();
        let very_large = &m.configs()[3];
        assert_eq!(very_large.name, "Very Large");
        assert_eq!(very_large.rows, 6528);
    }

    #[test]
    fn default_matrix_rejects_bad_factor() {
        for sf in [0.0, -0.5, 1.00001, f64::NAN] {
            assert!(matches!(
                default_test_matrix(sf),
                Err(KvqError::Config(_))
            ));
        }
    }

    #[test]
    fn matrix_rejects_duplicate_or_unsafe_names() {
        let a = BenchConfig::new("same", 64, 4, 1);
        let b = BenchConfig::new("same", 64, 8, 2);
        assert!(matches!(
            TestMatrix::new(vec![a.clone(), b]),
            Err(KvqError::Config(_))
        ));
        let bad = BenchConfig::new("a,b", 64, 4, 1);
        assert!(matches!(TestMatrix::new(vec![bad]), Err(KvqError::Config(_))));
        assert!(TestMatrix::new(vec![a]).is_ok());
    }

    #[test]
    fn op_names_parse() {
        for op in Op::ALL {
            assert_eq!(op.name().parse::<Op>().unwrap(), op);
        }
        assert!(matches!("warp".parse::<Op>(), Err(KvqError::Config(_))));
    }

    #[test]
    fn sig9_rounding() {
        assert_eq!(round_sig9(1.0), 1.0);
        assert_eq!(round_sig9(0.0), 0.0);
        let x = std::f64::consts::PI;
        let r = round_sig9(x);
        assert_ne!(r, x);
        assert_eq!(fmt_sig9(r), fmt_sig9(x));
        assert_eq!(round_sig9(r), r);
    }

    #[test]
    fn meminfo_parsing() {
        let text = "MemTotal:       16317304 kB\nMemFree:         4628168 kB\nMemAvailable:   12616128 kB\n";
        assert_eq!(parse_meminfo(text), Some(12_616_128 * 1024));
        let no_avail = "MemTotal:       16317304 kB\nMemFree:         4628168 kB\n";
        assert_eq!(parse_meminfo(no_avail), Some(16_317_304 * 1024));
        assert_eq!(parse_meminfo("nonsense\n"), None);
        assert_eq!(parse_meminfo(""), None);
    }

    #[test]
    fn working_set_estimate_scales() {
        assert_eq!(estimate_working_set(2, 3), 14 * 6 + 256 * 3);
        assert!(estimate_working_set(131072, 8192) > 15_000_000_000);
    }

    fn tiny_matrix() -> TestMatrix {
        let mut cfg = BenchConfig::new("tiny", 64, 32, 9);
        cfg.ops = Op::ALL.to_vec();
        cfg.probe = Some(AttentionProbeSpec::new(77));
        TestMatrix::new(vec![cfg]).unwrap()
    }

    fn tiny_options() -> RunOptions {
        RunOptions {
            workers: 2,
            memory_budget: 1 << 30,
        }
    }

    #[test]
    fn run_produces_full_cartesian_product() {
        let records = run_bench_with(&tiny_matrix(), &tiny_options()).unwrap();
        assert_eq!(records.len(), 5 * 4);
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            assert!(seen.insert((r.backend, r.op)), "duplicate cell {:?}", (r.backend, r.op));
            assert!(r.time_ms_median > 0.0);
            assert!(r.time_ms_min > 0.0);
            assert!(r.time_ms_min <= r.time_ms_median);
            assert!(r.speedup_vs_scalar > 0.0);
            let e = r.error.as_ref().expect("probe attached");
            assert!(e.l2 > 0.0);
            assert!(e.max_abs > 0.0);
            assert!(e.attention_mean_abs.unwrap() > 0.0);
            if r.backend == BackendId::ScalarRef {
                assert_eq!(r.speedup_vs_scalar, 1.0);
            }
        }
        // One report per config: identical across the config's records.
        let first = records[0].error.as_ref().unwrap();
        for r in &records[1..] {
            assert_eq!(r.error.as_ref().unwrap(), first);
        }
    }

    #[test]
    fn run_without_probe_has_no_error_report() {
        let mut cfg = BenchConfig::new("plain", 64, 16, 3);
        cfg.backends = vec![BackendId::Vectorized];
        cfg.ops = vec![Op::Quantize];
        let m = TestMatrix::new(vec![cfg]).unwrap();
        let records = run_bench_with(&m, &tiny_options()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].backend, BackendId::Vectorized);
        assert!(records[0].error.is_none());
        // Speedup still defined: the scalar baseline is timed internally.
        assert!(records[0].speedup_vs_scalar > 0.0);
    }

    #[test]
    fn run_rejects_budget_overrun() {
        let cfg = BenchConfig::new("big", 4096, 4096, 1);
        let m = TestMatrix::new(vec![cfg]).unwrap();
        let opts = RunOptions {
            workers: 1,
            memory_budget: 1024,
        };
        let err = run_bench_with(&m, &opts).unwrap_err();
        match err {
            KvqError::Resource(msg) => assert!(msg.contains("big"), "{msg}"),
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn run_rejects_zero_timed_runs() {
        let mut cfg = BenchConfig::new("zero", 64, 16, 1);
        cfg.timed_runs = 0;
        let m = TestMatrix::new(vec![cfg]).unwrap();
        assert!(matches!(
            run_bench_with(&m, &tiny_options()),
            Err(KvqError::Config(_))
        ));
    }

    fn sample_records() -> Vec<BenchRecord> {
        let report = ErrorReport {
            l2: round_sig9(1.234567891e-2),
            max_abs: round_sig9(3.2e-3),
            attention_mean_abs: Some(round_sig9(9.5e-2)),
            theoretical_max: round_sig9(3.937e-3),
        };
        let median_scalar = round_sig9(12.3456789);
        let median_vec = round_sig9(2.98765432);
        vec![
            BenchRecord {
                config_name: "Realistic V. Large".to_string(),
                rows: 6528,
                cols: 8192,
                backend: BackendId::ScalarRef,
                op: Op::Quantize,
                time_ms_median: median_scalar,
                time_ms_min: round_sig9(12.0),
                speedup_vs_scalar: 1.0,
                error: Some(report),
                timer_warning: false,
            },
            BenchRecord {
                config_name: "Realistic V. Large".to_string(),
                rows: 6528,
                cols: 8192,
                backend: BackendId::Vectorized,
                op: Op::Quantize,
                time_ms_median: median_vec,
                time_ms_min: round_sig9(2.9),
                speedup_vs_scalar: median_scalar / median_vec,
                error: None,
                timer_warning: false,
            },
        ]
    }

    #[test]
    fn csv_header_and_shape() {
        let text = emit_csv(&sample_records()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[0],
            "config_name,rows,cols,backend,op,time_ms_median,time_ms_min,speedup_vs_scalar,\
             l2_error,max_abs_error,attention_error,theoretical_max"
        );
        assert!(lines[1].starts_with("Realistic V. Large,6528,8192,scalar-ref,quantize,"));
        // Absent report → four trailing empty fields.
        assert!(lines[2].ends_with(",,,,"), "{:?}", lines[2]);
    }

    #[test]
    fn csv_round_trip_preserves_fields() {
        let records = sample_records();
        let rows = parse_csv(&emit_csv(&records).unwrap()).unwrap();
        assert_eq!(rows.len(), records.len());
        for (row, rec) in rows.iter().zip(&records) {
            assert_eq!(row.config_name, rec.config_name);
            assert_eq!(row.rows, rec.rows);
            assert_eq!(row.cols, rec.cols);
            assert_eq!(row.backend, rec.backend.name());
            assert_eq!(row.op, rec.op.name());
            assert_eq!(row.time_ms_median, rec.time_ms_median);
            assert_eq!(row.time_ms_min, rec.time_ms_min);
            assert_eq!(row.speedup_vs_scalar, round_sig9(rec.speedup_vs_scalar));
            match &rec.error {
                Some(e) => {
                    assert_eq!(row.l2_error, Some(round_sig9(e.l2)));
                    assert_eq!(row.max_abs_error, Some(round_sig9(e.max_abs)));
                    assert_eq!(row.attention_error, e.attention_mean_abs.map(round_sig9));
                    assert_eq!(row.theoretical_max, Some(round_sig9(e.theoretical_max)));
                }
                None => {
                    assert_eq!(row.l2_error, None);
                    assert_eq!(row.max_abs_error, None);
                    assert_eq!(row.attention_error, None);
                    assert_eq!(row.theoretical_max, None);
                }
            }
        }
    }

    #[test]
    fn emitted_speedup_equals_quotient_of_emitted_medians() {
        let records = sample_records();
        let rows = parse_csv(&emit_csv(&records).unwrap()).unwrap();
        let scalar_median = rows
            .iter()
            .find(|r| r.backend == "scalar-ref")
            .unwrap()
            .time_ms_median;
        for row in &rows {
            let recomputed = round_sig9(scalar_median / row.time_ms_median);
            assert_eq!(
                row.speedup_vs_scalar.to_bits(),
                recomputed.to_bits(),
                "backend {}",
                row.backend
            );
        }
    }

    #[test]
    fn json_report_is_valid_and_mirrors_fields() {
        let text = emit_json(&sample_records()).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let arr = value.as_array().unwrap();
        assert_eq!(arr.len(), 2);
        let first = &arr[0];
        assert_eq!(first["config_name"], "Realistic V. Large");
        assert_eq!(first["rows"], 6528);
        assert_eq!(first["backend"], "scalar-ref");
        assert_eq!(first["op"], "quantize");
        assert!(first["time_ms_median"].as_f64().unwrap() > 0.0);
        assert!((first["attention_error"].as_f64().unwrap() - 9.5e-2).abs() < 1e-9);
        let second = &arr[1];
        assert!(second["l2_error"].is_null());
        assert!(second["attention_error"].is_null());
    }

    #[test]
    fn empty_report_refused() {
        assert!(matches!(emit_csv(&[]), Err(KvqError::Config(_))));
    }

    #[test]
    fn csv_parse_rejects_corruption() {
        assert!(matches!(parse_csv(""), Err(KvqError::Format(_))));
        assert!(matches!(
            parse_csv("wrong,header\n"),
            Err(KvqError::Format(_))
        ));
        let good = emit_csv(&sample_records()).unwrap();
        let truncated: String = good
            .lines()
            .enumerate()
            .map(|(i, l)| if i == 1 { l.rsplit_once(',').unwrap().0.to_string() } else { l.to_string() })
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(parse_csv(&truncated), Err(KvqError::Format(_))));
        let bad_float = good.replace("1.00000000e0", "fast");
        assert!(matches!(parse_csv(&bad_float), Err(KvqError::Format(_))));
    }
}
