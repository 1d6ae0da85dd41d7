//! C ABI over the `lfps` engine.
//!
//! Every function returns an [`LfpsStatus`]. On failure the message is kept
//! in thread-local storage and can be read with [`lfps_last_error_message`].
//! Handles are opaque and must be released with the matching `_free` call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use lfps::config::{BypassMode, NegativeScores, SelectionMode};
use lfps::store::KvStore;
use lfps::trace::TraceError;
use lfps::{HeadSession, LfpsError, TraceFile};

/// Maximum number of expansion offsets carried in [`LfpsConfig`].
pub const LFPS_MAX_OFFSETS: usize = 8;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfpsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    DimensionMismatch = 4,
    InsufficientContext = 5,
    NonFinite = 6,
    TraceFormat = 7,
    Io = 8,
    Panic = 9,
}

/// Pipeline parameters. Fill with [`lfps_config_default`] and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LfpsConfig {
    pub head_dim: usize,
    pub prefill_window: usize,
    pub sink_count: usize,
    pub local_window: usize,
    pub decay: f64,
    pub epsilon: f64,
    pub threshold_scale: f64,
    pub expansion_offsets: [i64; LFPS_MAX_OFFSETS],
    pub expansion_offset_count: usize,
    /// Nonzero clamps table entries at zero.
    pub clamp_negative: u8,
    /// Nonzero probes every non-sink position.
    pub exhaustive: u8,
    /// Nonzero returns the prefill mean value for bypassed heads.
    pub bypass_mean_only: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LfpsStepInfo {
    pub step: u64,
    /// Context length before this step's key was appended.
    pub context_len: usize,
    pub selected: usize,
    pub probe_len: usize,
    pub dot_products: usize,
    pub bypassed: u8,
    pub rho: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct LfpsTraceInfo {
    pub layers: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub n_prefill: u64,
    pub steps: u64,
    pub prefill_window: u64,
    pub sink_count: u64,
}

/// Opaque parsed trace.
pub struct LfpsTrace(TraceFile);

/// Opaque single-head decoding session.
pub struct LfpsSession(HeadSession);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(LfpsStatus, String);

impl From<LfpsError> for Failure {
    fn from(e: LfpsError) -> Self {
        let status = match &e {
            LfpsError::InvalidConfig(_) => LfpsStatus::InvalidConfig,
            LfpsError::DimensionMismatch { .. } => LfpsStatus::DimensionMismatch,
            LfpsError::InsufficientContext { .. } => LfpsStatus::InsufficientContext,
            LfpsError::NonFinite(_) | LfpsError::ZeroNormQuery | LfpsError::WeightNormalization { .. } => {
                LfpsStatus::NonFinite
            }
            LfpsError::Trace(TraceError::Io(_)) | LfpsError::Io(_) => LfpsStatus::Io,
            LfpsError::Trace(_) => LfpsStatus::TraceFormat,
            _ => LfpsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        LfpsError::from(e).into()
    }
}

fn fail(status: LfpsStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LfpsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LfpsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LfpsStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(LfpsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn non_null_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(LfpsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn doubles<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(LfpsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn to_core(c: &LfpsConfig) -> Result<lfps::LfpsConfig, Failure> {
    if c.expansion_offset_count > LFPS_MAX_OFFSETS {
        return Err(fail(
            LfpsStatus::InvalidConfig,
            format!(
                "expansion_offset_count {} exceeds {LFPS_MAX_OFFSETS}",
                c.expansion_offset_count
            ),
        ));
    }
    let cfg = lfps::LfpsConfig {
        head_dim: c.head_dim,
        prefill_window: c.prefill_window,
        sink_count: c.sink_count,
        local_window: c.local_window,
        decay: c.decay,
        epsilon: c.epsilon,
        threshold_scale: c.threshold_scale,
        expansion_offsets: c.expansion_offsets[..c.expansion_offset_count].to_vec(),
        negative_scores: if c.clamp_negative != 0 {
            NegativeScores::Clamp
        } else {
            NegativeScores::Keep
        },
        selection: if c.exhaustive != 0 {
            SelectionMode::Exhaustive
        } else {
            SelectionMode::Adaptive
        },
        bypass_mode: if c.bypass_mean_only != 0 {
            BypassMode::MeanOnly
        } else {
            BypassMode::SinkAverage
        },
        ..lfps::LfpsConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lfps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL.
///
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn lfps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Writes the default configuration for head dimension `head_dim`.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one `LfpsConfig`.
#[no_mangle]
pub unsafe extern "C" fn lfps_config_default(head_dim: usize, out: *mut LfpsConfig) -> LfpsStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let d = lfps::LfpsConfig::with_head_dim(head_dim);
        let mut offsets = [0i64; LFPS_MAX_OFFSETS];
        offsets[..d.expansion_offsets.len()].copy_from_slice(&d.expansion_offsets);
        *out = LfpsConfig {
            head_dim: d.head_dim,
            prefill_window: d.prefill_window,
            sink_count: d.sink_count,
            local_window: d.local_window,
            decay: d.decay,
            epsilon: d.epsilon,
            threshold_scale: d.threshold_scale,
            expansion_offsets: offsets,
            expansion_offset_count: d.expansion_offsets.len(),
            clamp_negative: 0,
            exhaustive: 0,
            bypass_mean_only: 0,
        };
        Ok(())
    })
}

/// Reads and verifies a trace file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfps_trace_read(path: *const c_char, out: *mut *mut LfpsTrace) -> LfpsStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(non_null(path, "path")?)
            .to_str()
            .map_err(|_| fail(LfpsStatus::InvalidArgument, "path is not UTF-8"))?;
        let trace = lfps::trace::read_trace_file(Path::new(path))?;
        *out = Box::into_raw(Box::new(LfpsTrace(trace)));
        Ok(())
    })
}

/// Parses a trace from an in-memory buffer.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfps_trace_from_bytes(bytes: *const u8, len: usize, out: *mut *mut LfpsTrace) -> LfpsStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        *out = ptr::null_mut();
        let data = if len == 0 {
            &[][..]
        } else {
            slice::from_raw_parts(non_null(bytes, "bytes")?, len)
        };
        *out = Box::into_raw(Box::new(LfpsTrace(TraceFile::from_bytes(data)?)));
        Ok(())
    })
}

/// # Safety
/// `trace` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfps_trace_info(trace: *const LfpsTrace, out: *mut LfpsTraceInfo) -> LfpsStatus {
    guard(|| {
        let h = &non_null(trace, "trace")?.0.header;
        *non_null_mut(out, "out")? = LfpsTraceInfo {
            layers: h.layers,
            heads: h.heads,
            head_dim: h.head_dim,
            n_prefill: h.n_prefill,
            steps: h.steps,
            prefill_window: h.prefill_window,
            sink_count: h.sink_count,
        };
        Ok(())
    })
}

/// Releases a trace. NULL is ignored.
///
/// # Safety
/// `trace` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lfps_trace_free(trace: *mut LfpsTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Copies the step inputs of `head` at `step` into caller buffers of length `head_dim`.
///
/// # Safety
/// `trace` must come from this library; each output must hold `head_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn lfps_trace_step_input(
    trace: *const LfpsTrace,
    step: usize,
    head: usize,
    query: *mut f64,
    key: *mut f64,
    value: *mut f64,
) -> LfpsStatus {
    guard(|| {
        let t = &non_null(trace, "trace")?.0;
        let rec = t.steps.get(step).and_then(|s| s.get(head)).ok_or_else(|| {
            fail(
                LfpsStatus::InvalidArgument,
                format!("no input for step {step}, head {head}"),
            )
        })?;
        for (src, dst, what) in [
            (&rec.query, query, "query"),
            (&rec.key, key, "key"),
            (&rec.value, value, "value"),
        ] {
            let dst = non_null_mut(dst, what)?;
            let dst = slice::from_raw_parts_mut(dst, src.len());
            for (d, s) in dst.iter_mut().zip(src) {
                *d = f64::from(*s);
            }
        }
        Ok(())
    })
}

/// Starts a session for flat head index `head` of a trace.
///
/// # Safety
/// `trace` and `config` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfps_session_from_trace(
    trace: *const LfpsTrace,
    head: usize,
    config: *const LfpsConfig,
    out: *mut *mut LfpsSession,
) -> LfpsStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        *out = ptr::null_mut();
        let t = &non_null(trace, "trace")?.0;
        let cfg = to_core(non_null(config, "config")?)?;
        *out = Box::into_raw(Box::new(LfpsSession(t.head_session(head, &cfg)?)));
        Ok(())
    })
}

/// Starts a session from raw prefill state.
///
/// `keys` and `values` are row-major `n x head_dim`. `weights` holds
/// `prefill_window` rows of `n - sink_count` attention weights, oldest first.
///
/// # Safety
/// Every pointer must reference the number of doubles described above.
#[no_mangle]
pub unsafe extern "C" fn lfps_session_new(
    config: *const LfpsConfig,
    keys: *const f64,
    values: *const f64,
    n: usize,
    weights: *const f64,
    last_query: *const f64,
    out: *mut *mut LfpsSession,
) -> LfpsStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        *out = ptr::null_mut();
        let cfg = to_core(non_null(config, "config")?)?;
        let d = cfg.head_dim;
        if n <= cfg.sink_count {
            return Err(fail(
                LfpsStatus::InsufficientContext,
                format!("n = {n} does not exceed sink_count"),
            ));
        }
        let rows = n
            .checked_mul(d)
            .ok_or_else(|| fail(LfpsStatus::InvalidArgument, "n * head_dim overflows"))?;
        let wlen = n - cfg.sink_count;
        let wtotal = wlen
            .checked_mul(cfg.prefill_window)
            .ok_or_else(|| fail(LfpsStatus::InvalidArgument, "weight size overflows"))?;
        let k = doubles(keys, rows, "keys")?;
        let v = doubles(values, rows, "values")?;
        let w = doubles(weights, wtotal, "weights")?;
        let q = doubles(last_query, d, "last_query")?;
        let mut store = KvStore::with_capacity(d, n);
        for i in 0..n {
            store.append(&k[i * d..(i + 1) * d], &v[i * d..(i + 1) * d])?;
        }
        let wrows: Vec<&[f64]> = w.chunks(wlen).collect();
        *out = Box::into_raw(Box::new(LfpsSession(HeadSession::prefill(store, &wrows, q, cfg)?)));
        Ok(())
    })
}

/// Decodes one step. On failure the session is unchanged.
///
/// `output` receives `head_dim` doubles; `info` may be NULL.
///
/// # Safety
/// `session` must be valid; vectors must hold `head_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn lfps_session_step(
    session: *mut LfpsSession,
    query: *const f64,
    key: *const f64,
    value: *const f64,
    budget: f64,
    output: *mut f64,
    info: *mut LfpsStepInfo,
) -> LfpsStatus {
    guard(|| {
        let s = &mut non_null_mut(session, "session")?.0;
        let d = s.config().head_dim;
        let q = doubles(query, d, "query")?;
        let k = doubles(key, d, "key")?;
        let v = doubles(value, d, "value")?;
        let out = non_null_mut(output, "output")?;
        if !(budget.is_finite() && budget > 0.0 && budget <= 1.0) {
            return Err(fail(
                LfpsStatus::InvalidArgument,
                format!("budget {budget} outside (0, 1]"),
            ));
        }
        let r = s.decode_step(q, k, v, budget)?;
        slice::from_raw_parts_mut(out, d).copy_from_slice(r.output.vector());
        if let Some(info) = info.as_mut() {
            *info = LfpsStepInfo {
                step: r.step,
                context_len: r.context_len,
                selected: r.candidates.c2.len(),
                probe_len: r.probe_len,
                dot_products: r.dots.total(),
                bypassed: u8::from(r.bypassed),
                rho: r.sparsity.rho,
            };
        }
        Ok(())
    })
}

/// # Safety
/// `session` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lfps_session_context_len(session: *const LfpsSession, out: *mut usize) -> LfpsStatus {
    guard(|| {
        *non_null_mut(out, "out")? = non_null(session, "session")?.0.store().len();
        Ok(())
    })
}

/// Releases a session. NULL is ignored.
///
/// # Safety
/// `session` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lfps_session_free(session: *mut LfpsSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}
