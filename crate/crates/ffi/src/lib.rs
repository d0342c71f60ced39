//! C ABI over the training engine: opaque network handles, schedule and clip
//! queries, and whole runs from a config file.
//!
//! Every function returns an [`NfStatus`]. On failure the message is kept per
//! thread and read back with [`nf_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use normfree::experiment::{parse_config, run, RunStatus};
use normfree::layers::{BlockKind, Mode, Network, NetworkSpec};
use normfree::optim::{clip_threshold_at, lr_at, ClipMode, ClipSpec, ScheduleSpec};
use normfree::{Error, Tensor};

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Config = 5,
    Io = 6,
    Internal = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfBlockKind {
    OriginalBn = 0,
    ModifiedWeightnorm = 1,
    Plain = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfScheduleKind {
    MonotonicDecrease = 0,
    StepDecrease = 1,
    CyclicTriangular = 2,
    WarmupThenDecay = 3,
}

/// Learning-rate schedule. Fields not used by `kind` are ignored.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct NfSchedule {
    pub kind: NfScheduleKind,
    /// Base rate of the decreasing schedules.
    pub base: f64,
    /// Epochs at the base rate before a step decrease starts.
    pub hold: f64,
    pub min: f64,
    pub max: f64,
    /// Half-period of the cyclic schedule.
    pub step: f64,
    pub start: f64,
    pub target: f64,
    pub warmup: f64,
    pub total: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfClipMode {
    None = 0,
    Constant = 1,
    AdaptiveLogIncrease = 2,
    AdaptiveLogDecrease = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfRunStatus {
    Completed = 0,
    Diverged = 1,
    Error = 2,
}

/// Opaque network handle (32-bit floats).
pub struct NfNetwork {
    inner: Network<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> NfStatus {
    match err {
        Error::ShapeMismatch { .. } | Error::InvalidShape { .. } | Error::NonScalarLoss(_) => NfStatus::Shape,
        Error::NonFinite { .. } => NfStatus::NonFinite,
        Error::InvalidArgument(_) => NfStatus::InvalidArgument,
        Error::Config(_) | Error::UnknownKey { .. } => NfStatus::Config,
        Error::MissingPath(_) | Error::MissingArtifact { .. } | Error::Io { .. } | Error::Format { .. } => NfStatus::Io,
        _ => NfStatus::Internal,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

/// Run `f`, record any failure and map it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NfStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("`{what}` is null"));
            NfStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            NfStatus::InvalidArgument
        }
        Ok(Err(Failure::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            NfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(non_null(p, what)?, len))
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn nf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Build a mini-ResNet with `stages` stages of the given widths and block counts.
/// `dropout` applies only to weight-norm blocks. The handle is released with [`nf_network_free`].
///
/// # Safety
/// `widths` and `blocks` must each point to `stages` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_network_new(
    in_channels: usize,
    widths: *const usize,
    blocks: *const usize,
    stages: usize,
    kind: NfBlockKind,
    classes: usize,
    dropout: f64,
    seed: u64,
    out: *mut *mut NfNetwork,
) -> NfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let widths = slice(widths, stages, "widths")?;
        let blocks = slice(blocks, stages, "blocks")?;
        let kind = match kind {
            NfBlockKind::OriginalBn => BlockKind::OriginalBn,
            NfBlockKind::ModifiedWeightnorm => BlockKind::ModifiedWeightnorm,
            NfBlockKind::Plain => BlockKind::Plain,
        };
        let mut spec = NetworkSpec::new(in_channels, widths, blocks, kind, classes);
        if kind == BlockKind::ModifiedWeightnorm {
            spec = spec.with_dropout(dropout);
        }
        let inner = Network::build(&spec, seed)?;
        *out = Box::into_raw(Box::new(NfNetwork { inner }));
        Ok(())
    })
}

/// Release a handle from [`nf_network_new`]. Null is ignored.
///
/// # Safety
/// `net` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nf_network_free(net: *mut NfNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Total number of trainable scalars.
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_network_param_count(net: *const NfNetwork, out: *mut usize) -> NfStatus {
    guard(|| {
        let net = &*non_null(net, "net")?;
        non_null(out, "out")?;
        *out = net.inner.parameters().iter().map(|(_, p)| p.value.numel()).sum();
        Ok(())
    })
}

/// Logits for an `n × c × h × w` batch, written row-major to `out` (`n × classes`).
/// Evaluation mode unless `train` is set; train mode uses batch statistics and
/// updates running statistics.
///
/// # Safety
/// `net` must be a live handle, `input` must hold `n·c·h·w` values and `out`
/// must have room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn nf_network_forward(
    net: *mut NfNetwork,
    input: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    train: bool,
    out: *mut f32,
    out_len: usize,
) -> NfStatus {
    guard(|| {
        let net = &mut *(non_null(net, "net")? as *mut NfNetwork);
        let data = slice(input, n * c * h * w, "input")?;
        let x = Tensor::new(&[n, c, h, w], data.to_vec())?;
        let mode = if train { Mode::Train } else { Mode::Eval };
        let logits = net.inner.predict(&x, mode)?;
        if out_len < logits.numel() {
            return Err(Failure::Invalid(format!(
                "output buffer holds {out_len} values, logits need {}",
                logits.numel()
            )));
        }
        non_null(out, "out")?;
        std::slice::from_raw_parts_mut(out, logits.numel()).copy_from_slice(logits.data());
        Ok(())
    })
}

fn schedule_spec(s: &NfSchedule) -> ScheduleSpec {
    match s.kind {
        NfScheduleKind::MonotonicDecrease => ScheduleSpec::MonotonicDecrease {
            base: s.base,
            total: s.total,
        },
        NfScheduleKind::StepDecrease => ScheduleSpec::StepDecrease {
            base: s.base,
            hold: s.hold,
            total: s.total,
        },
        NfScheduleKind::CyclicTriangular => ScheduleSpec::CyclicTriangular {
            min: s.min,
            max: s.max,
            step: s.step,
            total: s.total,
        },
        NfScheduleKind::WarmupThenDecay => ScheduleSpec::WarmupThenDecay {
            start: s.start,
            target: s.target,
            warmup: s.warmup,
            total: s.total,
        },
    }
}

/// Learning rate at real-valued epoch progress `t`.
///
/// # Safety
/// `schedule` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nf_lr_at(schedule: *const NfSchedule, t: f64, out: *mut f64) -> NfStatus {
    guard(|| {
        let spec = schedule_spec(&*non_null(schedule, "schedule")?);
        spec.validate()?;
        non_null(out, "out")?;
        *out = lr_at(&spec, t)?;
        Ok(())
    })
}

/// Clipping threshold at `epoch`. With mode `None`, `*enabled` is false and `*out` is untouched.
///
/// # Safety
/// `enabled` and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_clip_threshold_at(
    mode: NfClipMode,
    initial: f64,
    epoch: usize,
    enabled: *mut bool,
    out: *mut f64,
) -> NfStatus {
    guard(|| {
        non_null(enabled, "enabled")?;
        non_null(out, "out")?;
        let mode = match mode {
            NfClipMode::None => ClipMode::None,
            NfClipMode::Constant => ClipMode::Constant,
            NfClipMode::AdaptiveLogIncrease => ClipMode::AdaptiveLogIncrease,
            NfClipMode::AdaptiveLogDecrease => ClipMode::AdaptiveLogDecrease,
        };
        let spec = ClipSpec { mode, initial };
        spec.validate()?;
        *enabled = false;
        if let Some(tau) = clip_threshold_at(&spec, epoch) {
            *enabled = true;
            *out = tau;
        }
        Ok(())
    })
}

/// Run the experiment described by the TOML file at `config_path`. A non-null
/// `out_dir` overrides the config's output directory. A diverged run is still
/// `NF_STATUS_OK`; its outcome is reported in `*status`.
///
/// # Safety
/// `config_path` and a non-null `out_dir` must be NUL-terminated UTF-8; `status` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_run_config(
    config_path: *const c_char,
    out_dir: *const c_char,
    status: *mut NfRunStatus,
) -> NfStatus {
    guard(|| {
        non_null(status, "status")?;
        let text = |p: *const c_char, what: &'static str| -> Result<String, Failure> {
            CStr::from_ptr(p)
                .to_str()
                .map(str::to_string)
                .map_err(|_| Failure::Invalid(format!("`{what}` is not UTF-8")))
        };
        let path = PathBuf::from(text(non_null(config_path, "config_path")?, "config_path")?);
        let mut config = parse_config(&path)?;
        if !out_dir.is_null() {
            config.output.dir = PathBuf::from(text(out_dir, "out_dir")?);
        }
        *status = match run(&config)?.status {
            RunStatus::Completed => NfRunStatus::Completed,
            RunStatus::Diverged => NfRunStatus::Diverged,
            RunStatus::Error => NfRunStatus::Error,
        };
        Ok(())
    })
}
