//! C ABI over the `fedaudit` core.
//!
//! Every function returns an [`FaStatus`]; results travel through out
//! pointers. On failure the message is kept per thread and can be copied out
//! with [`fa_last_error_message`]. Traces are opaque handles that must be
//! released with [`fa_trace_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use fedaudit::attack::{self, AttackContext, LrtConfig, MeasurementMatrix, Orientation, Variant};
use fedaudit::fedsim::UpdateTrace;
use fedaudit::harness::{self, RunOptions, TargetSet};
use fedaudit::metrics::{self, ParetoPoint, ScoredCohort};
use fedaudit::{numstat, Error};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Integrity = 4,
    Io = 5,
    BufferTooSmall = 6,
    Runtime = 7,
    Panic = 8,
}

/// Which side of the null distribution indicates membership.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaOrientation {
    MemberHigh = 0,
    MemberLow = 1,
}

/// FedMIA measurement variant: I scores the reconstructed local loss,
/// II the update/gradient cosine.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaVariant {
    I = 0,
    II = 1,
}

/// A loaded update trace together with its audited targets.
pub struct FaTrace {
    trace: UpdateTrace,
    targets: Option<TargetSet>,
    target_client: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(FaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config { .. } | Error::Parse { .. } => FaStatus::Config,
            Error::Integrity { .. } => FaStatus::Integrity,
            Error::Io { .. } => FaStatus::Io,
            Error::Contract(_) => FaStatus::Runtime,
            _ => FaStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: FaStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            FaStatus::Panic
        }
    }
}

fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass either null or a valid, writable, aligned pointer.
    unsafe { p.as_mut() }.ok_or_else(|| fail(FaStatus::NullPointer, format!("`{name}` is null")))
}

fn in_slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(FaStatus::NullPointer, format!("`{name}` is null")));
    }
    // SAFETY: the caller guarantees `len` readable elements at `p`.
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

fn out_slice<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(FaStatus::NullPointer, format!("`{name}` is null")));
    }
    // SAFETY: the caller guarantees `len` writable elements at `p`.
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(FaStatus::NullPointer, format!("`{name}` is null")));
    }
    // SAFETY: the caller guarantees a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(FaStatus::InvalidArgument, format!("`{name}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn trace_ref<'a>(t: *const FaTrace) -> Result<&'a FaTrace, Failure> {
    // SAFETY: handles come from `fa_trace_load` and are live until freed.
    unsafe { t.as_ref() }.ok_or_else(|| fail(FaStatus::NullPointer, "`trace` is null"))
}

/// Copies `s` with a trailing NUL into `buf`. Returns the size needed
/// including the NUL; writes nothing when `buf` is null or too small.
fn copy_str(s: &str, buf: *mut c_char, len: usize) -> usize {
    let bytes = s.as_bytes();
    let needed = bytes.len() + 1;
    if !buf.is_null() && len >= needed {
        // SAFETY: `buf` has room for `len >= needed` bytes.
        unsafe {
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
            *buf.add(bytes.len()) = 0;
        }
    }
    needed
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf`.
///
/// Returns the buffer size required including the terminating NUL, or 0 when
/// the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fa_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(msg) => copy_str(msg.to_str().unwrap_or_default(), buf, len),
        None => 0,
    })
}

/// `P(X <= x)` for `X ~ N(mean, variance)`.
///
/// # Safety
/// `out` must be a valid pointer to a `double`.
#[no_mangle]
pub unsafe extern "C" fn fa_gaussian_cdf(x: f64, mean: f64, variance: f64, out: *mut f64) -> FaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = numstat::gaussian_cdf(x, mean, variance)?;
        Ok(())
    })
}

fn cohort(scores: *const f64, is_member: *const u8, n: usize) -> Result<ScoredCohort, Failure> {
    let s = in_slice(scores, n, "scores")?;
    let m = in_slice(is_member, n, "is_member")?;
    Ok(ScoredCohort::new(
        s.iter().zip(m).map(|(&s, &m)| (s, m != 0)).collect(),
    )?)
}

/// Area under the ROC curve; `is_member[i]` is nonzero for members.
///
/// # Safety
/// `scores` and `is_member` must each hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fa_auc(scores: *const f64, is_member: *const u8, n: usize, out: *mut f64) -> FaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = metrics::auc(&cohort(scores, is_member, n)?);
        Ok(())
    })
}

/// Best true-positive rate whose false-positive rate stays within `fpr_cap`.
/// `achieved_fpr` may be null.
///
/// # Safety
/// `scores` and `is_member` must each hold `n` elements; `tpr` must be valid;
/// `achieved_fpr` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn fa_tpr_at_fpr(
    scores: *const f64,
    is_member: *const u8,
    n: usize,
    fpr_cap: f64,
    tpr: *mut f64,
    achieved_fpr: *mut f64,
) -> FaStatus {
    guard(|| {
        let tpr = out_ref(tpr, "tpr")?;
        let d = metrics::tpr_at_fpr_detail(&cohort(scores, is_member, n)?, fpr_cap)?;
        *tpr = d.tpr;
        // SAFETY: null or valid per the contract above.
        if let Some(a) = unsafe { achieved_fpr.as_mut() } {
            *a = d.achieved_fpr;
        }
        Ok(())
    })
}

/// Area dominated by the points `(utility_loss[i], privacy_leakage[i])`
/// up to the reference point, both objectives minimized.
///
/// # Safety
/// `utility_loss` and `privacy_leakage` must each hold `n` elements; `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn fa_hypervolume(
    utility_loss: *const f64,
    privacy_leakage: *const f64,
    n: usize,
    ref_x: f64,
    ref_y: f64,
    out: *mut f64,
) -> FaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let u = in_slice(utility_loss, n, "utility_loss")?;
        let l = in_slice(privacy_leakage, n, "privacy_leakage")?;
        let pts: Vec<ParetoPoint> = u.iter().zip(l).map(|(&u, &l)| ParetoPoint::new(u, l)).collect();
        *out = metrics::hypervolume(&pts, (ref_x, ref_y))?;
        Ok(())
    })
}

/// Membership score of one target from its measurement matrix.
///
/// `values` is row-major `rounds x clients`: entry `t * clients + k` is the
/// measurement of client `k`'s round-`t` update. `per_round` may be null;
/// otherwise it receives `rounds` per-round scores.
///
/// # Safety
/// `values` must hold `rounds * clients` elements, `per_round` must be null
/// or hold `rounds` writable elements, and `aggregate` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fa_lrt_score(
    values: *const f64,
    rounds: usize,
    clients: usize,
    target_client: usize,
    orientation: FaOrientation,
    per_round: *mut f64,
    aggregate: *mut f64,
) -> FaStatus {
    guard(|| {
        let aggregate = out_ref(aggregate, "aggregate")?;
        let len = rounds
            .checked_mul(clients)
            .ok_or_else(|| fail(FaStatus::InvalidArgument, "matrix size overflows"))?;
        let v = in_slice(values, len, "values")?;
        let m = MeasurementMatrix {
            values: v.chunks(clients.max(1)).map(<[f64]>::to_vec).collect(),
        };
        let orientation = match orientation {
            FaOrientation::MemberHigh => Orientation::MemberHigh,
            FaOrientation::MemberLow => Orientation::MemberLow,
        };
        let s = attack::score_target(&m, target_client, orientation, &LrtConfig::default())?;
        if !per_round.is_null() {
            out_slice(per_round, rounds, "per_round")?.copy_from_slice(&s.per_round);
        }
        *aggregate = s.aggregate;
        Ok(())
    })
}

/// Loads a trace directory written by an experiment run. The directory's
/// `targets.csv`, if present, becomes the trace's target list.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be valid. On success
/// `*out` owns a handle to release with [`fa_trace_free`].
#[no_mangle]
pub unsafe extern "C" fn fa_trace_load(dir: *const c_char, out: *mut *mut FaTrace) -> FaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        let dir = path_arg(dir, "dir")?;
        let (trace, extra) = UpdateTrace::load(&dir)?;
        let targets_path = dir.join("targets.csv");
        let targets = if targets_path.exists() {
            Some(harness::read_targets_csv(&targets_path)?)
        } else {
            None
        };
        let target_client = extra.get("target_client").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
        *out = Box::into_raw(Box::new(FaTrace {
            trace,
            targets,
            target_client,
        }));
        Ok(())
    })
}

/// Releases a handle from [`fa_trace_load`]. Null is ignored.
///
/// # Safety
/// `trace` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fa_trace_free(trace: *mut FaTrace) {
    if !trace.is_null() {
        // SAFETY: the handle was created by `Box::into_raw` in `fa_trace_load`.
        drop(unsafe { Box::from_raw(trace) });
    }
}

/// Rounds, clients, parameter dimension and stored targets of a trace. Any
/// out pointer may be null.
///
/// # Safety
/// `trace` must be a live handle; each out pointer must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn fa_trace_dims(
    trace: *const FaTrace,
    rounds: *mut usize,
    clients: *mut usize,
    dim: *mut usize,
    targets: *mut usize,
) -> FaStatus {
    guard(|| {
        let t = trace_ref(trace)?;
        let fields = [
            (rounds, t.trace.num_rounds()),
            (clients, t.trace.num_clients),
            (dim, t.trace.dim()),
            (targets, t.targets.as_ref().map_or(0, TargetSet::len)),
        ];
        for (p, v) in fields {
            // SAFETY: null or valid per the contract above.
            if let Some(p) = unsafe { p.as_mut() } {
                *p = v;
            }
        }
        Ok(())
    })
}

/// FedMIA aggregate scores of the trace's stored targets against its audited
/// client. `scores` receives one value per target and `is_member` (may be
/// null) the ground truth as 0/1.
///
/// # Safety
/// `trace` must be a live handle; `scores` must hold `len` writable
/// elements; `is_member` must be null or hold `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fa_trace_fedmia(
    trace: *const FaTrace,
    variant: FaVariant,
    scores: *mut f64,
    is_member: *mut u8,
    len: usize,
) -> FaStatus {
    guard(|| {
        let t = trace_ref(trace)?;
        let targets = t
            .targets
            .as_ref()
            .ok_or_else(|| fail(FaStatus::InvalidArgument, "trace has no stored targets"))?;
        if len < targets.len() {
            return Err(fail(
                FaStatus::BufferTooSmall,
                format!("need room for {} targets, got {len}", targets.len()),
            ));
        }
        let variant = match variant {
            FaVariant::I => Variant::I,
            FaVariant::II => Variant::II,
        };
        let profiles = AttackContext::new(&t.trace)?.profiles(&targets.samples)?;
        let s = attack::fedmia_scores(&profiles, t.target_client, variant, &LrtConfig::default())?;
        let out = out_slice(scores, targets.len(), "scores")?;
        for (o, s) in out.iter_mut().zip(&s) {
            *o = s.aggregate;
        }
        if !is_member.is_null() {
            let m = out_slice(is_member, targets.len(), "is_member")?;
            for (o, &v) in m.iter_mut().zip(&targets.is_member) {
                *o = u8::from(v);
            }
        }
        Ok(())
    })
}

/// Runs the experiment described by a config file under `out_root` and
/// copies the run directory path into `run_dir` (see
/// [`fa_last_error_message`] for the size convention; `run_dir_len` receives
/// the size needed).
///
/// # Safety
/// `config_path` and `out_root` must be NUL-terminated paths; `run_dir` must
/// be null or hold `len` writable bytes; `run_dir_len` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn fa_run_experiment(
    config_path: *const c_char,
    out_root: *const c_char,
    run_dir: *mut c_char,
    len: usize,
    run_dir_len: *mut usize,
) -> FaStatus {
    guard(|| {
        let config = path_arg(config_path, "config_path")?;
        let opts = RunOptions {
            out_root: path_arg(out_root, "out_root")?,
            seeds: None,
        };
        let (_, dir) = harness::run_experiment(&config, &opts)?;
        let s = dir.to_string_lossy();
        let needed = copy_str(&s, run_dir, len);
        // SAFETY: null or valid per the contract above.
        if let Some(n) = unsafe { run_dir_len.as_mut() } {
            *n = needed;
        }
        if !run_dir.is_null() && len < needed {
            return Err(fail(
                FaStatus::BufferTooSmall,
                format!("run directory path needs {needed} bytes"),
            ));
        }
        Ok(())
    })
}
