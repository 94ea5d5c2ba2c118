//! C ABI for the tracker.
//!
//! Every fallible call returns an [`LtStatus`]; on failure a description is
//! available from [`lt_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new` and released by the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ladar_track::cli::{parse_tracker_config, CLUSTER_GAP};
use ladar_track::fitting::{Point, Pose2};
use ladar_track::kinematics::{vasm_propagate, VasmState};
use ladar_track::simulator::{cluster_points, ScanFrame};
use ladar_track::tracker::{ModelKind, TrackManager, TrackReport, TrackerConfig};
use ladar_track::Error;

/// Result of an API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    FitFailure = 3,
    Degenerate = 4,
    Singular = 5,
    Config = 6,
    Data = 7,
    Io = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// Motion model of a hypothesis.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtModel {
    Ism = 0,
    Vasm = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LtPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Arc-model state: center `(x, y)`, axle offset `l`, axle speed `v`,
/// heading and turn rate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LtVasmState {
    pub x: f64,
    pub y: f64,
    pub l: f64,
    pub v: f64,
    pub theta: f64,
    pub thetadot: f64,
}

/// Summary of one track's selected hypothesis.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtTrack {
    pub id: u64,
    pub model: LtModel,
    pub pose: LtPose,
    pub vx: f64,
    pub vy: f64,
    pub length: f64,
    pub width: f64,
    /// Number of hypotheses held for the object.
    pub hypotheses: u32,
    /// Windowed mean NIS, NaN before the first update.
    pub score: f64,
    /// Number of predicted poses available from [`lt_tracker_prediction`].
    pub prediction_len: u32,
}

/// Opaque tracker handle.
pub struct LtTracker {
    manager: TrackManager,
    reports: Vec<TrackReport>,
    last_time: Option<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LtStatus {
    match e {
        Error::InvalidArgument(_) => LtStatus::InvalidArgument,
        Error::FitFailure(_) => LtStatus::FitFailure,
        Error::Degenerate(_) => LtStatus::Degenerate,
        Error::Singular(_) => LtStatus::Singular,
        Error::Config { .. } => LtStatus::Config,
        Error::Data { .. } => LtStatus::Data,
        Error::Io(_) => LtStatus::Io,
    }
}

fn fail(status: LtStatus, msg: &str) -> LtStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), LtStatus>) -> LtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LtStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(LtStatus::Panic, "internal panic"),
    }
}

fn check(e: Error) -> LtStatus {
    fail(status_of(&e), &e.to_string())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn lt_status_str(status: LtStatus) -> *const c_char {
    let s: &'static CStr = match status {
        LtStatus::Ok => c"ok",
        LtStatus::NullPointer => c"null pointer",
        LtStatus::InvalidArgument => c"invalid argument",
        LtStatus::FitFailure => c"fit failure",
        LtStatus::Degenerate => c"degenerate fit",
        LtStatus::Singular => c"singular matrix",
        LtStatus::Config => c"configuration error",
        LtStatus::Data => c"data error",
        LtStatus::Io => c"i/o error",
        LtStatus::OutOfRange => c"index out of range",
        LtStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Creates a tracker. `config_toml` may be null for the default
/// configuration, or a TOML document overriding any subset of the keys.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_tracker_new(config_toml: *const c_char, out: *mut *mut LtTracker) -> LtStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(LtStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let config = if config_toml.is_null() {
            TrackerConfig::default()
        } else {
            let text = CStr::from_ptr(config_toml).to_str().map_err(|_| fail(LtStatus::InvalidArgument, "config is not UTF-8"))?;
            parse_tracker_config(text, "<config>").map_err(check)?
        };
        let manager = TrackManager::new(config).map_err(check)?;
        *out = Box::into_raw(Box::new(LtTracker { manager, reports: Vec::new(), last_time: None }));
        Ok(())
    })
}

/// Releases a tracker. Null is ignored.
///
/// # Safety
/// `tracker` must be null or a handle from [`lt_tracker_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lt_tracker_free(tracker: *mut LtTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Processes one scan. `xy` holds `n_points` interleaved world-frame
/// coordinates; `sensor` is the scanner pose. Timestamps must increase.
///
/// # Safety
/// `tracker` must be a live handle, `xy` must point to `2 * n_points`
/// doubles (or be null when `n_points` is 0).
#[no_mangle]
pub unsafe extern "C" fn lt_tracker_step(
    tracker: *mut LtTracker,
    xy: *const f64,
    n_points: usize,
    sensor: LtPose,
    timestamp: f64,
) -> LtStatus {
    guard(|| {
        let t = tracker.as_mut().ok_or_else(|| fail(LtStatus::NullPointer, "tracker is null"))?;
        if xy.is_null() && n_points > 0 {
            return Err(fail(LtStatus::NullPointer, "points are null"));
        }
        if !timestamp.is_finite() || t.last_time.is_some_and(|p| timestamp <= p) {
            return Err(fail(LtStatus::InvalidArgument, "timestamps must be finite and increasing"));
        }
        let coords = if n_points == 0 { &[][..] } else { std::slice::from_raw_parts(xy, 2 * n_points) };
        let frame = ScanFrame {
            timestamp,
            ego_pose: Pose2 { x: sensor.x, y: sensor.y, theta: sensor.theta },
            points: coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect(),
            labels: None,
            truth: Vec::new(),
        };
        let dt = t.last_time.map_or(t.manager.config.prediction_dt, |p| timestamp - p);
        let clusters = cluster_points(&frame, CLUSTER_GAP);
        t.reports = t.manager.step(&clusters, dt).map_err(check)?;
        t.last_time = Some(timestamp);
        Ok(())
    })
}

/// Number of tracks reported by the last step.
///
/// # Safety
/// `tracker` must be a live handle and `count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_tracker_track_count(tracker: *const LtTracker, count: *mut usize) -> LtStatus {
    guard(|| {
        let t = tracker.as_ref().ok_or_else(|| fail(LtStatus::NullPointer, "tracker is null"))?;
        let c = count.as_mut().ok_or_else(|| fail(LtStatus::NullPointer, "count is null"))?;
        *c = t.reports.len();
        Ok(())
    })
}

fn report(t: &LtTracker, index: usize) -> Result<&TrackReport, LtStatus> {
    t.reports.get(index).ok_or_else(|| fail(LtStatus::OutOfRange, &format!("track index {index} >= {}", t.reports.len())))
}

/// Selected hypothesis of track `index` from the last step.
///
/// # Safety
/// `tracker` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_tracker_track(tracker: *const LtTracker, index: usize, out: *mut LtTrack) -> LtStatus {
    guard(|| {
        let t = tracker.as_ref().ok_or_else(|| fail(LtStatus::NullPointer, "tracker is null"))?;
        let o = out.as_mut().ok_or_else(|| fail(LtStatus::NullPointer, "out is null"))?;
        let r = report(t, index)?;
        let h = r.best();
        *o = LtTrack {
            id: r.id,
            model: match h.model {
                ModelKind::Ism => LtModel::Ism,
                ModelKind::Vasm => LtModel::Vasm,
            },
            pose: LtPose { x: h.pose.x, y: h.pose.y, theta: h.pose.theta },
            vx: h.velocity[0],
            vy: h.velocity[1],
            length: r.shape.length,
            width: r.shape.width,
            hypotheses: r.hypotheses.len() as u32,
            score: h.score.unwrap_or(f64::NAN),
            prediction_len: h.predicted.len() as u32,
        };
        Ok(())
    })
}

/// Copies up to `cap` predicted center poses of track `index` into `poses`
/// and stores the number written in `written`.
///
/// # Safety
/// `tracker` must be a live handle, `poses` must point to `cap` writable
/// elements (or be null when `cap` is 0) and `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lt_tracker_prediction(
    tracker: *const LtTracker,
    index: usize,
    poses: *mut LtPose,
    cap: usize,
    written: *mut usize,
) -> LtStatus {
    guard(|| {
        let t = tracker.as_ref().ok_or_else(|| fail(LtStatus::NullPointer, "tracker is null"))?;
        let w = written.as_mut().ok_or_else(|| fail(LtStatus::NullPointer, "written is null"))?;
        if poses.is_null() && cap > 0 {
            return Err(fail(LtStatus::NullPointer, "poses is null"));
        }
        let pred = &report(t, index)?.best().predicted;
        let n = pred.len().min(cap);
        for (i, p) in pred.iter().take(n).enumerate() {
            *poses.add(i) = LtPose { x: p.x, y: p.y, theta: p.theta };
        }
        *w = n;
        Ok(())
    })
}

/// Closed-form arc propagation of an arc-model state over `dt` seconds.
///
/// # Safety
/// `state` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lt_vasm_propagate(state: *const LtVasmState, dt: f64, out: *mut LtVasmState) -> LtStatus {
    guard(|| {
        let s = state.as_ref().ok_or_else(|| fail(LtStatus::NullPointer, "state is null"))?;
        let o = out.as_mut().ok_or_else(|| fail(LtStatus::NullPointer, "out is null"))?;
        if !dt.is_finite() || dt < 0.0 {
            return Err(fail(LtStatus::InvalidArgument, "dt must be finite and >= 0"));
        }
        let n = vasm_propagate(&VasmState { x: s.x, y: s.y, l: s.l, v: s.v, theta: s.theta, thetadot: s.thetadot }, dt);
        *o = LtVasmState { x: n.x, y: n.y, l: n.l, v: n.v, theta: n.theta, thetadot: n.thetadot };
        Ok(())
    })
}
