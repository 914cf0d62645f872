//! C ABI over the sensitivity, masking and snapshot primitives.
//!
//! Every object crosses the boundary as an opaque pointer created by an
//! `epi_*_new`/`epi_*_decode`/`epi_mask_select` call and released by the
//! matching `epi_*_free`. Every fallible function returns an [`EpiStatus`];
//! on failure a human-readable message is kept per thread and can be read
//! with [`epi_last_error`]. Panics never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use epi_core::epi::{normalize_layerwise, select_mask, IsolationMask, MaskStrategy, SensitivityState, NORMALIZE_EPS};
use epi_core::harness::snapshot;
use epi_core::metrics::{hamming, jaccard};
use epi_core::{EpiError, Partition, Rng};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    LengthMismatch = 3,
    InvalidPartition = 4,
    NonFinite = 5,
    Degenerate = 6,
    CorruptSnapshot = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Internal = 10,
}

/// Mask selection rule; the numeric values match the snapshot strategy byte.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpiStrategy {
    Epi = 0,
    Static = 1,
    PerLayerBudget = 2,
    GlobalRaw = 3,
    Random = 4,
    None = 5,
}

/// Named, contiguous parameter groups.
pub struct EpiPartition(Partition);

/// EMA of squared gradients.
pub struct EpiSensitivity(SensitivityState);

/// A protected-coordinate set with its step, ratio and strategy.
pub struct EpiMask(IsolationMask);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn status_of(err: &EpiError) -> EpiStatus {
    match err {
        EpiError::InvalidArgument(_) | EpiError::Empty(_) | EpiError::UnknownGroup(_) => EpiStatus::InvalidArgument,
        EpiError::LengthMismatch { .. } | EpiError::ShapeMismatch(_) => EpiStatus::LengthMismatch,
        EpiError::InvalidPartition(_) => EpiStatus::InvalidPartition,
        EpiError::NonFinite(_) => EpiStatus::NonFinite,
        EpiError::Degenerate(_) => EpiStatus::Degenerate,
        EpiError::CorruptSnapshot(_) => EpiStatus::CorruptSnapshot,
        _ => EpiStatus::Internal,
    }
}

struct Failure(EpiStatus, String);

impl From<EpiError> for Failure {
    fn from(err: EpiError) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(EpiStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `body`, converting errors and panics into a status plus last-error message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> EpiStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            EpiStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            EpiStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(null(what))
    } else {
        Ok(std::slice::from_raw_parts(p, len))
    }
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        Ok(&mut [])
    } else if p.is_null() {
        Err(null(what))
    } else {
        Ok(std::slice::from_raw_parts_mut(p, len))
    }
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn check_len(expected: usize, actual: usize) -> Result<(), Failure> {
    if expected == actual {
        Ok(())
    } else {
        Err(EpiError::LengthMismatch { expected, actual }.into())
    }
}

fn strategy_from(code: EpiStrategy) -> MaskStrategy {
    MaskStrategy::from_code(code as u8).expect("every EpiStrategy has a matching code")
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next `epi_*` call on the same thread.
#[no_mangle]
pub extern "C" fn epi_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn epi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a partition from `n` group sizes laid out in order. `names` may be
/// null (groups are then called `g0`, `g1`, …) or point to `n` C strings.
///
/// # Safety
/// `sizes` must point to `n` values and `names`, when non-null, to `n` valid
/// nul-terminated strings. `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_partition_new(
    sizes: *const usize,
    names: *const *const c_char,
    n: usize,
    out: *mut *mut EpiPartition,
) -> EpiStatus {
    guard(|| {
        let sizes = slice(sizes, n, "sizes")?;
        let mut groups = Vec::with_capacity(n);
        for (i, &len) in sizes.iter().enumerate() {
            let name = if names.is_null() {
                format!("g{i}")
            } else {
                let p = *names.add(i);
                if p.is_null() {
                    return Err(null("names[i]"));
                }
                CStr::from_ptr(p)
                    .to_str()
                    .map_err(|_| Failure(EpiStatus::InvalidArgument, format!("group name {i} is not UTF-8")))?
                    .to_owned()
            };
            groups.push((name, len));
        }
        let partition = Partition::build(&groups)?;
        put(out, Box::into_raw(Box::new(EpiPartition(partition))), "out")
    })
}

/// Total parameter count of the partition; 0 for a null handle.
///
/// # Safety
/// `partition` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn epi_partition_dim(partition: *const EpiPartition) -> usize {
    partition.as_ref().map_or(0, |p| p.0.dim())
}

/// Number of groups in the partition; 0 for a null handle.
///
/// # Safety
/// `partition` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn epi_partition_groups(partition: *const EpiPartition) -> usize {
    partition.as_ref().map_or(0, |p| p.0.len())
}

/// # Safety
/// `partition` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn epi_partition_free(partition: *mut EpiPartition) {
    if !partition.is_null() {
        drop(Box::from_raw(partition));
    }
}

/// Creates a zeroed sensitivity state over `dim` coordinates with decay `beta` in [0, 1).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_sensitivity_new(dim: usize, beta: f64, out: *mut *mut EpiSensitivity) -> EpiStatus {
    guard(|| {
        let state = SensitivityState::new(dim, beta)?;
        put(out, Box::into_raw(Box::new(EpiSensitivity(state))), "out")
    })
}

/// Folds one gradient of length `len` into the running average.
///
/// # Safety
/// `state` must be a live handle and `grad` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn epi_sensitivity_accumulate(
    state: *mut EpiSensitivity,
    grad: *const f64,
    len: usize,
) -> EpiStatus {
    guard(|| {
        let state = borrow_mut(state, "state")?;
        state.0.accumulate(slice(grad, len, "grad")?)?;
        Ok(())
    })
}

/// Copies the current scores into `out`, which must hold exactly the state's dimension.
///
/// # Safety
/// `state` must be a live handle and `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn epi_sensitivity_values(state: *const EpiSensitivity, out: *mut f64, len: usize) -> EpiStatus {
    guard(|| {
        let state = borrow(state, "state")?;
        check_len(state.0.dim(), len)?;
        slice_mut(out, len, "out")?.copy_from_slice(state.0.values());
        Ok(())
    })
}

/// Number of gradients accumulated since creation or the last reset; 0 for a null handle.
///
/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn epi_sensitivity_steps(state: *const EpiSensitivity) -> u64 {
    state.as_ref().map_or(0, |s| s.0.steps())
}

/// Zeroes the scores and step count.
///
/// # Safety
/// `state` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn epi_sensitivity_reset(state: *mut EpiSensitivity) -> EpiStatus {
    guard(|| {
        borrow_mut(state, "state")?.0.reset();
        Ok(())
    })
}

/// # Safety
/// `state` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn epi_sensitivity_free(state: *mut EpiSensitivity) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Min-max normalises `scores` within each group of `partition` into `out`.
///
/// # Safety
/// `partition` must be a live handle; `scores` and `out` must each point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn epi_normalize(
    partition: *const EpiPartition,
    scores: *const f64,
    out: *mut f64,
    len: usize,
) -> EpiStatus {
    guard(|| {
        let partition = borrow(partition, "partition")?;
        let normalized = normalize_layerwise(slice(scores, len, "scores")?, &partition.0, NORMALIZE_EPS)?;
        slice_mut(out, len, "out")?.copy_from_slice(&normalized);
        Ok(())
    })
}

/// Selects a mask protecting round(p·d) coordinates from the sensitivity
/// state. `seed` only matters for `EPI_STRATEGY_RANDOM`.
///
/// # Safety
/// `state` and `partition` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_select(
    state: *const EpiSensitivity,
    partition: *const EpiPartition,
    p: f64,
    strategy: EpiStrategy,
    seed: u64,
    step: u64,
    out: *mut *mut EpiMask,
) -> EpiStatus {
    guard(|| {
        let state = borrow(state, "state")?;
        let partition = borrow(partition, "partition")?;
        check_len(partition.0.dim(), state.0.dim())?;
        let mut rng = Rng::seeded(seed);
        let mask = select_mask(&state.0, p, strategy_from(strategy), &partition.0, &mut rng, step)?;
        put(out, Box::into_raw(Box::new(EpiMask(mask))), "out")
    })
}

/// Builds a mask of dimension `dim` protecting the listed coordinates.
///
/// # Safety
/// `indices` must point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_from_indices(
    dim: usize,
    indices: *const usize,
    n: usize,
    step: u64,
    out: *mut *mut EpiMask,
) -> EpiStatus {
    guard(|| {
        let indices = slice(indices, n, "indices")?;
        if let Some(&bad) = indices.iter().find(|&&j| j >= dim) {
            return Err(Failure(EpiStatus::InvalidArgument, format!("index {bad} out of range for dimension {dim}")));
        }
        let mut mask = IsolationMask::empty(dim);
        for &j in indices {
            mask.bits.set(j, true);
        }
        mask.step = step;
        put(out, Box::into_raw(Box::new(EpiMask(mask))), "out")
    })
}

/// Mask dimension; 0 for a null handle.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_dim(mask: *const EpiMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.dim())
}

/// Protected-coordinate count; 0 for a null handle.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_popcount(mask: *const EpiMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.popcount())
}

/// Step the mask was selected at; 0 for a null handle.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_step(mask: *const EpiMask) -> u64 {
    mask.as_ref().map_or(0, |m| m.0.step)
}

/// Writes whether coordinate `j` is protected.
///
/// # Safety
/// `mask` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_get(mask: *const EpiMask, j: usize, out: *mut bool) -> EpiStatus {
    guard(|| {
        let mask = borrow(mask, "mask")?;
        if j >= mask.0.dim() {
            return Err(Failure(
                EpiStatus::InvalidArgument,
                format!("index {j} out of range for dimension {}", mask.0.dim()),
            ));
        }
        put(out, mask.0.bits.get(j), "out")
    })
}

/// Writes the protected indices in ascending order. `written` always receives
/// the popcount; if `cap` is smaller, nothing is copied and
/// `EPI_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `mask` must be a live handle, `out` must point to `cap` writable values
/// (or be null when `cap` is 0) and `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_indices(
    mask: *const EpiMask,
    out: *mut usize,
    cap: usize,
    written: *mut usize,
) -> EpiStatus {
    guard(|| {
        let mask = borrow(mask, "mask")?;
        let n = mask.0.popcount();
        put(written, n, "written")?;
        if cap < n {
            return Err(Failure(EpiStatus::BufferTooSmall, format!("need {n} slots, got {cap}")));
        }
        for (slot, j) in slice_mut(out, cap, "out")?.iter_mut().zip(mask.0.bits.iter_ones()) {
            *slot = j;
        }
        Ok(())
    })
}

/// Number of coordinates whose protection differs between two equal-length masks.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_hamming(a: *const EpiMask, b: *const EpiMask, out: *mut usize) -> EpiStatus {
    guard(|| {
        let d = hamming(&borrow(a, "a")?.0.bits, &borrow(b, "b")?.0.bits)?;
        put(out, d, "out")
    })
}

/// |a ∩ b| / |a ∪ b|; fails with `EPI_STATUS_DEGENERATE` if both masks are empty.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_jaccard(a: *const EpiMask, b: *const EpiMask, out: *mut f64) -> EpiStatus {
    guard(|| {
        let j = jaccard(&borrow(a, "a")?.0.bits, &borrow(b, "b")?.0.bits)?;
        put(out, j, "out")
    })
}

/// Serialises the mask in the EPIM snapshot format. `written` always receives
/// the encoded size; pass a null `buf` with `cap` 0 to query it.
///
/// # Safety
/// `mask` must be a live handle, `buf` must point to `cap` writable bytes (or
/// be null when `cap` is 0) and `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_encode(
    mask: *const EpiMask,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> EpiStatus {
    guard(|| {
        let bytes = snapshot::encode(&borrow(mask, "mask")?.0)?;
        put(written, bytes.len(), "written")?;
        if cap < bytes.len() {
            return Err(Failure(EpiStatus::BufferTooSmall, format!("need {} bytes, got {cap}", bytes.len())));
        }
        slice_mut(buf, cap, "buf")?[..bytes.len()].copy_from_slice(&bytes);
        Ok(())
    })
}

/// Parses an EPIM snapshot, rejecting bad magic, version, length or strategy.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_decode(bytes: *const u8, len: usize, out: *mut *mut EpiMask) -> EpiStatus {
    guard(|| {
        let mask = snapshot::decode(slice(bytes, len, "bytes")?)?;
        put(out, Box::into_raw(Box::new(EpiMask(mask))), "out")
    })
}

/// # Safety
/// `mask` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn epi_mask_free(mask: *mut EpiMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}
