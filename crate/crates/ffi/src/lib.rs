//! C interface to the streamkey toolkit.
//!
//! Objects are opaque handles created by `sk_*_new`/`sk_*_generate` style
//! functions and released with the matching `sk_*_free`. Every fallible
//! function returns an [`SkStatus`]; on failure the message is available from
//! [`sk_last_error`] on the same thread until the next failing call.
//!
//! Bit strings cross the boundary as little-endian byte arrays: byte `k`
//! holds bits `8k..8k+8` with bit `8k` in the least significant position.
//! Unused high bits of the last byte must be zero.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use streamkey::privacy_amp::{self, SecurityLedger, StreamPad};
use streamkey::rates::{self, ErrorRates};
use streamkey::{BitString, Error, HashSeedSource, ToeplitzMatrix};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    LengthMismatch = 3,
    PadOverConsumed = 4,
    OutOfOrder = 5,
    BudgetExhausted = 6,
    UnknownMatrix = 7,
    RankDeficient = 8,
    BufferTooSmall = 9,
    Internal = 10,
}

/// Opaque Toeplitz hashing matrix.
pub struct SkToeplitz(ToeplitzMatrix);

/// Opaque stream pad with its consumption cursor.
pub struct SkStreamPad(StreamPad);

/// Opaque reuse ledger.
pub struct SkLedger(SecurityLedger);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SkStatus {
    match err {
        Error::LengthMismatch { .. } | Error::Dimension(_) => SkStatus::LengthMismatch,
        Error::PadOverConsumed { .. } => SkStatus::PadOverConsumed,
        Error::OutOfOrder { .. } => SkStatus::OutOfOrder,
        Error::BudgetExhausted { .. } => SkStatus::BudgetExhausted,
        Error::UnknownMatrix(_) => SkStatus::UnknownMatrix,
        Error::RankDeficient { .. } => SkStatus::RankDeficient,
        _ => SkStatus::InvalidInput,
    }
}

fn fail(status: SkStatus, msg: impl Into<String>) -> SkStatus {
    set_error(msg.into());
    status
}

/// Run `f`, translating errors and panics into status codes.
fn guard<F: FnOnce() -> Result<SkStatus, (SkStatus, String)>>(f: F) -> SkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => fail(s, msg),
        Err(_) => fail(SkStatus::Internal, "panic inside streamkey"),
    }
}

fn lift(err: Error) -> (SkStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (SkStatus, String) {
    (SkStatus::NullPointer, format!("{what} is null"))
}

unsafe fn bits_in(ptr: *const u8, nbits: usize) -> Result<BitString, (SkStatus, String)> {
    if nbits == 0 {
        return Ok(BitString::zeros(0));
    }
    if ptr.is_null() {
        return Err(null("input buffer"));
    }
    let bytes = std::slice::from_raw_parts(ptr, nbits.div_ceil(8));
    BitString::from_le_bytes(nbits, bytes).map_err(lift)
}

unsafe fn bits_out(bits: &BitString, ptr: *mut u8, cap: usize) -> Result<(), (SkStatus, String)> {
    let bytes = bits.to_le_bytes();
    if bytes.is_empty() {
        return Ok(());
    }
    if ptr.is_null() {
        return Err(null("output buffer"));
    }
    if cap < bytes.len() {
        return Err((
            SkStatus::BufferTooSmall,
            format!("output needs {} bytes, buffer holds {cap}", bytes.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr(), ptr, bytes.len());
    Ok(())
}

unsafe fn str_in<'a>(ptr: *const c_char) -> Result<&'a str, (SkStatus, String)> {
    if ptr.is_null() {
        return Err(null("string"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (SkStatus::InvalidInput, "string is not UTF-8".to_string()))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn sk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// `1 - h(e_b) - h(e_p)`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn sk_shor_preskill_rate(e_b: f64, e_p: f64, out: *mut f64) -> SkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = ErrorRates::new(e_b, e_p).map_err(lift)?;
        *out = rates::shor_preskill_rate(&r);
        Ok(SkStatus::Ok)
    })
}

/// `ceil(n h(e_p))`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_seed_length(n: usize, e_p: f64, out: *mut usize) -> SkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = rates::seed_length(n, e_p).map_err(lift)?;
        Ok(SkStatus::Ok)
    })
}

/// Draw a random `rows x cols` Toeplitz matrix from the tape named by `seed`.
///
/// # Safety
/// `out` must be a valid pointer; the handle it receives must be released
/// with [`sk_toeplitz_free`].
#[no_mangle]
pub unsafe extern "C" fn sk_toeplitz_generate(
    rows: usize,
    cols: usize,
    seed: u64,
    out: *mut *mut SkToeplitz,
) -> SkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mut src = HashSeedSource::from_seed(seed, "ffi/toeplitz");
        let m = ToeplitzMatrix::generate(rows, cols, &mut src).map_err(lift)?;
        *out = Box::into_raw(Box::new(SkToeplitz(m)));
        Ok(SkStatus::Ok)
    })
}

/// Build a matrix from its `rows + cols - 1` diagonal bits.
///
/// # Safety
/// `diag` must point to `ceil((rows + cols - 1) / 8)` readable bytes and `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_toeplitz_from_diag(
    rows: usize,
    cols: usize,
    diag: *const u8,
    out: *mut *mut SkToeplitz,
) -> SkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let nbits = (rows + cols).saturating_sub(1);
        let d = bits_in(diag, nbits)?;
        let m = ToeplitzMatrix::new(rows, cols, d).map_err(lift)?;
        *out = Box::into_raw(Box::new(SkToeplitz(m)));
        Ok(SkStatus::Ok)
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sk_toeplitz_free(m: *mut SkToeplitz) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_toeplitz_rows(m: *const SkToeplitz) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_toeplitz_cols(m: *const SkToeplitz) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Hash `cols` input bits into `rows` output bits.
///
/// # Safety
/// `input` must hold `ceil(cols / 8)` bytes and `output` `out_cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sk_toeplitz_apply(
    m: *const SkToeplitz,
    input: *const u8,
    output: *mut u8,
    out_cap: usize,
) -> SkStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        let x = bits_in(input, m.0.cols())?;
        let y = m.0.apply_fast(&x).map_err(lift)?;
        bits_out(&y, output, out_cap)?;
        Ok(SkStatus::Ok)
    })
}

/// Pad `d M` for a seed of `rows(M)` bits.
///
/// # Safety
/// `m` must be a live handle, `seed` must hold `ceil(rows / 8)` bytes and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_pad_new(
    m: *const SkToeplitz,
    seed: *const u8,
    out: *mut *mut SkStreamPad,
) -> SkStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("matrix"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let d = bits_in(seed, m.0.rows())?;
        let pad = privacy_amp::make_pad(&m.0, &d).map_err(lift)?;
        *out = Box::into_raw(Box::new(SkStreamPad(pad)));
        Ok(SkStatus::Ok)
    })
}

/// # Safety
/// `p` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sk_pad_free(p: *mut SkStreamPad) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_pad_len(p: *const SkStreamPad) -> usize {
    p.as_ref().map_or(0, |p| p.0.len())
}

/// # Safety
/// `p` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_pad_cursor(p: *const SkStreamPad) -> usize {
    p.as_ref().map_or(0, |p| p.0.cursor())
}

/// XOR the next `nbits` reconciled bits with the pad and write the final-key
/// bits. Fails without consuming anything if the pad would be over-consumed.
///
/// # Safety
/// `p` must be a live handle, `input` must hold `ceil(nbits / 8)` bytes and
/// `output` `out_cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sk_pad_finalize(
    p: *mut SkStreamPad,
    input: *const u8,
    nbits: usize,
    output: *mut u8,
    out_cap: usize,
) -> SkStatus {
    guard(|| {
        let p = p.as_mut().ok_or_else(|| null("pad"))?;
        let a = bits_in(input, nbits)?;
        if out_cap < nbits.div_ceil(8) {
            return Err((SkStatus::BufferTooSmall, format!("output needs {} bytes", nbits.div_ceil(8))));
        }
        let k = p.0.finalize_next(&a).map_err(lift)?;
        bits_out(&k, output, out_cap)?;
        Ok(SkStatus::Ok)
    })
}

/// # Safety
/// `out` must be a valid pointer; release the handle with [`sk_ledger_free`].
#[no_mangle]
pub unsafe extern "C" fn sk_ledger_new(out: *mut *mut SkLedger) -> SkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(SkLedger(SecurityLedger::new())));
        Ok(SkStatus::Ok)
    })
}

/// # Safety
/// `l` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sk_ledger_free(l: *mut SkLedger) {
    if !l.is_null() {
        drop(Box::from_raw(l));
    }
}

/// Register a matrix with its per-session failure and total budget; writes
/// the number of sessions the budget allows.
///
/// # Safety
/// `l` must be a live handle, `matrix_id` a nul-terminated string and
/// `max_sessions` null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sk_ledger_register(
    l: *const SkLedger,
    matrix_id: *const c_char,
    eps_per_session: f64,
    total_budget: f64,
    max_sessions: *mut u64,
) -> SkStatus {
    guard(|| {
        let l = l.as_ref().ok_or_else(|| null("ledger"))?;
        let id = str_in(matrix_id)?;
        let e = l.0.register(id, eps_per_session, total_budget).map_err(lift)?;
        if !max_sessions.is_null() {
            *max_sessions = e.max_sessions;
        }
        Ok(SkStatus::Ok)
    })
}

/// Grant one session on a registered matrix; writes the updated use count.
///
/// # Safety
/// As for [`sk_ledger_register`].
#[no_mangle]
pub unsafe extern "C" fn sk_ledger_draw(
    l: *const SkLedger,
    matrix_id: *const c_char,
    sessions_used: *mut u64,
) -> SkStatus {
    guard(|| {
        let l = l.as_ref().ok_or_else(|| null("ledger"))?;
        let id = str_in(matrix_id)?;
        let used = privacy_amp::ledger_draw(&l.0, id).map_err(lift)?;
        if !sessions_used.is_null() {
            *sessions_used = used;
        }
        Ok(SkStatus::Ok)
    })
}
