//! C ABI over `xlalign`.
//!
//! Conventions:
//! * every fallible call returns an [`XlStatus`]; outputs go through pointers
//!   that are written only on success;
//! * on failure, [`xl_last_error_message`] describes the error (per thread,
//!   valid until the next failing call on that thread);
//! * dumps and profiles are opaque handles released with their `_free`
//!   function; freeing NULL is a no-op;
//! * matrices are row-major and contiguous.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use xlalign::alignment::{self, AlignmentOptions, AlignmentProfile, LayerPooling};
use xlalign::dumpio::{self, DumpManifest, EmbeddingDump, LanguageLabel, Pooling};
use xlalign::pooling;
use xlalign::stats;
use xlalign::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Validation = 4,
    InvalidArgument = 5,
    InsufficientData = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XlPooling {
    LastToken = 0,
    WeightedAverage = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XlLayerPooling {
    Mean = 0,
    Max = 1,
}

impl From<XlPooling> for Pooling {
    fn from(p: XlPooling) -> Self {
        match p {
            XlPooling::LastToken => Pooling::LastToken,
            XlPooling::WeightedAverage => Pooling::WeightedAverage,
        }
    }
}

impl From<XlLayerPooling> for LayerPooling {
    fn from(p: XlLayerPooling) -> Self {
        match p {
            XlLayerPooling::Mean => LayerPooling::Mean,
            XlLayerPooling::Max => LayerPooling::Max,
        }
    }
}

/// Opaque handle to a validated embedding dump.
pub struct XlDump {
    inner: EmbeddingDump,
    language: CString,
    model_id: CString,
}

/// Opaque handle to a per-layer alignment profile.
pub struct XlProfile {
    inner: AlignmentProfile,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> XlStatus {
    match e {
        Error::Io { .. } => XlStatus::Io,
        Error::InvalidArgument(_) | Error::DimensionMismatch(_) | Error::EmptySentence | Error::EmptyLayerSet => {
            XlStatus::InvalidArgument
        }
        Error::InsufficientData(_) => XlStatus::InsufficientData,
        _ => XlStatus::Validation,
    }
}

struct Fail(XlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(XlStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> XlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => XlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            XlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(XlStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn matrix(data: &[f32], rows: usize, cols: usize) -> Result<ndarray::ArrayView2<'_, f32>, Fail> {
    ndarray::ArrayView2::from_shape((rows, cols), data)
        .map_err(|e| Fail(XlStatus::InvalidArgument, e.to_string()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn xl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failing call on this thread, or NULL.
#[no_mangle]
pub extern "C" fn xl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads and validates the dump whose manifest is at `manifest_path`.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn xl_dump_read(manifest_path: *const c_char, out: *mut *mut XlDump) -> XlStatus {
    guard(|| {
        let path = str_arg(manifest_path, "manifest_path")?;
        let out = out_arg(out, "out")?;
        let dump = dumpio::read_dump(Path::new(path))?;
        let m = dump.manifest();
        let language = CString::new(m.language.as_str()).expect("labels are ASCII");
        let model_id = CString::new(m.model_id.replace('\0', "")).expect("nul bytes removed");
        *out = Box::into_raw(Box::new(XlDump {
            inner: dump,
            language,
            model_id,
        }));
        Ok(())
    })
}

/// # Safety
/// `dump` must come from [`xl_dump_read`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn xl_dump_free(dump: *mut XlDump) {
    if !dump.is_null() {
        drop(Box::from_raw(dump));
    }
}

/// # Safety
/// `dump` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn xl_dump_layer_count(dump: *const XlDump) -> usize {
    dump.as_ref().map_or(0, |d| d.inner.manifest().layer_count)
}

/// # Safety
/// `dump` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn xl_dump_sentence_count(dump: *const XlDump) -> usize {
    dump.as_ref().map_or(0, |d| d.inner.manifest().sentence_count)
}

/// # Safety
/// `dump` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn xl_dump_dim(dump: *const XlDump) -> usize {
    dump.as_ref().map_or(0, |d| d.inner.manifest().dim)
}

/// Language label, owned by the handle.
///
/// # Safety
/// `dump` must be a live handle or NULL (returns NULL).
#[no_mangle]
pub unsafe extern "C" fn xl_dump_language(dump: *const XlDump) -> *const c_char {
    dump.as_ref().map_or(ptr::null(), |d| d.language.as_ptr())
}

/// Model id, owned by the handle.
///
/// # Safety
/// `dump` must be a live handle or NULL (returns NULL).
#[no_mangle]
pub unsafe extern "C" fn xl_dump_model_id(dump: *const XlDump) -> *const c_char {
    dump.as_ref().map_or(ptr::null(), |d| d.model_id.as_ptr())
}

/// Writes a sentence-level dump. `data` holds `layer_count` consecutive
/// `sentence_count x dim` row-major matrices.
///
/// # Safety
/// String arguments must be NUL-terminated; `data` must hold
/// `layer_count * sentence_count * dim` floats.
#[no_mangle]
pub unsafe extern "C" fn xl_dump_write_sentence(
    manifest_path: *const c_char,
    model_id: *const c_char,
    language: *const c_char,
    corpus_id: *const c_char,
    pooling: XlPooling,
    layer_count: usize,
    sentence_count: usize,
    dim: usize,
    data: *const f32,
) -> XlStatus {
    guard(|| {
        let path = str_arg(manifest_path, "manifest_path")?;
        let model_id = str_arg(model_id, "model_id")?;
        let language = LanguageLabel::new(str_arg(language, "language")?)?;
        let corpus_id = str_arg(corpus_id, "corpus_id")?;
        let per_layer = sentence_count
            .checked_mul(dim)
            .ok_or_else(|| Fail(XlStatus::InvalidArgument, "size overflow".into()))?;
        let total = per_layer
            .checked_mul(layer_count)
            .ok_or_else(|| Fail(XlStatus::InvalidArgument, "size overflow".into()))?;
        let data = slice_arg(data, total, "data")?;
        let manifest = DumpManifest::sentence(
            model_id,
            language,
            corpus_id,
            pooling.into(),
            layer_count,
            sentence_count,
            dim,
        );
        let layers = data
            .chunks_exact(per_layer.max(1))
            .map(|c| matrix(c, sentence_count, dim).map(|m| m.to_owned()))
            .collect::<Result<Vec<_>, _>>()?;
        dumpio::write_dump(&manifest, &layers, Path::new(path))?;
        Ok(())
    })
}

/// Cosine of two `dim`-vectors; `out_degenerate` (may be NULL) is set when
/// either norm is below 1e-12, in which case the value is 0.
///
/// # Safety
/// `u` and `v` must hold `dim` floats; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xl_cosine(
    u: *const f32,
    v: *const f32,
    dim: usize,
    out_value: *mut f64,
    out_degenerate: *mut bool,
) -> XlStatus {
    guard(|| {
        let u = slice_arg(u, dim, "u")?;
        let v = slice_arg(v, dim, "v")?;
        let out = out_arg(out_value, "out_value")?;
        let c = alignment::cosine(u, v)?;
        *out = c.value;
        if let Some(d) = out_degenerate.as_mut() {
            *d = c.degenerate;
        }
        Ok(())
    })
}

/// Score of an `n x n` row-major similarity matrix: the fraction of diagonal
/// entries strictly greater than all other entries of their row and column.
///
/// # Safety
/// `values` must hold `n * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xl_layer_score(values: *const f64, n: usize, out: *mut f64) -> XlStatus {
    guard(|| {
        let len = n
            .checked_mul(n)
            .ok_or_else(|| Fail(XlStatus::InvalidArgument, "size overflow".into()))?;
        let data = slice_arg(values, len, "values")?;
        let out = out_arg(out, "out")?;
        let m = ndarray::ArrayView2::from_shape((n, n), data)
            .map_err(|e| Fail(XlStatus::InvalidArgument, e.to_string()))?;
        *out = alignment::layer_hits(m)?.value();
        Ok(())
    })
}

/// Builds the cosine matrix of two `n x d` embedding matrices (`a` rows
/// against `b` rows) and scores it.
///
/// # Safety
/// `a` and `b` must hold `n * d` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xl_embedding_layer_score(
    a: *const f32,
    b: *const f32,
    n: usize,
    d: usize,
    out: *mut f64,
) -> XlStatus {
    guard(|| {
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Fail(XlStatus::InvalidArgument, "size overflow".into()))?;
        let a = matrix(slice_arg(a, len, "a")?, n, d)?;
        let b = matrix(slice_arg(b, len, "b")?, n, d)?;
        let out = out_arg(out, "out")?;
        let c = alignment::similarity_matrix(a, b)?;
        *out = alignment::layer_score(&c)?;
        Ok(())
    })
}

/// Scores `lang` against `pivot` at every layer. `subset` (may be NULL when
/// `subset_len` is 0) restricts the headline pooled score to those layers.
///
/// # Safety
/// Handles must be live; `subset` must hold `subset_len` entries; `out`
/// must be writable. Free the result with [`xl_profile_free`].
#[no_mangle]
pub unsafe extern "C" fn xl_alignment(
    pivot: *const XlDump,
    lang: *const XlDump,
    pooling: XlPooling,
    layer_pool: XlLayerPooling,
    subset: *const usize,
    subset_len: usize,
    out: *mut *mut XlProfile,
) -> XlStatus {
    guard(|| {
        let pivot = pivot.as_ref().ok_or_else(|| null("pivot"))?;
        let lang = lang.as_ref().ok_or_else(|| null("lang"))?;
        let subset = slice_arg(subset, subset_len, "subset")?;
        let out = out_arg(out, "out")?;
        let opts = AlignmentOptions {
            pooling: pooling.into(),
            layer_pool: layer_pool.into(),
            subset: (!subset.is_empty()).then(|| subset.to_vec()),
        };
        let profile = alignment::language_alignment(&pivot.inner, &lang.inner, &opts)?;
        *out = Box::into_raw(Box::new(XlProfile { inner: profile }));
        Ok(())
    })
}

/// # Safety
/// `profile` must come from [`xl_alignment`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn xl_profile_free(profile: *mut XlProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// # Safety
/// `profile` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn xl_profile_layer_count(profile: *const XlProfile) -> usize {
    profile.as_ref().map_or(0, |p| p.inner.per_layer_scores.len())
}

/// Copies up to `len` per-layer scores into `out`.
///
/// # Safety
/// `profile` must be live; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn xl_profile_layer_scores(profile: *const XlProfile, out: *mut f64, len: usize) -> XlStatus {
    guard(|| {
        let p = profile.as_ref().ok_or_else(|| null("profile"))?;
        if len == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = slice::from_raw_parts_mut(out, len);
        for (d, s) in dst.iter_mut().zip(&p.inner.per_layer_scores) {
            *d = *s;
        }
        Ok(())
    })
}

/// Mean over all layers, max over all layers, and the headline score
/// (requested pooling, over the subset if one was given). Any output may be
/// NULL.
///
/// # Safety
/// `profile` must be live; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn xl_profile_pooled(
    profile: *const XlProfile,
    out_mean: *mut f64,
    out_max: *mut f64,
    out_score: *mut f64,
) -> XlStatus {
    guard(|| {
        let p = &profile.as_ref().ok_or_else(|| null("profile"))?.inner;
        for (dst, v) in [(out_mean, p.pooled_mean), (out_max, p.pooled_max), (out_score, p.score)] {
            if let Some(d) = dst.as_mut() {
                *d = v;
            }
        }
        Ok(())
    })
}

/// Probability that a random `n x n` similarity matrix scores at least `k/n`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xl_random_baseline(n: u64, k: u64, out: *mut f64) -> XlStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = stats::random_baseline(n, k)?;
        Ok(())
    })
}

unsafe fn pairs(xs: *const f64, ys: *const f64, len: usize) -> Result<Vec<(f64, f64)>, Fail> {
    let xs: &[f64] = slice_arg(xs, len, "xs")?;
    let ys: &[f64] = slice_arg(ys, len, "ys")?;
    Ok(xs.iter().copied().zip(ys.iter().copied()).collect())
}

/// Pearson r and its two-sided p-value.
///
/// # Safety
/// `xs`, `ys` must hold `len` doubles; outputs must be writable (`out_p`
/// may be NULL).
#[no_mangle]
pub unsafe extern "C" fn xl_pearson(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    out_r: *mut f64,
    out_p: *mut f64,
) -> XlStatus {
    guard(|| {
        let pts = pairs(xs, ys, len)?;
        let out_r = out_arg(out_r, "out_r")?;
        let p = stats::pearson(&pts)?;
        *out_r = p.r;
        if let Some(o) = out_p.as_mut() {
            *o = p.p_value;
        }
        Ok(())
    })
}

/// Least-squares line through `(xs[i], ys[i])`.
///
/// # Safety
/// `xs`, `ys` must hold `len` doubles; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn xl_fit_line(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    out_slope: *mut f64,
    out_intercept: *mut f64,
) -> XlStatus {
    guard(|| {
        let pts = pairs(xs, ys, len)?;
        let slope = out_arg(out_slope, "out_slope")?;
        let intercept = out_arg(out_intercept, "out_intercept")?;
        let f = stats::fit_line(&pts)?;
        *slope = f.slope;
        *intercept = f.intercept;
        Ok(())
    })
}

/// Pools `t x d` token embeddings into one `d`-vector.
///
/// # Safety
/// `tokens` must hold `t * d` floats and `out` must hold `d` floats.
#[no_mangle]
pub unsafe extern "C" fn xl_pool_tokens(
    tokens: *const f32,
    t: usize,
    d: usize,
    method: XlPooling,
    out: *mut f32,
) -> XlStatus {
    guard(|| {
        let len = t
            .checked_mul(d)
            .ok_or_else(|| Fail(XlStatus::InvalidArgument, "size overflow".into()))?;
        let m = matrix(slice_arg(tokens, len, "tokens")?, t, d)?;
        let pooled = pooling::pool(m, method.into())?;
        if d == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        slice::from_raw_parts_mut(out, d).copy_from_slice(pooled.as_slice().expect("contiguous"));
        Ok(())
    })
}
