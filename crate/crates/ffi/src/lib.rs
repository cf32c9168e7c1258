//! C ABI over the slide reader, Deep Zoom tiler and annotation geometry.
//!
//! Every fallible call returns a `PimipStatus`; on failure the message is
//! kept per thread and read with `pimip_last_error_message`. Buffers the
//! library hands out are released with the matching `*_free` call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pimip::annotation::{close_gaps, rasterize_polygon, GapPolicy, PointerType, StrokePoint, StrokeSegment};
use pimip::analysis::otsu_threshold;
use pimip::slide_io::{Slide, TileFormat};
use pimip::tiler::{dz_level_count, dz_level_dims, render_tile, tile_rect, DeepZoomLayout};
use pimip::{Point, Rect};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PimipStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    OutOfRange = 4,
    ParseError = 5,
    Unsupported = 6,
    IoError = 7,
    Panic = 8,
}

/// Open slide. Only ever seen by C through a pointer.
pub struct PimipSlide {
    slide: Slide,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PimipPoint {
    pub x: f64,
    pub y: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PimipRect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PimipStrokePoint {
    pub x: f64,
    pub y: f64,
    /// Milliseconds since the stroke started.
    pub t: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PimipSegment {
    pub points: *const PimipStrokePoint,
    pub len: usize,
    /// Viewer zoom at capture; scales the distance threshold.
    pub device_zoom: f64,
}

/// Byte buffer owned by the library.
#[repr(C)]
#[derive(Debug)]
pub struct PimipBytes {
    pub data: *mut u8,
    pub len: usize,
}

/// Polylines stored back to back: polyline `i` has `lengths[i]` points.
#[repr(C)]
#[derive(Debug)]
pub struct PimipPolylines {
    pub points: *mut PimipPoint,
    pub point_count: usize,
    pub lengths: *mut usize,
    pub count: usize,
}

/// Row-major mask over `bounds`, one byte (0 or 1) per pixel.
#[repr(C)]
#[derive(Debug)]
pub struct PimipMask {
    pub bounds: PimipRect,
    pub bits: *mut u8,
    pub len: usize,
}

struct Failure(PimipStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_for(code: &str) -> PimipStatus {
    match code {
        "IoFailure" => PimipStatus::IoError,
        "BadMagic" | "UnsupportedVersion" | "CyclicChain" | "TruncatedFile" | "UnsupportedTagType"
        | "InvalidDirectory" | "MissingManifest" | "ManifestMismatch" | "CodecError" => PimipStatus::ParseError,
        "LevelOutOfRange" | "TileOutOfRange" | "RegionOutOfBounds" | "OutOfBounds" => PimipStatus::OutOfRange,
        "UnsupportedCompression" | "UnsupportedFormat" => PimipStatus::Unsupported,
        _ => PimipStatus::InvalidArgument,
    }
}

macro_rules! fail_with {
    ($e:expr) => {{
        let e = $e;
        Failure(status_for(e.code()), format!("{}: {e}", e.code()))
    }};
}

fn null(what: &str) -> Failure {
    Failure(PimipStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PimipStatus::InvalidArgument, msg.into())
}

/// Run `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PimipStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PimipStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            PimipStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PimipStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slide_arg<'a>(p: *const PimipSlide) -> Result<&'a Slide, Failure> {
    p.as_ref().map(|s| &s.slide).ok_or_else(|| null("slide"))
}

fn leak_vec<T>(v: Vec<T>) -> (*mut T, usize) {
    let b = v.into_boxed_slice();
    let len = b.len();
    (Box::into_raw(b) as *mut T, len)
}

unsafe fn free_vec<T>(p: *mut T, len: usize) {
    if !p.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(p, len)));
    }
}

fn to_rect(r: Rect) -> PimipRect {
    PimipRect {
        x: r.x,
        y: r.y,
        w: r.w,
        h: r.h,
    }
}

// Errors

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pimip_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn pimip_clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn pimip_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// Slides

/// Open a pyramidal TIFF or a pyramid folder.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn pimip_slide_open(path: *const c_char, out: *mut *mut PimipSlide) -> PimipStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let slide = Slide::open(Path::new(path)).map_err(|e| fail_with!(e))?;
        *out = Box::into_raw(Box::new(PimipSlide { slide }));
        Ok(())
    })
}

/// # Safety
/// `slide` must come from `pimip_slide_open` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pimip_slide_free(slide: *mut PimipSlide) {
    if !slide.is_null() {
        drop(Box::from_raw(slide));
    }
}

/// # Safety
/// `slide` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pimip_slide_level_count(slide: *const PimipSlide, out: *mut u32) -> PimipStatus {
    guard(|| {
        let s = slide_arg(slide)?;
        *out_arg(out, "out")? = s.level_count() as u32;
        Ok(())
    })
}

/// Width, height and channel count of `level`.
///
/// # Safety
/// `slide` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn pimip_slide_level_info(
    slide: *const PimipSlide,
    level: u32,
    width: *mut u32,
    height: *mut u32,
    channels: *mut u8,
) -> PimipStatus {
    guard(|| {
        let s = slide_arg(slide)?;
        let info = s.descriptor().level(level as usize).map_err(|e| fail_with!(e))?;
        *out_arg(width, "width")? = info.width;
        *out_arg(height, "height")? = info.height;
        *out_arg(channels, "channels")? = s.channels();
        Ok(())
    })
}

/// Scan magnification, or 0 when the file does not record one.
///
/// # Safety
/// `slide` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pimip_slide_magnification(slide: *const PimipSlide, out: *mut f64) -> PimipStatus {
    guard(|| {
        let s = slide_arg(slide)?;
        *out_arg(out, "out")? = s.descriptor().base_magnification.unwrap_or(0.0);
        Ok(())
    })
}

/// Interleaved pixels of a level-space rectangle. Areas outside the
/// level are white.
///
/// # Safety
/// `slide` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pimip_slide_read_region(
    slide: *const PimipSlide,
    level: u32,
    x: i64,
    y: i64,
    w: u32,
    h: u32,
    out: *mut PimipBytes,
) -> PimipStatus {
    guard(|| {
        let s = slide_arg(slide)?;
        let out = out_arg(out, "out")?;
        let px = s.read_region(level as usize, x, y, w, h).map_err(|e| fail_with!(e))?;
        let (data, len) = leak_vec(px.data().to_vec());
        *out = PimipBytes { data, len };
        Ok(())
    })
}

/// Encoded Deep Zoom tile; `format` is `png` or `jpg`.
///
/// # Safety
/// `slide` must be a live handle, `format` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pimip_render_tile(
    slide: *const PimipSlide,
    tile_size: u32,
    overlap: u32,
    dz_level: u32,
    col: u32,
    row: u32,
    format: *const c_char,
    out: *mut PimipBytes,
) -> PimipStatus {
    guard(|| {
        let s = slide_arg(slide)?;
        let out = out_arg(out, "out")?;
        let format = str_arg(format, "format")?;
        let layout = DeepZoomLayout {
            tile_size,
            overlap,
            format: TileFormat::Png,
        };
        let bytes = render_tile(s, &layout, dz_level, col, row, format).map_err(|e| fail_with!(e))?;
        let (data, len) = leak_vec(bytes);
        *out = PimipBytes { data, len };
        Ok(())
    })
}

/// # Safety
/// `bytes` must be null or filled by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn pimip_bytes_free(bytes: *mut PimipBytes) {
    if let Some(b) = bytes.as_mut() {
        free_vec(b.data, b.len);
        b.data = ptr::null_mut();
        b.len = 0;
    }
}

// Deep Zoom geometry

/// Number of Deep Zoom levels for a base image.
#[no_mangle]
pub extern "C" fn pimip_dz_level_count(width: u32, height: u32) -> u32 {
    dz_level_count(width, height)
}

/// # Safety
/// The out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn pimip_dz_level_dims(
    width: u32,
    height: u32,
    dz_level: u32,
    out_width: *mut u32,
    out_height: *mut u32,
) -> PimipStatus {
    guard(|| {
        let (w, h) = dz_level_dims(width, height, dz_level).map_err(|e| fail_with!(e))?;
        *out_arg(out_width, "out_width")? = w;
        *out_arg(out_height, "out_height")? = h;
        Ok(())
    })
}

/// Level-space rectangle of a tile, overlaps included.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pimip_dz_tile_rect(
    level_width: u32,
    level_height: u32,
    tile_size: u32,
    overlap: u32,
    col: u32,
    row: u32,
    out: *mut PimipRect,
) -> PimipStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let layout = DeepZoomLayout {
            tile_size,
            overlap,
            format: TileFormat::Png,
        };
        let r = tile_rect(0, col, row, &layout, (level_width, level_height)).map_err(|e| fail_with!(e))?;
        *out = to_rect(r);
        Ok(())
    })
}

// Analysis

/// Otsu threshold of a 256-bin histogram.
///
/// # Safety
/// `hist` must point to 256 readable counts; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pimip_otsu_threshold(hist: *const u64, out: *mut u8) -> PimipStatus {
    guard(|| {
        if hist.is_null() {
            return Err(null("hist"));
        }
        let h: &[u64; 256] = &*(hist as *const [u64; 256]);
        *out_arg(out, "out")? = otsu_threshold(h);
        Ok(())
    })
}

// Annotation geometry

/// Join pen-lift gaps no longer than `tau_ms` and `delta_px`.
///
/// # Safety
/// `segments` must point to `count` segments whose point arrays are
/// readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pimip_close_gaps(
    segments: *const PimipSegment,
    count: usize,
    tau_ms: f64,
    delta_px: f64,
    out: *mut PimipPolylines,
) -> PimipStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let mut segs = Vec::with_capacity(count);
        for s in slice_arg(segments, count, "segments")? {
            let points = slice_arg(s.points, s.len, "segment points")?
                .iter()
                .map(|p| StrokePoint::new(p.x, p.y, p.t))
                .collect();
            segs.push(StrokeSegment::new(points, PointerType::Mouse, s.device_zoom));
        }
        let lines = close_gaps(&segs, &GapPolicy { tau_ms, delta_px }).map_err(|e| fail_with!(e))?;
        let lengths: Vec<usize> = lines.iter().map(Vec::len).collect();
        let points: Vec<PimipPoint> = lines.into_iter().flatten().map(|p| PimipPoint { x: p.x, y: p.y }).collect();
        let (points, point_count) = leak_vec(points);
        let (lengths, count) = leak_vec(lengths);
        *out = PimipPolylines {
            points,
            point_count,
            lengths,
            count,
        };
        Ok(())
    })
}

/// # Safety
/// `lines` must be null or filled by `pimip_close_gaps` and not freed
/// before.
#[no_mangle]
pub unsafe extern "C" fn pimip_polylines_free(lines: *mut PimipPolylines) {
    if let Some(l) = lines.as_mut() {
        free_vec(l.points, l.point_count);
        free_vec(l.lengths, l.count);
        *l = PimipPolylines {
            points: ptr::null_mut(),
            point_count: 0,
            lengths: ptr::null_mut(),
            count: 0,
        };
    }
}

/// Fill a closed ring (first point repeated last) with the nonzero
/// winding rule, clipped to `clip`. Boundary pixels are set.
///
/// # Safety
/// `ring` must point to `len` points; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pimip_rasterize_polygon(
    ring: *const PimipPoint,
    len: usize,
    clip: PimipRect,
    out: *mut PimipMask,
) -> PimipStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if clip.w < 0 || clip.h < 0 {
            return Err(invalid("clip has negative size"));
        }
        let ring: Vec<Point> = slice_arg(ring, len, "ring")?.iter().map(|p| Point::new(p.x, p.y)).collect();
        let mask = rasterize_polygon(&ring, Rect::new(clip.x, clip.y, clip.w, clip.h)).map_err(|e| fail_with!(e))?;
        let bits: Vec<u8> = mask.to_bits().into_iter().map(u8::from).collect();
        let (bits, len) = leak_vec(bits);
        *out = PimipMask {
            bounds: to_rect(mask.bounds),
            bits,
            len,
        };
        Ok(())
    })
}

/// # Safety
/// `mask` must be null or filled by `pimip_rasterize_polygon` and not
/// freed before.
#[no_mangle]
pub unsafe extern "C" fn pimip_mask_free(mask: *mut PimipMask) {
    if let Some(m) = mask.as_mut() {
        free_vec(m.bits, m.len);
        m.bits = ptr::null_mut();
        m.len = 0;
    }
}
