//! C ABI over the detection library.
//!
//! Objects cross the boundary as opaque handles that the caller owns and
//! releases with the matching `*_free`. Every fallible call returns a
//! [`DwStatus`]; on failure a message is kept per thread and can be read
//! with [`dw_last_error`]. Panics never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dwrpca::evaluation::{confusion, metrics};
use dwrpca::optics::{self, OpticsSpec};
use dwrpca::pipeline::{compute_priors, detect, prepare, Detection, PipelineConfig};
use dwrpca::rpca::solve;
use dwrpca::scan::plan_s_path;
use dwrpca::weights::build_weight_with;
use dwrpca::{BinaryMask, Error, GrayImage, MeshType};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    Numeric = 6,
    Config = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DwMeshType {
    Square = 0,
    Circular = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DwMaskKind {
    Defect = 0,
    Broken = 1,
    Block = 2,
    BlockPrior = 3,
    BrokenPrior = 4,
}

pub struct DwImage(GrayImage);
pub struct DwMask(BinaryMask);
pub struct DwConfig(PipelineConfig);
pub struct DwDetection(Detection);

/// Confusion counts and rates; a rate with a zero denominator is NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DwMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub tpr: f64,
    pub fpr: f64,
    pub ppv: f64,
    pub npv: f64,
    pub f: f64,
}

/// Focal lengths in mm, pixel size and FOV in µm.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct DwOpticsSpec {
    pub f_objective: f64,
    pub f_tube: f64,
    pub f_internal: f64,
    pub f_relay: f64,
    pub pixel_size: f64,
    pub screen_to_sensor_ratio: f64,
    pub fov_diameter: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DwOpticsReport {
    pub optical_magnification: f64,
    pub digital_magnification: f64,
    pub pixel_pitch_um: f64,
    pub fov_diameter_um: f64,
    pub fov_pixels: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DwScanSummary {
    pub nodes: usize,
    pub cols: usize,
    pub rows: usize,
    pub overlap_um: f64,
    pub total_dwell_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(DwStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => DwStatus::Io,
            Error::UnsupportedFormat { .. } | Error::Codec(_) => DwStatus::Format,
            Error::DimensionMismatch { .. } => DwStatus::DimensionMismatch,
            Error::NonFinite { .. } | Error::SvdFailure | Error::DegenerateHistogram => DwStatus::Numeric,
            Error::Config(_) => DwStatus::Config,
            _ => DwStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DwStatus::NullPointer, format!("{what} is null"))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DwStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DwStatus::Panic
        }
    }
}

unsafe fn href<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DwStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn dw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by the library.
///
/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn dw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---- images -------------------------------------------------------------

/// Copies `height * width` row-major intensities in [0, 1].
///
/// # Safety
/// `data` must point to `height * width` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_image_new(height: usize, width: usize, data: *const f64, out: *mut *mut DwImage) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if data.is_null() {
            return Err(null("data"));
        }
        let n = height.checked_mul(width).ok_or_else(|| Fail(DwStatus::InvalidArgument, "size overflow".into()))?;
        let v = std::slice::from_raw_parts(data, n).to_vec();
        *out = boxed(DwImage(GrayImage::new(height, width, v)?));
        Ok(())
    })
}

/// Loads an 8-bit grayscale PNG or PGM.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_image_load(path: *const c_char, out: *mut *mut DwImage) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = cstr(path, "path")?;
        *out = boxed(DwImage(dwrpca::image::load_gray(path)?));
        Ok(())
    })
}

/// # Safety
/// `img` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_image_dims(img: *const DwImage, height: *mut usize, width: *mut usize) -> DwStatus {
    guard(|| {
        let img = href(img, "img")?;
        *out_ptr(height, "height")? = img.0.height();
        *out_ptr(width, "width")? = img.0.width();
        Ok(())
    })
}

/// Copies the pixels into `buf`, which must hold `len >= height * width` doubles.
///
/// # Safety
/// `img` must be a live handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dw_image_read(img: *const DwImage, buf: *mut f64, len: usize) -> DwStatus {
    guard(|| {
        let img = href(img, "img")?;
        copy_out(img.0.data(), buf, len)
    })
}

/// # Safety
/// `img` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn dw_image_free(img: *mut DwImage) {
    free(img)
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, len: usize) -> Result<(), Fail> {
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < src.len() {
        return Err(Fail(
            DwStatus::InvalidArgument,
            format!("buffer holds {len} elements, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

// ---- masks --------------------------------------------------------------

/// Builds a mask from bytes; nonzero is foreground.
///
/// # Safety
/// `data` must point to `height * width` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_mask_new(height: usize, width: usize, data: *const u8, out: *mut *mut DwMask) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if data.is_null() {
            return Err(null("data"));
        }
        let n = height.checked_mul(width).ok_or_else(|| Fail(DwStatus::InvalidArgument, "size overflow".into()))?;
        let v = std::slice::from_raw_parts(data, n).iter().map(|&b| b != 0).collect();
        *out = boxed(DwMask(BinaryMask::new(height, width, v)?));
        Ok(())
    })
}

/// # Safety
/// `mask` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_mask_dims(mask: *const DwMask, height: *mut usize, width: *mut usize) -> DwStatus {
    guard(|| {
        let m = href(mask, "mask")?;
        *out_ptr(height, "height")? = m.0.height();
        *out_ptr(width, "width")? = m.0.width();
        Ok(())
    })
}

/// Number of foreground pixels, or 0 for a null handle.
///
/// # Safety
/// `mask` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dw_mask_count(mask: *const DwMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.count_ones())
}

/// Copies the mask as 0/1 bytes into `buf` (`len >= height * width`).
///
/// # Safety
/// `mask` must be a live handle and `buf` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn dw_mask_read(mask: *const DwMask, buf: *mut u8, len: usize) -> DwStatus {
    guard(|| {
        let m = href(mask, "mask")?;
        let bytes: Vec<u8> = m.0.data().iter().map(|&b| b as u8).collect();
        copy_out(&bytes, buf, len)
    })
}

/// # Safety
/// `mask` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn dw_mask_free(mask: *mut DwMask) {
    free(mask)
}

// ---- configuration ------------------------------------------------------

fn mesh(m: DwMeshType) -> MeshType {
    match m {
        DwMeshType::Square => MeshType::Square,
        DwMeshType::Circular => MeshType::Circular,
    }
}

/// Built-in defaults for the mesh type.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_config_new(mesh_type: DwMeshType, out: *mut *mut DwConfig) -> DwStatus {
    guard(|| {
        *out_ptr(out, "out")? = boxed(DwConfig(PipelineConfig::for_mesh(mesh(mesh_type))));
        Ok(())
    })
}

/// Parses a flat TOML document; unknown keys are rejected.
///
/// # Safety
/// `text` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_config_from_toml(text: *const c_char, out: *mut *mut DwConfig) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(DwConfig(PipelineConfig::from_toml_str(cstr(text, "text")?)?));
        Ok(())
    })
}

/// Sets one key; `value` uses TOML value syntax (`0.2`, `"graded"`, `true`).
/// The handle is left untouched on failure.
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn dw_config_set(cfg: *mut DwConfig, key: *const c_char, value: *const c_char) -> DwStatus {
    guard(|| {
        let cfg = out_ptr(cfg, "cfg")?;
        let key = cstr(key, "key")?;
        let value = cstr(value, "value")?;
        let mut doc: toml::Table = format!("v = {value}")
            .parse()
            .map_err(|e: toml::de::Error| Fail(DwStatus::Config, format!("value for `{key}`: {e}")))?;
        let mut t = toml::Table::new();
        t.insert(key.to_string(), doc.remove("v").expect("parsed key present"));
        cfg.0 = cfg.0.with_overrides(t)?;
        Ok(())
    })
}

/// Effective configuration as JSON; release with [`dw_string_free`].
/// Returns null for a null handle.
///
/// # Safety
/// `cfg` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dw_config_json(cfg: *const DwConfig) -> *mut c_char {
    match cfg.as_ref() {
        Some(c) => CString::new(c.0.effective_json().to_string()).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `cfg` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn dw_config_free(cfg: *mut DwConfig) {
    free(cfg)
}

// ---- detection ----------------------------------------------------------

/// Full pipeline: priors, weights, decomposition and segmentation.
///
/// # Safety
/// `img` and `cfg` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_detect(img: *const DwImage, cfg: *const DwConfig, out: *mut *mut DwDetection) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let img = href(img, "img")?;
        let cfg = href(cfg, "cfg")?;
        *out = boxed(DwDetection(detect(&img.0, &cfg.0)?));
        Ok(())
    })
}

/// Returns a new mask handle holding a copy of the requested mask.
///
/// # Safety
/// `det` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_detection_mask(det: *const DwDetection, kind: DwMaskKind, out: *mut *mut DwMask) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let d = &href(det, "det")?.0;
        let m = match kind {
            DwMaskKind::Defect => &d.segmentation.defect_mask,
            DwMaskKind::Broken => &d.segmentation.broken_mask,
            DwMaskKind::Block => &d.segmentation.block_mask,
            DwMaskKind::BlockPrior => &d.priors.block,
            DwMaskKind::BrokenPrior => &d.priors.broken,
        };
        *out = boxed(DwMask(m.clone()));
        Ok(())
    })
}

/// Thresholds used for segmentation and the solver iteration count.
///
/// # Safety
/// `det` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_detection_stats(det: *const DwDetection, t1: *mut f64, t2: *mut f64, iterations: *mut usize) -> DwStatus {
    guard(|| {
        let d = &href(det, "det")?.0;
        *out_ptr(t1, "t1")? = d.segmentation.t1;
        *out_ptr(t2, "t2")? = d.segmentation.t2;
        *out_ptr(iterations, "iterations")? = d.decomposition.iterations();
        Ok(())
    })
}

/// Returns a new image handle holding the sparse component.
///
/// # Safety
/// `det` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_detection_sparse(det: *const DwDetection, out: *mut *mut DwImage) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(DwImage(href(det, "det")?.0.decomposition.e.clone()));
        Ok(())
    })
}

/// # Safety
/// `det` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn dw_detection_free(det: *mut DwDetection) {
    free(det)
}

/// Decomposition only (priors and weights from `cfg`). Each non-null out
/// pointer receives a new image handle; pass null to skip a component.
///
/// # Safety
/// `img` and `cfg` must be live handles; out pointers writable or null.
#[no_mangle]
pub unsafe extern "C" fn dw_solve(
    img: *const DwImage,
    cfg: *const DwConfig,
    low_rank: *mut *mut DwImage,
    sparse: *mut *mut DwImage,
    noise: *mut *mut DwImage,
    iterations: *mut usize,
) -> DwStatus {
    guard(|| {
        let cfg = &href(cfg, "cfg")?.0;
        cfg.validate()?;
        let img = prepare(&href(img, "img")?.0, cfg);
        let p = compute_priors(&img, cfg)?;
        let w = build_weight_with(&p.block, &p.broken, cfg.w_min, cfg.weight_mode, cfg.weight_blur_radius)?;
        let d = solve(&img, &w, &cfg.solver())?;
        if let Some(o) = iterations.as_mut() {
            *o = d.iterations();
        }
        for (dst, src) in [(low_rank, d.l), (sparse, d.e), (noise, d.n)] {
            if let Some(o) = dst.as_mut() {
                *o = boxed(DwImage(src));
            }
        }
        Ok(())
    })
}

// ---- metrics, optics, scan ----------------------------------------------

/// Pixel-level metrics of `pred` against `gt` with F-measure weight `gamma`.
///
/// # Safety
/// `pred` and `gt` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_metrics(pred: *const DwMask, gt: *const DwMask, gamma: f64, out: *mut DwMetrics) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if !(gamma > 0.0) {
            return Err(Fail(DwStatus::InvalidArgument, "gamma must be > 0".into()));
        }
        let c = confusion(&href(pred, "pred")?.0, &href(gt, "gt")?.0)?;
        let r = metrics(c, gamma);
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *out = DwMetrics {
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            tpr: nan(r.tpr),
            fpr: nan(r.fpr),
            ppv: nan(r.ppv),
            npv: nan(r.npv),
            f: nan(r.f),
        };
        Ok(())
    })
}

/// Fills `out` with the default optical parameters.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dw_optics_default(out: *mut DwOpticsSpec) -> DwStatus {
    guard(|| {
        let d = OpticsSpec::default();
        *out_ptr(out, "out")? = DwOpticsSpec {
            f_objective: d.f_objective,
            f_tube: d.f_tube,
            f_internal: d.f_internal,
            f_relay: d.f_relay,
            pixel_size: d.pixel_size,
            screen_to_sensor_ratio: d.screen_to_sensor_ratio,
            fov_diameter: d.fov_diameter,
        };
        Ok(())
    })
}

/// # Safety
/// `spec` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dw_optics(spec: *const DwOpticsSpec, out: *mut DwOpticsReport) -> DwStatus {
    guard(|| {
        let s = href(spec, "spec")?;
        let out = out_ptr(out, "out")?;
        let r = optics::report(&OpticsSpec {
            f_objective: s.f_objective,
            f_tube: s.f_tube,
            f_internal: s.f_internal,
            f_relay: s.f_relay,
            pixel_size: s.pixel_size,
            screen_to_sensor_ratio: s.screen_to_sensor_ratio,
            fov_diameter: s.fov_diameter,
        })?;
        *out = DwOpticsReport {
            optical_magnification: r.optical_magnification,
            digital_magnification: r.digital_magnification,
            pixel_pitch_um: r.pixel_pitch_um,
            fov_diameter_um: r.fov_diameter_um,
            fov_pixels: r.fov_pixels,
        };
        Ok(())
    })
}

/// Plans a serpentine scan. If `nodes_xy` is non-null it receives
/// `2 * nodes` doubles (x, y pairs in µm, scan order); `nodes_len` is its
/// capacity in doubles.
///
/// # Safety
/// `out` must be writable; `nodes_xy` valid for `nodes_len` doubles or null.
#[no_mangle]
pub unsafe extern "C" fn dw_scan_plan(
    width_um: f64,
    height_um: f64,
    step_um: f64,
    fov_diameter_um: f64,
    dwell_s: f64,
    out: *mut DwScanSummary,
    nodes_xy: *mut f64,
    nodes_len: usize,
) -> DwStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let p = plan_s_path((width_um, height_um), step_um, fov_diameter_um, dwell_s)?;
        *out = DwScanSummary {
            nodes: p.nodes.len(),
            cols: p.cols,
            rows: p.rows,
            overlap_um: p.overlap(),
            total_dwell_s: p.total_dwell(),
        };
        if !nodes_xy.is_null() {
            let flat: Vec<f64> = p.nodes.iter().flat_map(|&(x, y)| [x, y]).collect();
            copy_out(&flat, nodes_xy, nodes_len)?;
        }
        Ok(())
    })
}
