//! C ABI over the `inversemark` toolkit.
//!
//! Every object crosses the boundary as an opaque heap handle created by an
//! `im_*_new`/`im_*_load` function and released with the matching
//! `im_*_free`. Every fallible call returns an [`ImStatus`]; on failure the
//! message is kept per thread and read with [`im_last_error`].
//!
//! Images are planar `channels x height x width` arrays of `double` in
//! `[0, 1]`. Enum arguments must hold one of their declared values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use inversemark::backend::{Backend, CodecSpec, ModelSpec};
use inversemark::distortions::Distortion;
use inversemark::harness::{InjectorKind, KeyPlan};
use inversemark::imageio::{load_image, save_png};
use inversemark::{
    BitString, Error, Extraction, ImageTensor, Injector, KeyFile, RunConfig, Shape, Tensor3,
};

/// Result of every fallible call. The first four match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImStatus {
    Ok = 0,
    InvalidArgument = 1,
    NumericFailure = 2,
    IoError = 3,
    /// A Rust panic was caught at the boundary.
    Internal = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImInjector {
    GaussianShading = 0,
    TreeRing = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImAttack {
    /// `param`: quality in 1..=100.
    Jpeg = 0,
    /// `param`: kept side fraction in (0, 1].
    Crop = 1,
    /// `param`: Gaussian radius (sigma).
    Blur = 2,
    /// `param`: noise standard deviation.
    Noise = 3,
    /// `param`: brightness factor.
    Brightness = 4,
    /// `param`: rotation in degrees.
    Rotate = 5,
}

/// Outcome of [`im_extract`]. Fields that do not apply to the key's
/// injector are zero (or false).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ImExtraction {
    /// Bit accuracy, or 1/0 detection for Tree-Ring.
    pub score: f64,
    /// Number of payload bits read (Gaussian Shading).
    pub bit_count: usize,
    /// Tree-Ring statistics.
    pub p_value: f64,
    pub mu: f64,
    pub detected: bool,
}

/// A model, codec and run configuration.
pub struct ImPipeline {
    backend: Backend,
}

/// A Gaussian Shading or Tree-Ring key.
pub struct ImKey {
    injector: Injector,
}

pub struct ImImage {
    image: ImageTensor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ImStatus {
    match e.exit_code() {
        2 => ImStatus::NumericFailure,
        3 => ImStatus::IoError,
        _ => ImStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic for [`im_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Error>) -> ImStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ImStatus::Ok,
        Ok(Err(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            ImStatus::Internal
        }
    }
}

fn null(what: &str) -> Error {
    Error::InvalidArgument(format!("{what} is NULL"))
}

/// # Safety
/// `p` must be NULL or a valid NUL-terminated string.
unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Error> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Error::InvalidArgument(format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` must be NULL or a valid NUL-terminated string.
unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Error> {
    opt_str(p, what)?.ok_or_else(|| null(what))
}

/// # Safety
/// `p` must be NULL or point to a live `T`.
unsafe fn req_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Error> {
    p.as_ref().ok_or_else(|| null(what))
}

fn check_out<T>(out: *mut *mut T) -> Result<(), Error> {
    if out.is_null() {
        Err(null("output pointer"))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn im_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn im_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a pipeline.
///
/// `config_path` may be NULL for the defaults. `model` is `"zero"`,
/// `"linear"` or `"bridge:<addr>"` (NULL means `"linear"`); `codec` is
/// `"analytic"` or `"bridge:<addr>"` (NULL means `"analytic"`).
///
/// # Safety
/// String arguments must be NULL or valid NUL-terminated strings; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn im_pipeline_new(
    config_path: *const c_char,
    model: *const c_char,
    codec: *const c_char,
    out: *mut *mut ImPipeline,
) -> ImStatus {
    guard(|| {
        check_out(out)?;
        let config = match opt_str(config_path, "config_path")? {
            Some(p) => RunConfig::load(Path::new(p))?,
            None => RunConfig::default(),
        };
        let model: ModelSpec = opt_str(model, "model")?.unwrap_or("linear").parse()?;
        let codec: CodecSpec = opt_str(codec, "codec")?.unwrap_or("analytic").parse()?;
        let backend = Backend::new(&config, &model, &codec)?;
        *out = Box::into_raw(Box::new(ImPipeline { backend }));
        Ok(())
    })
}

/// # Safety
/// `p` must be NULL or a handle from [`im_pipeline_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn im_pipeline_free(p: *mut ImPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Image side length the pipeline expects.
///
/// # Safety
/// `p` must be a live pipeline handle and `side` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn im_pipeline_resolution(
    p: *const ImPipeline,
    side: *mut usize,
) -> ImStatus {
    guard(|| {
        let p = req_ref(p, "pipeline")?;
        *side.as_mut().ok_or_else(|| null("side"))? = p.backend.config().pipeline.resolution;
        Ok(())
    })
}

/// Generates the key for image `index` of the pipeline's run seed.
///
/// For Gaussian Shading, `payload` may hold `payload_len` bytes of 0/1
/// replacing the generated payload; pass NULL to keep it.
///
/// # Safety
/// `p` must be a live pipeline handle, `payload` NULL or readable for
/// `payload_len` bytes, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn im_key_generate(
    p: *const ImPipeline,
    injector: ImInjector,
    index: usize,
    payload: *const u8,
    payload_len: usize,
    out: *mut *mut ImKey,
) -> ImStatus {
    guard(|| {
        check_out(out)?;
        let p = req_ref(p, "pipeline")?;
        let kind = match injector {
            ImInjector::GaussianShading => InjectorKind::Gshade,
            ImInjector::TreeRing => InjectorKind::Treering,
        };
        let latent = p.backend.latent_shape()?;
        let mut injector = KeyPlan::new(kind, p.backend.config()).injector(index, latent)?;
        if !payload.is_null() {
            let Injector::GaussianShading(k) = &mut injector else {
                return Err(Error::InvalidArgument(
                    "tree-ring keys carry no payload".into(),
                ));
            };
            let bytes = std::slice::from_raw_parts(payload, payload_len);
            if bytes.iter().any(|&b| b > 1) {
                return Err(Error::InvalidArgument(
                    "payload bytes must be 0 or 1".into(),
                ));
            }
            k.payload = BitString::new(bytes.iter().map(|&b| b == 1).collect());
            k.check_latent(latent)?;
        }
        *out = Box::into_raw(Box::new(ImKey { injector }));
        Ok(())
    })
}

/// Reads a key file written by [`im_key_save`] or the CLI.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn im_key_load(path: *const c_char, out: *mut *mut ImKey) -> ImStatus {
    guard(|| {
        check_out(out)?;
        let injector = match KeyFile::load(Path::new(req_str(path, "path")?))? {
            KeyFile::GaussianShading(k) => Injector::GaussianShading(k),
            KeyFile::TreeRing(k) => Injector::TreeRing(k),
        };
        *out = Box::into_raw(Box::new(ImKey { injector }));
        Ok(())
    })
}

/// # Safety
/// `key` must be a live key handle and `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn im_key_save(key: *const ImKey, path: *const c_char) -> ImStatus {
    guard(|| {
        let file = match &req_ref(key, "key")?.injector {
            Injector::GaussianShading(k) => KeyFile::GaussianShading(k.clone()),
            Injector::TreeRing(k) => KeyFile::TreeRing(k.clone()),
        };
        file.save(Path::new(req_str(path, "path")?))
    })
}

/// Which injector a key drives.
///
/// # Safety
/// `key` must be a live key handle and `injector` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn im_key_injector(key: *const ImKey, injector: *mut ImInjector) -> ImStatus {
    guard(|| {
        let kind = match req_ref(key, "key")?.injector {
            Injector::GaussianShading(_) => ImInjector::GaussianShading,
            Injector::TreeRing(_) => ImInjector::TreeRing,
        };
        *injector.as_mut().ok_or_else(|| null("injector"))? = kind;
        Ok(())
    })
}

/// Copies the payload as 0/1 bytes. `len` receives the payload length; when
/// `cap` is smaller nothing is copied and InvalidArgument is returned.
/// Tree-Ring keys report a length of 0.
///
/// # Safety
/// `key` must be a live key handle, `bits` NULL or writable for `cap` bytes,
/// `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn im_key_payload(
    key: *const ImKey,
    bits: *mut u8,
    cap: usize,
    len: *mut usize,
) -> ImStatus {
    guard(|| {
        let payload = match &req_ref(key, "key")?.injector {
            Injector::GaussianShading(k) => k.payload.bits().to_vec(),
            Injector::TreeRing(_) => Vec::new(),
        };
        copy_bits(&payload, bits, cap, len)
    })
}

unsafe fn copy_bits(src: &[bool], bits: *mut u8, cap: usize, len: *mut usize) -> Result<(), Error> {
    *len.as_mut().ok_or_else(|| null("len"))? = src.len();
    if src.is_empty() {
        return Ok(());
    }
    if bits.is_null() || cap < src.len() {
        return Err(Error::InvalidArgument(format!(
            "bit buffer holds {cap} bytes, {} needed",
            src.len()
        )));
    }
    let dst = std::slice::from_raw_parts_mut(bits, src.len());
    for (d, &b) in dst.iter_mut().zip(src) {
        *d = u8::from(b);
    }
    Ok(())
}

/// # Safety
/// `key` must be NULL or a key handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn im_key_free(key: *mut ImKey) {
    if !key.is_null() {
        drop(Box::from_raw(key));
    }
}

/// Copies a planar image; values must lie in `[0, 1]`.
///
/// # Safety
/// `data` must be readable for `channels * height * width` doubles and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn im_image_new(
    channels: usize,
    height: usize,
    width: usize,
    data: *const f64,
    out: *mut *mut ImImage,
) -> ImStatus {
    guard(|| {
        check_out(out)?;
        if data.is_null() {
            return Err(null("data"));
        }
        let shape = Shape::new(channels, height, width);
        let values = std::slice::from_raw_parts(data, shape.len()).to_vec();
        let image = ImageTensor::new(Tensor3::new(shape, values)?)?;
        *out = Box::into_raw(Box::new(ImImage { image }));
        Ok(())
    })
}

/// Decodes an image file (PNG or JPEG).
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn im_image_load(path: *const c_char, out: *mut *mut ImImage) -> ImStatus {
    guard(|| {
        check_out(out)?;
        let image = load_image(Path::new(req_str(path, "path")?))?;
        *out = Box::into_raw(Box::new(ImImage { image }));
        Ok(())
    })
}

/// Writes an 8-bit PNG.
///
/// # Safety
/// `img` must be a live image handle and `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn im_image_save_png(img: *const ImImage, path: *const c_char) -> ImStatus {
    guard(|| {
        save_png(
            &req_ref(img, "image")?.image,
            Path::new(req_str(path, "path")?),
        )
    })
}

/// # Safety
/// `img` must be a live image handle; the three outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn im_image_shape(
    img: *const ImImage,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> ImStatus {
    guard(|| {
        let s = req_ref(img, "image")?.image.shape();
        for (p, v) in [(channels, s.channels), (height, s.height), (width, s.width)] {
            *p.as_mut().ok_or_else(|| null("shape output"))? = v;
        }
        Ok(())
    })
}

/// Copies the planar pixel data into `data`, which must hold at least
/// `channels * height * width` doubles (`cap`).
///
/// # Safety
/// `img` must be a live image handle and `data` writable for `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn im_image_data(
    img: *const ImImage,
    data: *mut f64,
    cap: usize,
) -> ImStatus {
    guard(|| {
        let src = req_ref(img, "image")?.image.tensor().data();
        if data.is_null() || cap < src.len() {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer holds {cap} values, {} needed",
                src.len()
            )));
        }
        std::slice::from_raw_parts_mut(data, src.len()).copy_from_slice(src);
        Ok(())
    })
}

/// # Safety
/// `img` must be NULL or an image handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn im_image_free(img: *mut ImImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Watermarks `cover` (already at the pipeline resolution). `seed` drives
/// the initial noise. `psnr` and `ssim` may be NULL.
///
/// # Safety
/// Handles must be live; `out` a valid pointer; `psnr`/`ssim` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn im_embed(
    p: *const ImPipeline,
    key: *const ImKey,
    cover: *const ImImage,
    seed: u64,
    out: *mut *mut ImImage,
    psnr: *mut f64,
    ssim: *mut f64,
) -> ImStatus {
    guard(|| {
        check_out(out)?;
        let p = req_ref(p, "pipeline")?;
        let key = req_ref(key, "key")?;
        let cover = req_ref(cover, "cover")?;
        let result = p
            .backend
            .pipeline()?
            .embed(&cover.image, &key.injector, seed)?;
        if let Some(v) = psnr.as_mut() {
            *v = result.fidelity.psnr;
        }
        if let Some(v) = ssim.as_mut() {
            *v = result.fidelity.ssim;
        }
        *out = Box::into_raw(Box::new(ImImage {
            image: result.watermarked,
        }));
        Ok(())
    })
}

/// Inverts `img` and reads the watermark. For Gaussian Shading keys the
/// recovered bits are copied into `bits` when it is non-NULL and `cap` is
/// large enough.
///
/// # Safety
/// Handles must be live; `result` a valid pointer; `bits` NULL or writable
/// for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn im_extract(
    p: *const ImPipeline,
    key: *const ImKey,
    img: *const ImImage,
    result: *mut ImExtraction,
    bits: *mut u8,
    cap: usize,
) -> ImStatus {
    guard(|| {
        let result = result.as_mut().ok_or_else(|| null("result"))?;
        let p = req_ref(p, "pipeline")?;
        let key = req_ref(key, "key")?;
        let img = req_ref(img, "image")?;
        let x = p.backend.pipeline()?.extract(&img.image, &key.injector)?;
        let mut r = ImExtraction {
            score: x.score(),
            ..ImExtraction::default()
        };
        match &x.outcome {
            Extraction::Bits { bits: b, .. } => {
                r.bit_count = b.len();
                if !bits.is_null() {
                    let mut n = 0;
                    copy_bits(b.bits(), bits, cap, &mut n)?;
                }
            }
            Extraction::Detection(d) => {
                r.p_value = d.p_value;
                r.mu = d.mu;
                r.detected = d.detected;
            }
        }
        *result = r;
        Ok(())
    })
}

/// Applies one distortion. `seed` drives the stochastic ones (crop, noise).
///
/// # Safety
/// `img` must be a live image handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn im_attack(
    img: *const ImImage,
    op: ImAttack,
    param: f64,
    seed: u64,
    out: *mut *mut ImImage,
) -> ImStatus {
    guard(|| {
        check_out(out)?;
        let img = req_ref(img, "image")?;
        let d = match op {
            ImAttack::Jpeg => {
                if !((1.0..=100.0).contains(&param) && param.fract() == 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "JPEG quality {param} not in 1..=100"
                    )));
                }
                Distortion::Jpeg {
                    quality: param as u8,
                }
            }
            ImAttack::Crop => Distortion::Crop { ratio: param },
            ImAttack::Blur => Distortion::Blur { radius: param },
            ImAttack::Noise => Distortion::Noise { std: param },
            ImAttack::Brightness => Distortion::Brightness { factor: param },
            ImAttack::Rotate => Distortion::Rotate { degrees: param },
        };
        let image = d.apply(&img.image, seed)?;
        *out = Box::into_raw(Box::new(ImImage { image }));
        Ok(())
    })
}
