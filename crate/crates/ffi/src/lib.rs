//! C ABI over the splatview library.
//!
//! Every function returns an [`SvStatus`]; on failure a message is kept per
//! thread and can be read with [`sv_last_error_message`]. Handles are opaque
//! and owned by the caller until passed to the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use splatview::io::{gen_synthetic, load_scene_with_head, save_scene_with_head, Pose, Preset, SyntheticSpec};
use splatview::render::{render_novel, select_views, LinearHead, RenderOptions};
use splatview::{Error, Scene};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SvStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    Unsupported = 4,
    NonFinite = 5,
    BehindCamera = 6,
    Panic = 7,
}

/// A loaded or generated scene plus its color head.
pub struct SvScene {
    scene: Scene,
    head: LinearHead,
}

/// An RGB image, row-major, interleaved, values in `[0, 1]`.
pub struct SvImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SvStatus {
    match e {
        Error::InvalidInput(_) => SvStatus::InvalidArgument,
        Error::BehindCamera { .. } => SvStatus::BehindCamera,
        Error::Io { .. } => SvStatus::Io,
        Error::Parse { .. } => SvStatus::Parse,
        Error::UnsupportedFormat { .. } => SvStatus::Unsupported,
        Error::NonFinite { .. } => SvStatus::NonFinite,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Error>) -> SvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SvStatus::Ok,
        Ok(Err(e)) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            SvStatus::Panic
        }
    }
}

fn invalid(msg: &str) -> Error {
    Error::invalid(msg)
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Error> {
    if p.is_null() {
        return Err(invalid("null path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn scene_arg<'a>(s: *const SvScene) -> Result<&'a SvScene, Error> {
    s.as_ref().ok_or_else(|| invalid("null scene handle"))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, Error> {
    p.as_mut().ok_or_else(|| invalid("null output pointer"))
}

fn boxed_scene(scene: Scene, head: LinearHead) -> *mut SvScene {
    Box::into_raw(Box::new(SvScene { scene, head }))
}

fn image_of(r: &splatview::render::NovelRender) -> *mut SvImage {
    Box::into_raw(Box::new(SvImage {
        width: r.width,
        height: r.height,
        data: r.color.data.iter().map(|v| *v as f32).collect(),
    }))
}

fn render_opts(k: usize, fast: bool) -> Result<RenderOptions, Error> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    Ok(RenderOptions {
        k,
        fast,
        ..Default::default()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn sv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a scene directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sv_scene_load(dir: *const c_char, out: *mut *mut SvScene) -> SvStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let (scene, head) = load_scene_with_head(&path_arg(dir)?)?;
        *out = boxed_scene(scene, head.unwrap_or_else(LinearHead::identity));
        Ok(())
    })
}

/// Generates a synthetic scene. `preset`: 0 textured plane, 1 two walls,
/// 2 box corner.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sv_scene_synth(
    preset: u32,
    views: u32,
    width: u32,
    height: u32,
    seed: u64,
    out: *mut *mut SvScene,
) -> SvStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let preset = match preset {
            0 => Preset::TexturedPlane,
            1 => Preset::TwoWalls,
            2 => Preset::BoxCorner,
            _ => return Err(invalid("unknown preset")),
        };
        let spec = SyntheticSpec {
            preset,
            views: views as usize,
            width: width as usize,
            height: height as usize,
            seed,
            ..Default::default()
        };
        *out = boxed_scene(gen_synthetic(&spec)?.scene, LinearHead::identity());
        Ok(())
    })
}

/// Writes a scene directory.
///
/// # Safety
/// `scene` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sv_scene_save(scene: *const SvScene, dir: *const c_char) -> SvStatus {
    guard(|| {
        let s = scene_arg(scene)?;
        save_scene_with_head(&s.scene, Some(&s.head), &path_arg(dir)?)
    })
}

/// Releases a scene. NULL is ignored.
///
/// # Safety
/// `scene` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sv_scene_free(scene: *mut SvScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Number of input views, or 0 for NULL.
///
/// # Safety
/// `scene` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn sv_scene_view_count(scene: *const SvScene) -> usize {
    scene.as_ref().map_or(0, |s| s.scene.views.len())
}

/// Id of the view at `index`.
///
/// # Safety
/// `scene` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sv_scene_view_id(scene: *const SvScene, index: usize, out: *mut u32) -> SvStatus {
    guard(|| {
        let s = scene_arg(scene)?;
        let out = out_arg(out)?;
        let v = s.scene.views.get(index).ok_or_else(|| invalid("view index out of range"))?;
        *out = v.id;
        Ok(())
    })
}

unsafe fn pose_camera(
    s: &SvScene,
    rotation: *const f64,
    translation: *const f64,
    width: u32,
    height: u32,
) -> Result<splatview::CameraModel, Error> {
    if rotation.is_null() || translation.is_null() {
        return Err(invalid("null pose array"));
    }
    let pose = Pose {
        rotation: std::slice::from_raw_parts(rotation, 9).to_vec(),
        translation: std::slice::from_raw_parts(translation, 3).to_vec(),
        width: (width > 0).then_some(width as usize),
        height: (height > 0).then_some(height as usize),
        fx: None,
        fy: None,
        cx: None,
        cy: None,
    };
    pose.camera(&s.scene.views[0].camera)
}

/// Renders a novel view. `rotation` is a row-major world-to-camera 3x3,
/// `translation` its 3-vector. Width or height 0 uses the first view's size;
/// intrinsics follow the first view rescaled to the output size.
///
/// # Safety
/// `rotation` must point to 9 doubles, `translation` to 3; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sv_render(
    scene: *const SvScene,
    rotation: *const f64,
    translation: *const f64,
    width: u32,
    height: u32,
    k: u32,
    fast: bool,
    out: *mut *mut SvImage,
) -> SvStatus {
    guard(|| {
        let s = scene_arg(scene)?;
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let cam = pose_camera(s, rotation, translation, width, height)?;
        let r = render_novel(&s.scene, &cam, &render_opts(k as usize, fast)?, &s.head)?;
        *out = image_of(&r);
        Ok(())
    })
}

/// Renders from the camera of the view with id `view_id`.
///
/// # Safety
/// `scene` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sv_render_view(scene: *const SvScene, view_id: u32, k: u32, fast: bool, out: *mut *mut SvImage) -> SvStatus {
    guard(|| {
        let s = scene_arg(scene)?;
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let v = s.scene.view(view_id).ok_or_else(|| invalid("unknown view id"))?;
        let r = render_novel(&s.scene, &v.camera, &render_opts(k as usize, fast)?, &s.head)?;
        *out = image_of(&r);
        Ok(())
    })
}

/// Greedy view selection for a pose. Writes up to `capacity` ids in pick
/// order, the number written to `count` and the covered score to `coverage`
/// (may be NULL).
///
/// # Safety
/// Pose arrays as in [`sv_render`]; `ids` must hold `capacity` entries.
#[no_mangle]
pub unsafe extern "C" fn sv_select(
    scene: *const SvScene,
    rotation: *const f64,
    translation: *const f64,
    width: u32,
    height: u32,
    k: u32,
    ids: *mut u32,
    capacity: usize,
    count: *mut usize,
    coverage: *mut f64,
) -> SvStatus {
    guard(|| {
        let s = scene_arg(scene)?;
        let count = out_arg(count)?;
        *count = 0;
        if ids.is_null() && capacity > 0 {
            return Err(invalid("null ids buffer"));
        }
        let cam = pose_camera(s, rotation, translation, width, height)?;
        let opts = render_opts(k as usize, false)?;
        let all: Vec<usize> = (0..s.scene.views.len()).collect();
        let sel = select_views(&s.scene, &all, &cam, opts.k, &opts.select)?;
        let n = sel.ids.len().min(capacity);
        if n > 0 {
            std::slice::from_raw_parts_mut(ids, n).copy_from_slice(&sel.ids[..n]);
        }
        *count = n;
        if let Some(c) = coverage.as_mut() {
            *c = sel.coverage;
        }
        Ok(())
    })
}

/// Image width, or 0 for NULL.
///
/// # Safety
/// `image` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn sv_image_width(image: *const SvImage) -> usize {
    image.as_ref().map_or(0, |i| i.width)
}

/// Image height, or 0 for NULL.
///
/// # Safety
/// `image` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn sv_image_height(image: *const SvImage) -> usize {
    image.as_ref().map_or(0, |i| i.height)
}

/// `width * height * 3` floats, owned by the image.
///
/// # Safety
/// `image` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn sv_image_data(image: *const SvImage) -> *const f32 {
    image.as_ref().map_or(ptr::null(), |i| i.data.as_ptr())
}

/// Releases an image. NULL is ignored.
///
/// # Safety
/// `image` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sv_image_free(image: *mut SvImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}
