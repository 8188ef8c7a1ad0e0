//! C ABI over `speclearn`.
//!
//! Scenes and models cross the boundary as opaque handles owned by the caller
//! and released with the matching `*_free`. Every fallible call returns an
//! [`SlStatus`]; on failure the message is kept per thread and read back with
//! [`sl_last_error`]. Out-pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use speclearn::refine::refine_trajectory;
use speclearn::scene::{generate_scene, render_scene, scene_from_files, scene_to_files, ObjectCount, Scene, Split, IMAGE_SIZE};
use speclearn::specmodel::{load_checkpoint, SpecModel};
use speclearn::trajectory::{bezier_eval, oracle_validity, ControlPoint, UserType};
use speclearn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Placement = 4,
    Synthesis = 5,
    Schema = 6,
    Untrained = 7,
    Config = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlUserType {
    Careful = 0,
    Normal = 1,
    Aggressive = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlSplit {
    Train = 0,
    Test = 1,
}

pub struct SlScene {
    inner: Scene,
}

pub struct SlModel {
    inner: SpecModel,
}

fn user_type_arg(v: i32) -> Result<UserType, Failure> {
    match v {
        0 => Ok(UserType::Careful),
        1 => Ok(UserType::Normal),
        2 => Ok(UserType::Aggressive),
        _ => Err(Failure(SlStatus::InvalidArgument, format!("user type {v} is not an SlUserType"))),
    }
}

fn split_arg(v: i32) -> Result<Split, Failure> {
    match v {
        0 => Ok(Split::Train),
        1 => Ok(Split::Test),
        _ => Err(Failure(SlStatus::InvalidArgument, format!("split {v} is not an SlSplit"))),
    }
}

impl From<UserType> for SlUserType {
    fn from(u: UserType) -> Self {
        match u {
            UserType::Careful => SlUserType::Careful,
            UserType::Normal => SlUserType::Normal,
            UserType::Aggressive => SlUserType::Aggressive,
        }
    }
}

fn status_of(e: &Error) -> SlStatus {
    match e {
        Error::Precondition(_) | Error::Domain(_) | Error::EndpointMismatch => SlStatus::InvalidArgument,
        Error::Shape(_) => SlStatus::Shape,
        Error::PlacementFailure { .. } => SlStatus::Placement,
        Error::SynthesisFailure { .. } => SlStatus::Synthesis,
        Error::Schema { .. } => SlStatus::Schema,
        Error::UntrainedModel => SlStatus::Untrained,
        Error::Config(_) => SlStatus::Config,
        Error::Io { .. } => SlStatus::Io,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SlStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside speclearn");
            SlStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SlStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn sl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Generates a scene; `split` is an [`SlSplit`] value and
/// `object_count == 0` draws the count at random.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sl_scene_generate(seed: u64, split: i32, object_count: usize, out: *mut *mut SlScene) -> SlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let split = split_arg(split)?;
        let count = if object_count == 0 { ObjectCount::Random } else { ObjectCount::Exactly(object_count) };
        let scene = generate_scene(seed, split, count)?;
        write_out(out, Box::into_raw(Box::new(SlScene { inner: scene })), "out")
    })
}

/// Loads `scene.json` from the directory `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_scene_load(dir: *const c_char, out: *mut *mut SlScene) -> SlStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let scene = scene_from_files(&dir)?;
        write_out(out, Box::into_raw(Box::new(SlScene { inner: scene })), "out")
    })
}

/// Writes `scene.json` and `scene.png` into the existing directory `dir`.
///
/// # Safety
/// `scene` must come from this library and `dir` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sl_scene_save(scene: *const SlScene, dir: *const c_char) -> SlStatus {
    guard(|| {
        let scene = borrow(scene, "scene")?;
        let dir = path_arg(dir, "dir")?;
        scene_to_files(&scene.inner, &dir)?;
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sl_scene_free(scene: *mut SlScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_scene_object_count(scene: *const SlScene, out: *mut usize) -> SlStatus {
    guard(|| {
        let scene = borrow(scene, "scene")?;
        write_out(out, scene.inner.objects.len(), "out")
    })
}

/// Number of doubles [`sl_scene_render`] writes.
#[no_mangle]
pub extern "C" fn sl_image_len() -> usize {
    IMAGE_SIZE * IMAGE_SIZE * 3
}

/// Renders the scene as row-major H x W x 3 intensities in [0, 1].
///
/// # Safety
/// `pixels` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_scene_render(scene: *const SlScene, pixels: *mut f64, len: usize) -> SlStatus {
    guard(|| {
        let scene = borrow(scene, "scene")?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let img = render_scene(&scene.inner);
        if len != img.pixels.len() {
            return Err(Failure(SlStatus::Shape, format!("buffer holds {len} values, image needs {}", img.pixels.len())));
        }
        ptr::copy_nonoverlapping(img.pixels.as_ptr(), pixels, len);
        Ok(())
    })
}

/// Point at parameter `t` of the curve with control point `(x, y)`.
///
/// # Safety
/// `out_xy` must point to two writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_bezier_eval(x: f64, y: f64, t: f64, out_xy: *mut f64) -> SlStatus {
    guard(|| {
        if out_xy.is_null() {
            return Err(null("out_xy"));
        }
        let p = bezier_eval(ControlPoint::new(x, y), t)?;
        ptr::copy_nonoverlapping(p.as_ptr(), out_xy, 2);
        Ok(())
    })
}

/// Ground-truth validity of the curve through `(x, y)` for `user_type`,
/// an [`SlUserType`] value.
///
/// # Safety
/// `scene` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_oracle_validity(
    scene: *const SlScene,
    x: f64,
    y: f64,
    user_type: i32,
    out: *mut bool,
) -> SlStatus {
    guard(|| {
        let scene = borrow(scene, "scene")?;
        let user_type = user_type_arg(user_type)?;
        write_out(out, oracle_validity(&scene.inner, ControlPoint::new(x, y), user_type), "out")
    })
}

/// Loads a checkpoint from `<stem>.spc` and `<stem>.json`.
///
/// # Safety
/// `stem` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_model_load(stem: *const c_char, out: *mut *mut SlModel) -> SlStatus {
    guard(|| {
        let stem = path_arg(stem, "stem")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (model, _) = load_checkpoint(&stem)?;
        write_out(out, Box::into_raw(Box::new(SlModel { inner: model })), "out")
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sl_model_free(model: *mut SlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_model_user_type(model: *const SlModel, out: *mut SlUserType) -> SlStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        write_out(out, model.inner.user_type.into(), "out")
    })
}

/// Predicted probability that the curve through `(x, y)` is valid in `scene`.
///
/// # Safety
/// `model` and `scene` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_model_predict(
    model: *const SlModel,
    scene: *const SlScene,
    x: f64,
    y: f64,
    out: *mut f64,
) -> SlStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let scene = borrow(scene, "scene")?;
        let image = model.inner.render(&scene.inner);
        let p = model.inner.predict_validity(&image, ControlPoint::new(x, y))?;
        write_out(out, p, "out")
    })
}

/// Latent-space refinement from `(x, y)`; writes the final control point,
/// its score and the number of steps taken.
///
/// # Safety
/// `model` and `scene` must be live handles, `out_xy` must point to two
/// writable doubles and the remaining out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sl_model_refine(
    model: *const SlModel,
    scene: *const SlScene,
    x: f64,
    y: f64,
    max_steps: usize,
    step_size: f64,
    out_xy: *mut f64,
    out_score: *mut f64,
    out_steps: *mut usize,
) -> SlStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let scene = borrow(scene, "scene")?;
        if out_xy.is_null() || out_score.is_null() || out_steps.is_null() {
            return Err(null("an output pointer"));
        }
        let trace = refine_trajectory(&model.inner, &scene.inner, ControlPoint::new(x, y), max_steps, step_size)?;
        let theta = trace.final_theta();
        ptr::copy_nonoverlapping(theta.0.as_ptr(), out_xy, 2);
        out_score.write(trace.final_score());
        out_steps.write(trace.steps());
        Ok(())
    })
}
