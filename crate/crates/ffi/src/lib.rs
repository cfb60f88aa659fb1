//! C interface to the remqa library.
//!
//! Every fallible function returns a [`RemqaStatus`]; on failure a message is
//! available from [`remqa_last_error_message`] on the same thread. Strings
//! returned through out-parameters are owned by the caller and must be released
//! with [`remqa_string_free`]. Handles are released with their `_free`
//! function.

use remqa::dataset::Dataset;
use remqa::language::{parse_question, realize_question, QuestionAst};
use remqa::navigation::{spl, NavResult};
use remqa::pipeline::{build_prior, eval_metrics, prior_seed, run_all, run_episode, AgentConfig, Perception};
use remqa::scene_graph::SceneGraph;
use remqa::{iou3d, Box3, World};
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemqaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    NotFound = 6,
    Panic = 7,
}

/// A loaded scene configuration.
pub struct RemqaWorld {
    world: World,
}

/// A loaded dataset together with its scene configurations.
pub struct RemqaDataset {
    dataset: Dataset,
    worlds: BTreeMap<(String, u32), World>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RemqaStatus, String);

impl Failure {
    fn new(status: RemqaStatus, message: impl ToString) -> Self {
        Failure(status, message.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RemqaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RemqaStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".to_string());
            RemqaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(RemqaStatus::NullPointer, format!("`{name}` is null")));
    }
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|e| Failure::new(RemqaStatus::InvalidUtf8, format!("`{name}`: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| Failure::new(RemqaStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(RemqaStatus::NullPointer, format!("`{name}` is null")));
    }
    unsafe { out.write(value) };
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| Failure::new(RemqaStatus::InvalidArgument, e))?;
    unsafe { write_out(out, c.into_raw(), "out") }
}

unsafe fn box_arg(p: *const f64, name: &str) -> Result<Box3, Failure> {
    if p.is_null() {
        return Err(Failure::new(RemqaStatus::NullPointer, format!("`{name}` is null")));
    }
    let v = unsafe { std::slice::from_raw_parts(p, 6) };
    Box3::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
        .map_err(|e| Failure::new(RemqaStatus::InvalidArgument, format!("`{name}`: {e}")))
}

unsafe fn config_arg(p: *const c_char) -> Result<AgentConfig, Failure> {
    let config = if p.is_null() {
        AgentConfig::default()
    } else {
        serde_json::from_str(unsafe { str_arg(p, "config_json") }?).map_err(|e| Failure::new(RemqaStatus::Parse, e))?
    };
    config.validate().map_err(|e| Failure::new(RemqaStatus::InvalidArgument, e))?;
    Ok(config)
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn remqa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn remqa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn remqa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Axis-aligned 3D IoU of two boxes given as `[min_x, min_y, min_z, max_x, max_y, max_z]`.
///
/// # Safety
/// `a` and `b` must point to six doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn remqa_iou3d(a: *const f64, b: *const f64, out: *mut f64) -> RemqaStatus {
    guard(|| unsafe {
        let (a, b) = (box_arg(a, "a")?, box_arg(b, "b")?);
        write_out(out, iou3d(&a, &b), "out")
    })
}

/// Mean success weighted by path length over `n` episodes.
///
/// # Safety
/// The three arrays must hold `n` elements each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn remqa_spl(
    success: *const bool,
    path_taken: *const u32,
    shortest: *const u32,
    n: usize,
    out: *mut f64,
) -> RemqaStatus {
    guard(|| unsafe {
        if n > 0 && (success.is_null() || path_taken.is_null() || shortest.is_null()) {
            return Err(Failure::new(RemqaStatus::NullPointer, "input array is null"));
        }
        let results: Vec<NavResult> = (0..n)
            .map(|i| NavResult {
                success: *success.add(i),
                path_taken: *path_taken.add(i),
                shortest: *shortest.add(i),
                budget: 0,
            })
            .collect();
        let value = spl(&results).map_err(|e| Failure::new(RemqaStatus::InvalidArgument, e))?;
        write_out(out, value, "out")
    })
}

/// Parse a question and return its syntax tree as JSON.
///
/// # Safety
/// `text` must be a valid C string; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn remqa_parse_question(text: *const c_char, out_json: *mut *mut c_char) -> RemqaStatus {
    guard(|| unsafe {
        let ast = parse_question(str_arg(text, "text")?).map_err(|e| Failure::new(RemqaStatus::Parse, e))?;
        write_string(out_json, serde_json::to_string(&ast).expect("ast serializes"))
    })
}

/// Render a JSON syntax tree as a question.
///
/// # Safety
/// `ast_json` must be a valid C string; `out_text` must be writable.
#[no_mangle]
pub unsafe extern "C" fn remqa_realize_question(ast_json: *const c_char, out_text: *mut *mut c_char) -> RemqaStatus {
    guard(|| unsafe {
        let ast: QuestionAst =
            serde_json::from_str(str_arg(ast_json, "ast_json")?).map_err(|e| Failure::new(RemqaStatus::Parse, e))?;
        ast.validate().map_err(|e| Failure::new(RemqaStatus::InvalidArgument, e))?;
        write_string(out_text, realize_question(&ast))
    })
}

/// Load a scene configuration file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn remqa_world_load(path: *const c_char, out: *mut *mut RemqaWorld) -> RemqaStatus {
    guard(|| unsafe {
        let path = str_arg(path, "path")?;
        let world = World::load(Path::new(path)).map_err(|e| Failure::new(RemqaStatus::Io, format!("{path}: {e}")))?;
        write_out(out, Box::into_raw(Box::new(RemqaWorld { world })), "out")
    })
}

/// # Safety
/// `world` must be null or a handle from [`remqa_world_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn remqa_world_free(world: *mut RemqaWorld) {
    if !world.is_null() {
        drop(unsafe { Box::from_raw(world) });
    }
}

/// # Safety
/// `world` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn remqa_world_object_count(world: *const RemqaWorld, out: *mut usize) -> RemqaStatus {
    guard(|| unsafe { write_out(out, ref_arg(world, "world")?.world.object_count(), "out") })
}

/// Ground-truth scene graph of a world as JSON.
///
/// # Safety
/// `world` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn remqa_world_scene_graph(world: *const RemqaWorld, out_json: *mut *mut c_char) -> RemqaStatus {
    guard(|| unsafe { write_string(out_json, SceneGraph::from_world(&ref_arg(world, "world")?.world).to_json()) })
}

/// Load `dataset.jsonl` and the scene configurations next to it.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn remqa_dataset_load(path: *const c_char, out: *mut *mut RemqaDataset) -> RemqaStatus {
    guard(|| unsafe {
        let path = PathBuf::from(str_arg(path, "path")?);
        let io = |e: remqa::dataset::DatasetError| Failure::new(RemqaStatus::Io, format!("{}: {e}", path.display()));
        let dataset = Dataset::load(&path).map_err(io)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let worlds = dataset.load_worlds(&dir).map_err(io)?;
        write_out(out, Box::into_raw(Box::new(RemqaDataset { dataset, worlds })), "out")
    })
}

/// # Safety
/// `dataset` must be null or a handle from [`remqa_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn remqa_dataset_free(dataset: *mut RemqaDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn remqa_dataset_episode_count(dataset: *const RemqaDataset, out: *mut usize) -> RemqaStatus {
    guard(|| unsafe { write_out(out, ref_arg(dataset, "dataset")?.dataset.episodes.len(), "out") })
}

/// Run one episode and return its result as JSON. A null `config_json`
/// selects the default agent configuration; missing fields take defaults.
///
/// # Safety
/// `dataset` must be a live handle; `episode_id` a valid C string;
/// `config_json` null or a valid C string; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn remqa_run_episode(
    dataset: *const RemqaDataset,
    episode_id: *const c_char,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> RemqaStatus {
    guard(|| unsafe {
        let ds = ref_arg(dataset, "dataset")?;
        let id = str_arg(episode_id, "episode_id")?;
        let config = config_arg(config_json)?;
        let episode = ds
            .dataset
            .episodes
            .iter()
            .find(|e| e.episode_id == id)
            .ok_or_else(|| Failure::new(RemqaStatus::NotFound, format!("unknown episode id `{id}`")))?;
        let world = ds
            .worlds
            .get(&(episode.scene_id.clone(), episode.config_id))
            .ok_or_else(|| Failure::new(RemqaStatus::NotFound, format!("no world for scene {}", episode.scene_id)))?;
        let mut perception =
            Perception::new(config.noise_sigma, config.label_flip, prior_seed(config.seed, &world.scene_id, world.config_id));
        let prior = build_prior(world, &mut perception);
        let result = run_episode(world, &prior, episode, &config);
        write_string(out_json, serde_json::to_string(&result).expect("result serializes"))
    })
}

/// Run every episode and return the aggregate metrics as JSON.
///
/// # Safety
/// `dataset` must be a live handle; `config_json` null or a valid C string;
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn remqa_evaluate(
    dataset: *const RemqaDataset,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> RemqaStatus {
    guard(|| unsafe {
        let ds = ref_arg(dataset, "dataset")?;
        let config = config_arg(config_json)?;
        let results = run_all(&ds.dataset.episodes, &ds.worlds, &config).map_err(|e| Failure::new(RemqaStatus::NotFound, e))?;
        let metrics = eval_metrics(&results).map_err(|e| Failure::new(RemqaStatus::InvalidArgument, e))?;
        write_string(out_json, serde_json::to_string(&metrics).expect("metrics serialize"))
    })
}
