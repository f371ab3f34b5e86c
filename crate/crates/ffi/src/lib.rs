//! C ABI over the `scis` library.
//!
//! Every function returns a [`ScisStatus`]. On failure a message is kept per
//! thread and can be read with [`scis_last_error_message`]. Objects are
//! opaque handles released with the matching `*_free`; passing NULL to a
//! free function is a no-op. Handles are immutable after creation and may be read from
//! several threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use scis::causal::{confounded_triple, DiscreteScm, ScmFile};
use scis::dictionary::PrototypeDictionary;
use scis::harness::{evaluate, Condition};
use scis::planner::PlannerModel;
use scis::world::{generate_split, Dataset, ScenarioConfig, Split, HORIZON};
use scis::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScisStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    OutOfRange = 4,
    Shape = 10,
    Contract = 11,
    UnknownNode = 12,
    Graph = 13,
    UndefinedConditional = 14,
    Capacity = 15,
    Config = 16,
    Misuse = 17,
    Wiring = 18,
    Training = 19,
    HashMismatch = 20,
    Invalid = 21,
    Io = 22,
    Json = 23,
    Panic = 99,
}

impl From<&Error> for ScisStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape { .. } => ScisStatus::Shape,
            Error::Contract(_) => ScisStatus::Contract,
            Error::UnknownNode(_) => ScisStatus::UnknownNode,
            Error::Graph(_) => ScisStatus::Graph,
            Error::UndefinedConditional => ScisStatus::UndefinedConditional,
            Error::Capacity { .. } => ScisStatus::Capacity,
            Error::Config(_) => ScisStatus::Config,
            Error::Misuse(_) => ScisStatus::Misuse,
            Error::Wiring(_) => ScisStatus::Wiring,
            Error::Training { .. } => ScisStatus::Training,
            Error::HashMismatch { .. } => ScisStatus::HashMismatch,
            Error::Invalid(_) => ScisStatus::Invalid,
            Error::Io(_) => ScisStatus::Io,
            Error::Json(_) => ScisStatus::Json,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScisSplit {
    Train = 0,
    Val = 1,
}

/// Aggregate open-loop metrics of one evaluation.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScisMetrics {
    pub scenes: usize,
    pub l2_1s: f64,
    pub l2_2s: f64,
    pub l2_3s: f64,
    pub l2_avg: f64,
    pub collision_rate: f64,
}

/// A discrete structural causal model.
pub struct ScisScm(DiscreteScm);

/// A generated or loaded scene dataset.
pub struct ScisDataset(Dataset);

/// A trained planner, with its dictionary when it is causal.
pub struct ScisModel(PlannerModel);

/// Number of planned waypoints per scene.
pub const SCIS_HORIZON: usize = 6;
const _: () = assert!(SCIS_HORIZON == HORIZON);

struct Failure(ScisStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(ScisStatus::from(&e), e.to_string())
    }
}

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome) -> ScisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ScisStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ScisStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ScisStatus::NullArgument, format!("`{what}` is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ScisStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_slice(values: &[f64], buf: *mut f64, cap: usize, out_len: *mut usize) -> Outcome {
    *out_arg(out_len, "out_len")? = values.len();
    if cap < values.len() {
        return Err(Failure(
            ScisStatus::BufferTooSmall,
            format!("need {} values, buffer holds {cap}", values.len()),
        ));
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    std::slice::from_raw_parts_mut(buf, values.len()).copy_from_slice(values);
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scis_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the calling thread's last error message, without the
/// terminating NUL; 0 when the last call succeeded.
#[no_mangle]
pub extern "C" fn scis_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |m| m.as_bytes().len()))
}

/// Copies the last error message, NUL-terminated, into `buf`.
///
/// # Safety
/// `buf` must point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn scis_last_error_message(buf: *mut c_char, cap: usize) -> ScisStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone()).unwrap_or_default();
    let bytes = msg.as_bytes_with_nul();
    if buf.is_null() {
        return ScisStatus::NullArgument;
    }
    if cap < bytes.len() {
        return ScisStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, bytes.len());
    ScisStatus::Ok
}

/// The three-node confounded fixture `Z -> S -> Y`, `Z -> Y`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scis_scm_confounded_triple(out: *mut *mut ScisScm) -> ScisStatus {
    guard(|| {
        *out_arg(out, "out")? = boxed(ScisScm(confounded_triple()));
        Ok(())
    })
}

/// Parses an SCM from its JSON text form.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scis_scm_from_json(json: *const c_char, out: *mut *mut ScisScm) -> ScisStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let file: ScmFile = serde_json::from_str(text).map_err(Error::from)?;
        *out = boxed(ScisScm(DiscreteScm::from_file(&file)?));
        Ok(())
    })
}

/// # Safety
/// `scm` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scis_scm_free(scm: *mut ScisScm) {
    if !scm.is_null() {
        drop(Box::from_raw(scm));
    }
}

/// Number of states of variable `name`.
///
/// # Safety
/// Pointers must be valid; `name` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn scis_scm_card(scm: *const ScisScm, name: *const c_char, out: *mut usize) -> ScisStatus {
    guard(|| {
        let scm = ref_arg(scm, "scm")?;
        *out_arg(out, "out")? = scm.0.card(str_arg(name, "name")?)?;
        Ok(())
    })
}

unsafe fn assignments<'a>(
    names: *const *const c_char,
    states: *const usize,
    n: usize,
) -> Result<Vec<(&'a str, usize)>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if names.is_null() {
        return Err(null("names"));
    }
    if states.is_null() {
        return Err(null("states"));
    }
    let names = std::slice::from_raw_parts(names, n);
    let states = std::slice::from_raw_parts(states, n);
    names
        .iter()
        .zip(states)
        .map(|(&p, &s)| Ok((str_arg(p, "names[i]")?, s)))
        .collect()
}

/// `P(y | names = states)`. Writes `card(y)` probabilities to `probs`.
///
/// # Safety
/// `names` and `states` must hold `n` entries; `probs` must hold `cap`.
#[no_mangle]
pub unsafe extern "C" fn scis_scm_observational(
    scm: *const ScisScm,
    y: *const c_char,
    names: *const *const c_char,
    states: *const usize,
    n: usize,
    probs: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> ScisStatus {
    guard(|| {
        let scm = ref_arg(scm, "scm")?;
        let d = scm.0.observational(str_arg(y, "y")?, &assignments(names, states, n)?)?;
        write_slice(&d.probs, probs, cap, out_len)
    })
}

/// `P(y | do(names = states))` by truncated factorization.
///
/// # Safety
/// As for [`scis_scm_observational`].
#[no_mangle]
pub unsafe extern "C" fn scis_scm_interventional(
    scm: *const ScisScm,
    y: *const c_char,
    names: *const *const c_char,
    states: *const usize,
    n: usize,
    probs: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> ScisStatus {
    guard(|| {
        let scm = ref_arg(scm, "scm")?;
        let d = scm.0.interventional(str_arg(y, "y")?, &assignments(names, states, n)?)?;
        write_slice(&d.probs, probs, cap, out_len)
    })
}

/// `sum_z P(y | s, z) P(z)` over the adjustment set `z`.
///
/// # Safety
/// `z` must hold `n_z` NUL-terminated names; `probs` must hold `cap`.
#[no_mangle]
pub unsafe extern "C" fn scis_scm_backdoor_adjust(
    scm: *const ScisScm,
    y: *const c_char,
    s: *const c_char,
    s_state: usize,
    z: *const *const c_char,
    n_z: usize,
    probs: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> ScisStatus {
    guard(|| {
        let scm = ref_arg(scm, "scm")?;
        let zs: Vec<&str> = if n_z == 0 {
            Vec::new()
        } else {
            if z.is_null() {
                return Err(null("z"));
            }
            std::slice::from_raw_parts(z, n_z)
                .iter()
                .map(|&p| str_arg(p, "z[i]"))
                .collect::<Result<_, _>>()?
        };
        let d = scm.0.backdoor_adjust(str_arg(y, "y")?, (str_arg(s, "s")?, s_state), &zs)?;
        write_slice(&d.probs, probs, cap, out_len)
    })
}

/// Samples `n` scenes with the default scenario configuration and `seed`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scis_dataset_generate(
    seed: u64,
    n: usize,
    split: ScisSplit,
    out: *mut *mut ScisDataset,
) -> ScisStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = ScenarioConfig { seed, ..Default::default() };
        let split = match split {
            ScisSplit::Train => Split::Train,
            ScisSplit::Val => Split::Val,
        };
        *out = boxed(ScisDataset(generate_split(&cfg, n, split)?));
        Ok(())
    })
}

/// Loads a dataset written by the CLI `generate` command.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scis_dataset_load(path: *const c_char, out: *mut *mut ScisDataset) -> ScisStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = boxed(ScisDataset(Dataset::load(Path::new(path))?));
        Ok(())
    })
}

/// # Safety
/// `data` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn scis_dataset_len(data: *const ScisDataset, out: *mut usize) -> ScisStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(data, "data")?.0.len();
        Ok(())
    })
}

/// # Safety
/// `data` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scis_dataset_free(data: *mut ScisDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Loads a model checkpoint. `dict_path` may be NULL for a baseline; a
/// causal checkpoint needs its dictionary.
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scis_model_load(
    model_path: *const c_char,
    dict_path: *const c_char,
    out: *mut *mut ScisModel,
) -> ScisStatus {
    guard(|| {
        let model_path = str_arg(model_path, "model_path")?;
        let out = out_arg(out, "out")?;
        let dict = if dict_path.is_null() {
            None
        } else {
            let text = std::fs::read_to_string(str_arg(dict_path, "dict_path")?).map_err(Error::from)?;
            Some(PrototypeDictionary::from_json(&text)?)
        };
        *out = boxed(ScisModel(PlannerModel::load(Path::new(model_path), dict.as_ref())?));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scis_model_free(model: *mut ScisModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn scis_model_is_causal(model: *const ScisModel, out: *mut bool) -> ScisStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(model, "model")?.0.is_causal();
        Ok(())
    })
}

/// Plans scene `index` of `data`. Writes `2 * SCIS_HORIZON` values, `x`
/// and `y` interleaved, in the ego frame.
///
/// # Safety
/// Handles must be valid; `xy` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn scis_model_predict(
    model: *const ScisModel,
    data: *const ScisDataset,
    index: usize,
    xy: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> ScisStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let data = ref_arg(data, "data")?;
        let scene = data.0.scenes.get(index).ok_or_else(|| {
            Failure(
                ScisStatus::OutOfRange,
                format!("scene {index} out of range for {} scenes", data.0.len()),
            )
        })?;
        let p = model.0.predict(scene)?;
        let flat: Vec<f64> = p.waypoints.iter().flatten().copied().collect();
        write_slice(&flat, xy, cap, out_len)
    })
}

/// Open-loop L2 and collision rate of `model` on `data`.
///
/// # Safety
/// Handles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn scis_model_evaluate(
    model: *const ScisModel,
    data: *const ScisDataset,
    seed: u64,
    out: *mut ScisMetrics,
) -> ScisStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let data = ref_arg(data, "data")?;
        let out = out_arg(out, "out")?;
        let cond = Condition::new("ffi", "none", data.0.split.name(), seed);
        let r = evaluate(&model.0, &data.0, &cond)?;
        *out = ScisMetrics {
            scenes: r.scenes,
            l2_1s: r.l2_1s,
            l2_2s: r.l2_2s,
            l2_3s: r.l2_3s,
            l2_avg: r.l2_avg,
            collision_rate: r.collision_rate,
        };
        Ok(())
    })
}
