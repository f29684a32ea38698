//! C ABI over the `bggn` library.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/`*_load`/producer call and released by the matching `*_free`.
//! Functions return a [`BggnStatus`]; on failure the message is kept per
//! thread and can be copied out with [`bggn_last_error_message`]. Attribute
//! vectors are passed as `dimension` bytes, each 0 or 1. Panics never cross
//! the boundary; they surface as `BGGN_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use bggn::attrspace::{
    read_group_csv, split_by_group, write_group_csv, AttributeVector, GroupBiasTable,
    GroupCsvOptions, SyntheticLandscape,
};
use bggn::metrics::{evaluate_lenient, MetricConfig};
use bggn::model::{
    finetune, generate, pretrain, FineTuneConfig, GeneratedSet, GenerativeModel, ModelConfig,
    PretrainConfig,
};
use bggn::pipeline::{run_pipeline, RunConfig};
use bggn::predictor::{BiasPredictor, PredictorConfig};
use bggn::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BggnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotFound = 4,
    Io = 5,
    Parse = 6,
    Config = 7,
    Numeric = 8,
    Panic = 9,
}

/// Group bias table (observed, holdout or reference).
pub struct BggnTable(GroupBiasTable);
/// Synthetic bias landscape with known ground truth.
pub struct BggnLandscape(SyntheticLandscape);
/// Bias predictor trained on a group table.
pub struct BggnPredictor(BiasPredictor);
/// Generative model (pretrained or fine-tuned).
pub struct BggnModel(GenerativeModel);
/// Attribute vectors drawn from a model, in draw order.
pub struct BggnGenerated(GeneratedSet);

/// Scores of a generated set against a reference table. Metrics that are
/// undefined for the inputs are NaN; `bias_number` is then -1.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BggnMetrics {
    pub tau: f64,
    pub n_gen: u64,
    pub n_distinct: u64,
    pub distinct_bias_number: u64,
    pub bias_number: i64,
    pub bias_ratio: f64,
    pub precision_at_k: f64,
    pub recall_at_k: f64,
    pub avg_dcg_at_k: f64,
    pub rr_at_k_score: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> BggnStatus {
    match e {
        Error::DimensionMismatch { .. } => BggnStatus::DimensionMismatch,
        Error::Io { .. } => BggnStatus::Io,
        Error::Json(_) | Error::Csv(_) => BggnStatus::Parse,
        Error::Config(_) => BggnStatus::Config,
        Error::Stage { source, .. } => status_of(source),
        Error::NonFinite { .. } => BggnStatus::Numeric,
        _ => BggnStatus::InvalidArgument,
    }
}

struct Failure(BggnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: BggnStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BggnStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(Failure(BggnStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => {
            set_error(String::new());
            BggnStatus::Ok
        }
        Err(Failure(status, msg)) => {
            set_error(msg);
            status
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(
        || fail(BggnStatus::NullPointer, format!("{what} is null")),
        Ok,
    )
}

unsafe fn obj_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().map_or_else(
        || fail(BggnStatus::NullPointer, format!("{what} is null")),
        Ok,
    )
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    obj_mut(p, "output pointer")
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(BggnStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(BggnStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

unsafe fn attr_arg(bits: *const u8, dimension: usize) -> Result<AttributeVector, Failure> {
    if bits.is_null() {
        return fail(BggnStatus::NullPointer, "attribute bits are null");
    }
    Ok(AttributeVector::new(
        std::slice::from_raw_parts(bits, dimension).to_vec(),
    )?)
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bggn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bggn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

// ---------------------------------------------------------------------------
// tables

/// Creates an empty table over `dimension` attributes.
///
/// # Safety
/// `out_table` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn bggn_table_new(
    dimension: usize,
    out_table: *mut *mut BggnTable,
) -> BggnStatus {
    guard(|| {
        let slot = out(out_table)?;
        *slot = boxed(BggnTable(GroupBiasTable::new(dimension)?));
        Ok(())
    })
}

/// Reads `a0..,bias[,count]` rows.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_table` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bggn_table_read_csv(
    path: *const c_char,
    out_table: *mut *mut BggnTable,
) -> BggnStatus {
    guard(|| {
        let path = path_arg(path)?;
        let slot = out(out_table)?;
        *slot = boxed(BggnTable(read_group_csv(&path)?));
        Ok(())
    })
}

/// Writes the table as CSV with a count column.
///
/// # Safety
/// `table` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bggn_table_write_csv(
    table: *const BggnTable,
    path: *const c_char,
) -> BggnStatus {
    guard(|| {
        let t = obj(table, "table")?;
        let path = path_arg(path)?;
        write_group_csv(&path, &t.0, GroupCsvOptions { with_count: true })?;
        Ok(())
    })
}

/// Adds a group; an existing group is merged by count-weighted mean.
///
/// # Safety
/// `table` must be a live handle; `bits` must point to `dimension` bytes.
#[no_mangle]
pub unsafe extern "C" fn bggn_table_insert(
    table: *mut BggnTable,
    bits: *const u8,
    dimension: usize,
    bias: f64,
    count: u64,
) -> BggnStatus {
    guard(|| {
        let t = obj_mut(table, "table")?;
        let a = attr_arg(bits, dimension)?;
        t.0.insert(a, bias, count)?;
        Ok(())
    })
}

/// Number of distinct groups, or 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bggn_table_len(table: *const BggnTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.len())
}

/// Attribute dimension, or 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bggn_table_dimension(table: *const BggnTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.dimension())
}

/// Bias of one group; `BGGN_STATUS_NOT_FOUND` when the group is absent.
///
/// # Safety
/// `table` must be a live handle; `bits` must point to `dimension` bytes;
/// `out_bias` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_table_bias(
    table: *const BggnTable,
    bits: *const u8,
    dimension: usize,
    out_bias: *mut f64,
) -> BggnStatus {
    guard(|| {
        let t = obj(table, "table")?;
        let a = attr_arg(bits, dimension)?;
        a.check_dimension(t.0.dimension())?;
        let slot = out(out_bias)?;
        match t.0.bias(&a) {
            Some(b) => {
                *slot = b;
                Ok(())
            }
            None => fail(
                BggnStatus::NotFound,
                format!("group {a} is not in the table"),
            ),
        }
    })
}

/// Linearly interpolated quantile of group bias values.
///
/// # Safety
/// `table` must be a live handle; `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_table_bias_quantile(
    table: *const BggnTable,
    q: f64,
    out_value: *mut f64,
) -> BggnStatus {
    guard(|| {
        let t = obj(table, "table")?;
        if !(0.0..=1.0).contains(&q) {
            return fail(
                BggnStatus::InvalidArgument,
                format!("quantile {q} must lie in [0, 1]"),
            );
        }
        let slot = out(out_value)?;
        *slot = t.0.bias_quantile(q).ok_or(Error::Empty("table"))?;
        Ok(())
    })
}

/// Splits groups into observation and holdout tables.
///
/// # Safety
/// `table` must be a live handle; both output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_table_split(
    table: *const BggnTable,
    holdout_fraction: f64,
    seed: u64,
    out_observation: *mut *mut BggnTable,
    out_holdout: *mut *mut BggnTable,
) -> BggnStatus {
    guard(|| {
        let t = obj(table, "table")?;
        let (obs, hold) = (out(out_observation)?, out(out_holdout)?);
        let split = split_by_group(&t.0, holdout_fraction, seed)?;
        *obs = boxed(BggnTable(split.observation));
        *hold = boxed(BggnTable(split.holdout));
        Ok(())
    })
}

/// # Safety
/// `table` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bggn_table_free(table: *mut BggnTable) {
    release(table);
}

// ---------------------------------------------------------------------------
// landscapes

/// Random landscape with `cohorts` planted high-bias cohorts.
///
/// # Safety
/// `out_landscape` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_landscape_planted(
    dimension: usize,
    cohorts: usize,
    seed: u64,
    out_landscape: *mut *mut BggnLandscape,
) -> BggnStatus {
    guard(|| {
        let slot = out(out_landscape)?;
        if dimension == 0 {
            return fail(BggnStatus::InvalidArgument, "dimension must be at least 1");
        }
        *slot = boxed(BggnLandscape(SyntheticLandscape::planted(
            dimension, cohorts, seed,
        )));
        Ok(())
    })
}

/// Reads a landscape JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_landscape` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_landscape_load(
    path: *const c_char,
    out_landscape: *mut *mut BggnLandscape,
) -> BggnStatus {
    guard(|| {
        let path = path_arg(path)?;
        let slot = out(out_landscape)?;
        *slot = boxed(BggnLandscape(SyntheticLandscape::load(&path)?));
        Ok(())
    })
}

/// Noiseless bias of one attribute vector.
///
/// # Safety
/// `landscape` must be a live handle; `bits` must point to `dimension`
/// bytes; `out_bias` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_landscape_bias(
    landscape: *const BggnLandscape,
    bits: *const u8,
    dimension: usize,
    out_bias: *mut f64,
) -> BggnStatus {
    guard(|| {
        let l = obj(landscape, "landscape")?;
        let a = attr_arg(bits, dimension)?;
        let slot = out(out_bias)?;
        *slot = l.0.bias(&a)?;
        Ok(())
    })
}

/// Samples a noisy group table of `n_groups` groups.
///
/// # Safety
/// `landscape` must be a live handle; `out_table` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_landscape_sample(
    landscape: *const BggnLandscape,
    n_groups: usize,
    samples_per_group: u64,
    out_table: *mut *mut BggnTable,
) -> BggnStatus {
    guard(|| {
        let l = obj(landscape, "landscape")?;
        let slot = out(out_table)?;
        *slot = boxed(BggnTable(l.0.sample_dataset(n_groups, samples_per_group)?));
        Ok(())
    })
}

/// # Safety
/// `landscape` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bggn_landscape_free(landscape: *mut BggnLandscape) {
    release(landscape);
}

// ---------------------------------------------------------------------------
// predictors

/// Trains a predictor with default settings and the given seed.
///
/// # Safety
/// `table` must be a live handle; `out_predictor` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_predictor_train(
    table: *const BggnTable,
    seed: u64,
    out_predictor: *mut *mut BggnPredictor,
) -> BggnStatus {
    guard(|| {
        let t = obj(table, "table")?;
        let slot = out(out_predictor)?;
        let config = PredictorConfig {
            seed,
            ..Default::default()
        };
        *slot = boxed(BggnPredictor(BiasPredictor::train(&t.0, &config)?));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out_predictor` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_predictor_load(
    path: *const c_char,
    out_predictor: *mut *mut BggnPredictor,
) -> BggnStatus {
    guard(|| {
        let path = path_arg(path)?;
        let slot = out(out_predictor)?;
        *slot = boxed(BggnPredictor(BiasPredictor::load(&path)?));
        Ok(())
    })
}

/// # Safety
/// `predictor` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bggn_predictor_save(
    predictor: *const BggnPredictor,
    path: *const c_char,
) -> BggnStatus {
    guard(|| {
        let p = obj(predictor, "predictor")?;
        p.0.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `predictor` must be a live handle; `bits` must point to `dimension`
/// bytes; `out_bias` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_predictor_predict(
    predictor: *const BggnPredictor,
    bits: *const u8,
    dimension: usize,
    out_bias: *mut f64,
) -> BggnStatus {
    guard(|| {
        let p = obj(predictor, "predictor")?;
        let a = attr_arg(bits, dimension)?;
        let slot = out(out_bias)?;
        *slot = p.0.predict(&a)?;
        Ok(())
    })
}

/// # Safety
/// `predictor` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bggn_predictor_free(predictor: *mut BggnPredictor) {
    release(predictor);
}

// ---------------------------------------------------------------------------
// generative models

/// Fresh model with the default architecture.
///
/// # Safety
/// `out_model` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_model_new(
    dimension: usize,
    seed: u64,
    out_model: *mut *mut BggnModel,
) -> BggnStatus {
    guard(|| {
        let slot = out(out_model)?;
        *slot = boxed(BggnModel(GenerativeModel::new(
            dimension,
            &ModelConfig::default(),
            seed,
        )?));
        Ok(())
    })
}

/// Pretrains the model on the observation table.
///
/// # Safety
/// `model` and `observation` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn bggn_model_pretrain(
    model: *mut BggnModel,
    observation: *const BggnTable,
    seed: u64,
) -> BggnStatus {
    guard(|| {
        let m = obj_mut(model, "model")?;
        let t = obj(observation, "observation table")?;
        pretrain(
            &mut m.0,
            &t.0,
            &PretrainConfig {
                seed,
                ..Default::default()
            },
        )?;
        Ok(())
    })
}

/// Bias-guided fine-tuning against `predictor`.
///
/// # Safety
/// `model`, `predictor` and `observation` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn bggn_model_finetune(
    model: *mut BggnModel,
    predictor: *const BggnPredictor,
    observation: *const BggnTable,
    seed: u64,
) -> BggnStatus {
    guard(|| {
        let m = obj_mut(model, "model")?;
        let p = obj(predictor, "predictor")?;
        let t = obj(observation, "observation table")?;
        finetune(
            &mut m.0,
            &p.0,
            &t.0,
            &FineTuneConfig {
                seed,
                ..Default::default()
            },
        )?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out_model` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_model_load(
    path: *const c_char,
    out_model: *mut *mut BggnModel,
) -> BggnStatus {
    guard(|| {
        let path = path_arg(path)?;
        let slot = out(out_model)?;
        *slot = boxed(BggnModel(GenerativeModel::load(&path)?));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bggn_model_save(
    model: *const BggnModel,
    path: *const c_char,
) -> BggnStatus {
    guard(|| {
        let m = obj(model, "model")?;
        m.0.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bggn_model_free(model: *mut BggnModel) {
    release(model);
}

// ---------------------------------------------------------------------------
// generation and evaluation

/// Draws `n` attribute vectors, scored by `predictor`. When `reference` is
/// not null, items found in it also carry their reference bias.
///
/// # Safety
/// `model` and `predictor` must be live handles, `reference` null or live,
/// and `out_set` valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_generate(
    model: *const BggnModel,
    predictor: *const BggnPredictor,
    n: usize,
    reference: *const BggnTable,
    seed: u64,
    out_set: *mut *mut BggnGenerated,
) -> BggnStatus {
    guard(|| {
        let m = obj(model, "model")?;
        let p = obj(predictor, "predictor")?;
        let r = reference.as_ref().map(|t| &t.0);
        let slot = out(out_set)?;
        *slot = boxed(BggnGenerated(generate(&m.0, n, &p.0, None, r, seed)?));
        Ok(())
    })
}

/// Number of generated items (duplicates included), or 0 for null.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bggn_generated_len(set: *const BggnGenerated) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Copies item `index` into `out_bits` (`dimension` bytes) and its
/// predicted bias into `out_predicted` (may be null).
///
/// # Safety
/// `set` must be a live handle and `out_bits` must point to `dimension`
/// writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bggn_generated_get(
    set: *const BggnGenerated,
    index: usize,
    out_bits: *mut u8,
    dimension: usize,
    out_predicted: *mut f64,
) -> BggnStatus {
    guard(|| {
        let s = obj(set, "generated set")?;
        let Some(item) = s.0.items.get(index) else {
            return fail(
                BggnStatus::InvalidArgument,
                format!("index {index} out of range for {} items", s.0.len()),
            );
        };
        item.attribute.check_dimension(dimension)?;
        if out_bits.is_null() {
            return fail(BggnStatus::NullPointer, "output bits are null");
        }
        std::ptr::copy_nonoverlapping(item.attribute.bits().as_ptr(), out_bits, dimension);
        if let Some(p) = out_predicted.as_mut() {
            *p = item.predicted_bias;
        }
        Ok(())
    })
}

/// # Safety
/// `set` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bggn_generated_save(
    set: *const BggnGenerated,
    path: *const c_char,
) -> BggnStatus {
    guard(|| {
        let s = obj(set, "generated set")?;
        s.0.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bggn_generated_free(set: *mut BggnGenerated) {
    release(set);
}

/// Scores `set` against `reference` at threshold `tau` with default metric
/// settings.
///
/// # Safety
/// `set` and `reference` must be live handles; `out_metrics` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bggn_evaluate(
    set: *const BggnGenerated,
    reference: *const BggnTable,
    tau: f64,
    out_metrics: *mut BggnMetrics,
) -> BggnStatus {
    guard(|| {
        let s = obj(set, "generated set")?;
        let r = obj(reference, "reference table")?;
        let slot = out(out_metrics)?;
        let m = evaluate_lenient(&s.0, &r.0, tau, &MetricConfig::default())?;
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *slot = BggnMetrics {
            tau: m.tau,
            n_gen: m.n_gen as u64,
            n_distinct: m.n_distinct as u64,
            distinct_bias_number: m.distinct_bias_number as u64,
            bias_number: m.bias_number.map_or(-1, |n| n as i64),
            bias_ratio: nan(m.bias_ratio),
            precision_at_k: nan(m.precision_at_k),
            recall_at_k: nan(m.recall_at_k),
            avg_dcg_at_k: nan(m.avg_dcg_at_k),
            rr_at_k_score: nan(m.rr_at_k_score),
        };
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// pipeline

/// Runs the full staged pipeline from a JSON config. `output_dir` overrides
/// the config's output directory when not null.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `output_dir` null or one.
#[no_mangle]
pub unsafe extern "C" fn bggn_run_pipeline(
    config_path: *const c_char,
    output_dir: *const c_char,
) -> BggnStatus {
    guard(|| {
        let mut config = RunConfig::load(&path_arg(config_path)?)?;
        if !output_dir.is_null() {
            config.output_dir = path_arg(output_dir)?;
        }
        run_pipeline(&config)?;
        Ok(())
    })
}
