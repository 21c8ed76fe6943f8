//! C ABI for the `damh` sampler.
//!
//! Every fallible function returns a [`DamhStatus`]. On failure a message is
//! kept per thread and can be read with [`damh_last_error_message`].
//! Handles are opaque pointers released with their matching `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use damh::delayed::{combined_acceptance_prob, OrderPolicy};
use damh::diagnostics::{effective_sample_size, trace_ess};
use damh::error::Error;
use damh::experiment::{run_experiment, ExperimentConfig};
use damh::kernel::ProposalKernel;
use damh::prefetch::{build_tour, BranchKind, BranchPolicy, TourSpec, MAX_DEPTH};
use damh::sampler::{Algorithm, PrefetchConfig, RunOutput, Sampler, SamplerConfig};
use damh::schedule::make_schedule;
use damh::target::{ChainPoint, CostTier, FactorizedTarget, ParamVector, TargetBuilder};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DamhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    OutsideSupport = 5,
    Numerical = 6,
    Worker = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Internal = 11,
}

impl From<&Error> for DamhStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch { .. } => Self::DimensionMismatch,
            Error::NonFiniteFactor { .. } => Self::NonFinite,
            Error::InitialOutsideSupport => Self::OutsideSupport,
            Error::NotPositiveDefinite | Error::Numerical(_) | Error::SeriesTooShort { .. } => Self::Numerical,
            Error::Worker(_) => Self::Worker,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Data(_) => Self::Io,
            Error::InvalidArgument(_) | Error::FactorOrder(_) | Error::MissingContext(_) => Self::InvalidArgument,
            Error::InconsistentCache(_) | Error::RowSum { .. } => Self::Internal,
        }
    }
}

/// Algorithm selector for [`DamhRunConfig`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DamhAlgorithm {
    Mh = 0,
    Da = 1,
}

/// Branch-probability policy for prefetching.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DamhPolicy {
    StaticHalf = 0,
    ObservedRate = 1,
    UniformAware = 2,
    ApproxRatio = 3,
    CappedApprox = 4,
}

impl From<DamhPolicy> for BranchKind {
    fn from(p: DamhPolicy) -> Self {
        match p {
            DamhPolicy::StaticHalf => BranchKind::StaticHalf,
            DamhPolicy::ObservedRate => BranchKind::ObservedRate,
            DamhPolicy::UniformAware => BranchKind::UniformAware,
            DamhPolicy::ApproxRatio => BranchKind::ApproxRatio,
            DamhPolicy::CappedApprox => BranchKind::CappedApprox,
        }
    }
}

/// Settings for [`damh_run`]. Start from [`damh_run_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct DamhRunConfig {
    pub seed: u64,
    pub iterations: u64,
    pub burnin: u64,
    pub thin: u64,
    pub algorithm: DamhAlgorithm,
    /// 0 runs serially; otherwise the number of prefetch workers.
    pub workers: usize,
    pub policy: DamhPolicy,
    pub beta_cap: f64,
    /// Standard deviation of the isotropic Gaussian random walk.
    pub proposal_sd: f64,
}

/// Log-density term callback: `theta` has `dim` entries. Must be thread-safe
/// when prefetch workers are used, and pure.
pub type DamhLogTerm = extern "C" fn(theta: *const f64, dim: usize, user_data: *mut c_void) -> f64;

/// Factorized target under construction or complete.
pub struct DamhTarget {
    builder: Option<TargetBuilder>,
    built: Option<FactorizedTarget>,
    dim: usize,
}

/// Output of a finished run.
pub struct DamhRun {
    output: RunOutput,
}

struct Callback {
    f: DamhLogTerm,
    user_data: *mut c_void,
}

impl Callback {
    fn call(&self, theta: &[f64]) -> f64 {
        (self.f)(theta.as_ptr(), theta.len(), self.user_data)
    }
}

// The caller guarantees the callback and its user data may be shared across threads.
unsafe impl Send for Callback {}
unsafe impl Sync for Callback {}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: DamhStatus, msg: impl Into<String>) -> DamhStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> DamhStatus {
    let s = DamhStatus::from(&e);
    fail(s, e.to_string())
}

/// Runs `body` with panics turned into [`DamhStatus::Panic`].
fn guard(body: impl FnOnce() -> DamhStatus) -> DamhStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DamhStatus::Panic, msg)
        }
    }
}

macro_rules! nonnull {
    ($($p:ident),*) => {$(
        if $p.is_null() {
            return fail(DamhStatus::NullPointer, concat!(stringify!($p), " is null"));
        }
    )*};
}

/// Message of the last failure on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn damh_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library name and version, static storage.
#[no_mangle]
pub extern "C" fn damh_version() -> *const c_char {
    concat!("damh ", env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn damh_run_config_default() -> DamhRunConfig {
    DamhRunConfig {
        seed: 1,
        iterations: 1000,
        burnin: 0,
        thin: 1,
        algorithm: DamhAlgorithm::Da,
        workers: 0,
        policy: DamhPolicy::ObservedRate,
        beta_cap: 0.9,
        proposal_sd: 1.0,
    }
}

/// New empty target of dimension `dim`.
#[no_mangle]
pub unsafe extern "C" fn damh_target_new(dim: usize, out: *mut *mut DamhTarget) -> DamhStatus {
    guard(|| {
        nonnull!(out);
        if dim == 0 {
            return fail(DamhStatus::InvalidArgument, "dimension must be >= 1");
        }
        let t = DamhTarget {
            builder: Some(FactorizedTarget::builder(dim)),
            built: None,
            dim,
        };
        unsafe { *out = Box::into_raw(Box::new(t)) };
        DamhStatus::Ok
    })
}

/// Appends a factor. Cheap factors must precede expensive ones. `name` may be null.
#[no_mangle]
pub unsafe extern "C" fn damh_target_add_factor(
    target: *mut DamhTarget,
    name: *const c_char,
    expensive: bool,
    term: Option<extern "C" fn(theta: *const f64, dim: usize, user_data: *mut c_void) -> f64>,
    user_data: *mut c_void,
) -> DamhStatus {
    guard(|| {
        nonnull!(target);
        let Some(f) = term else {
            return fail(DamhStatus::NullPointer, "term is null");
        };
        let t = unsafe { &mut *target };
        let Some(b) = t.builder.take() else {
            return fail(DamhStatus::InvalidArgument, "target is already finalized");
        };
        let name = if name.is_null() {
            "factor".to_string()
        } else {
            unsafe { CStr::from_ptr(name) }.to_string_lossy().into_owned()
        };
        let cb = Callback { f, user_data };
        let cost = if expensive { CostTier::Expensive } else { CostTier::Cheap };
        t.builder = Some(b.factor(name, cost, move |theta: &[f64]| cb.call(theta)));
        DamhStatus::Ok
    })
}

/// Validates the factor list; no factors can be added afterwards.
#[no_mangle]
pub unsafe extern "C" fn damh_target_finalize(target: *mut DamhTarget) -> DamhStatus {
    guard(|| {
        nonnull!(target);
        let t = unsafe { &mut *target };
        match t.builder.take() {
            None => DamhStatus::Ok,
            Some(b) => match b.build() {
                Ok(built) => {
                    t.built = Some(built);
                    DamhStatus::Ok
                }
                Err(e) => from_error(e),
            },
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn damh_target_free(target: *mut DamhTarget) {
    if !target.is_null() {
        drop(unsafe { Box::from_raw(target) });
    }
}

/// Runs a chain from `init` (length = target dimension). The target is
/// finalized first if needed.
#[no_mangle]
pub unsafe extern "C" fn damh_run(
    target: *mut DamhTarget,
    init: *const f64,
    init_len: usize,
    config: *const DamhRunConfig,
    out: *mut *mut DamhRun,
) -> DamhStatus {
    guard(|| {
        nonnull!(target, init, config, out);
        let status = unsafe { damh_target_finalize(target) };
        if status != DamhStatus::Ok {
            return status;
        }
        let t = unsafe { &*target };
        let Some(built) = t.built.as_ref() else {
            return fail(DamhStatus::Internal, "target not built");
        };
        if init_len != t.dim {
            return from_error(Error::DimensionMismatch {
                expected: t.dim,
                got: init_len,
            });
        }
        let cfg = unsafe { *config };
        let init = ParamVector::new(unsafe { slice::from_raw_parts(init, init_len) }.to_vec());
        match run_chain(built, init, &cfg) {
            Ok(output) => {
                unsafe { *out = Box::into_raw(Box::new(DamhRun { output })) };
                DamhStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

fn run_chain(target: &FactorizedTarget, init: ParamVector, cfg: &DamhRunConfig) -> damh::error::Result<RunOutput> {
    let kernel = ProposalKernel::isotropic(target.dimension(), cfg.proposal_sd)?;
    let schedule = make_schedule(cfg.seed, target.dimension(), target.len())?;
    let config = SamplerConfig {
        algorithm: match cfg.algorithm {
            DamhAlgorithm::Mh => Algorithm::Mh,
            DamhAlgorithm::Da => Algorithm::Da,
        },
        prefetch: (cfg.workers > 0).then(|| PrefetchConfig {
            workers: cfg.workers,
            policy: BranchPolicy::of_kind(cfg.policy.into(), cfg.beta_cap),
        }),
        burnin: cfg.burnin,
        iterations: cfg.iterations,
        thin: cfg.thin,
        order: OrderPolicy::default(),
        adapt: false,
    };
    Sampler::new(target, kernel, &schedule, config)?
        .run(init)
        .map_err(|f| f.error)
}

#[no_mangle]
pub unsafe extern "C" fn damh_run_free(run: *mut DamhRun) {
    if !run.is_null() {
        drop(unsafe { Box::from_raw(run) });
    }
}

/// Number of recorded draws.
#[no_mangle]
pub unsafe extern "C" fn damh_run_len(run: *const DamhRun) -> usize {
    if run.is_null() {
        return 0;
    }
    unsafe { &*run }.output.trace.len()
}

/// Dimension of each recorded draw.
#[no_mangle]
pub unsafe extern "C" fn damh_run_dim(run: *const DamhRun) -> usize {
    if run.is_null() {
        return 0;
    }
    unsafe { &*run }.output.final_state.theta.len()
}

/// Copies the draws row-major into `buf`, which must hold `len * dim` values.
#[no_mangle]
pub unsafe extern "C" fn damh_run_states(run: *const DamhRun, buf: *mut f64, buf_len: usize) -> DamhStatus {
    guard(|| {
        nonnull!(run, buf);
        let r = unsafe { &*run };
        let states = &r.output.trace.states;
        let need: usize = states.iter().map(|s| s.len()).sum();
        if buf_len < need {
            return fail(DamhStatus::BufferTooSmall, format!("need {need} values, got {buf_len}"));
        }
        let out = unsafe { slice::from_raw_parts_mut(buf, need) };
        for (dst, v) in out.iter_mut().zip(states.iter().flat_map(|s| s.iter())) {
            *dst = *v;
        }
        DamhStatus::Ok
    })
}

/// Acceptance rate over all steps, including burn-in.
#[no_mangle]
pub unsafe extern "C" fn damh_run_acceptance_rate(run: *const DamhRun, out: *mut f64) -> DamhStatus {
    guard(|| {
        nonnull!(run, out);
        unsafe { *out = (*run).output.stats.acceptance_rate() };
        DamhStatus::Ok
    })
}

/// Minimum per-coordinate effective sample size of the recorded draws.
#[no_mangle]
pub unsafe extern "C" fn damh_run_ess(run: *const DamhRun, out: *mut f64) -> DamhStatus {
    guard(|| {
        nonnull!(run, out);
        match trace_ess(unsafe { &(*run).output.trace }) {
            Ok((ess, _)) => {
                unsafe { *out = ess };
                DamhStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Product of `min(rho_k, 1)`.
#[no_mangle]
pub unsafe extern "C" fn damh_combined_acceptance_prob(rho: *const f64, n: usize, out: *mut f64) -> DamhStatus {
    guard(|| {
        nonnull!(rho, out);
        match combined_acceptance_prob(unsafe { slice::from_raw_parts(rho, n) }) {
            Ok(p) => {
                unsafe { *out = p };
                DamhStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Effective sample size of a scalar series.
#[no_mangle]
pub unsafe extern "C" fn damh_effective_sample_size(series: *const f64, n: usize, out: *mut f64) -> DamhStatus {
    guard(|| {
        nonnull!(series, out);
        match effective_sample_size(unsafe { slice::from_raw_parts(series, n) }) {
            Ok(v) => {
                unsafe { *out = v };
                DamhStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Greedy prefetch tour for a constant branch probability `alpha`. Writes up
/// to `cap` heap indices and reach probabilities in construction order and
/// the count to `written`. Indices beyond `u64` are reported as an error.
#[no_mangle]
pub unsafe extern "C" fn damh_build_tour(
    capacity: usize,
    alpha: f64,
    indices: *mut u64,
    gammas: *mut f64,
    cap: usize,
    written: *mut usize,
) -> DamhStatus {
    guard(|| {
        nonnull!(indices, gammas, written);
        if !(0.0..=1.0).contains(&alpha) {
            return fail(DamhStatus::InvalidArgument, format!("alpha {alpha} outside [0, 1]"));
        }
        let tour = (|| {
            let target = FactorizedTarget::builder(1)
                .factor("flat", CostTier::Expensive, |_: &[f64]| 0.0)
                .build()?;
            let kernel = ProposalKernel::isotropic(1, 1.0)?;
            let schedule = make_schedule(0, 1, 1)?;
            let root = ChainPoint::new(&target, ParamVector::zeros(1))?;
            let spec = TourSpec {
                target: &target,
                kernel: &kernel,
                schedule: &schedule,
                order: &[0],
                horizon: MAX_DEPTH,
            };
            build_tour(capacity, &BranchPolicy::observed(alpha), &root, 0, &spec)
        })();
        let tour = match tour {
            Ok(t) => t,
            Err(e) => return from_error(e),
        };
        if tour.nodes.len() > cap {
            return fail(
                DamhStatus::BufferTooSmall,
                format!("tour has {} nodes, buffer holds {cap}", tour.nodes.len()),
            );
        }
        let idx = unsafe { slice::from_raw_parts_mut(indices, tour.nodes.len()) };
        let gam = unsafe { slice::from_raw_parts_mut(gammas, tour.nodes.len()) };
        for (i, node) in tour.nodes.iter().enumerate() {
            let Ok(v) = u64::try_from(node.index) else {
                return fail(DamhStatus::InvalidArgument, format!("node index {} exceeds u64", node.index));
            };
            idx[i] = v;
            gam[i] = node.gamma;
        }
        unsafe { *written = tour.nodes.len() };
        DamhStatus::Ok
    })
}

/// Runs a full experiment from a TOML config (same keys as the CLI config
/// file) and writes `samples.csv` and `report.json` to its `out` directory.
#[no_mangle]
pub unsafe extern "C" fn damh_run_experiment_toml(config_toml: *const c_char) -> DamhStatus {
    guard(|| {
        nonnull!(config_toml);
        let text = match unsafe { CStr::from_ptr(config_toml) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail(DamhStatus::InvalidArgument, "config is not UTF-8"),
        };
        match ExperimentConfig::from_toml_str(text).and_then(|c| run_experiment(&c)) {
            Ok(_) => DamhStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}
