//! C interface to the rampmeter library.
//!
//! Every fallible function returns an [`RmStatus`]. On failure a
//! human-readable message is kept per thread and can be fetched with
//! [`rm_last_error_message`]. Objects are handed out as opaque pointers and
//! must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use indexmap::IndexMap;
use rampmeter::control::Controller;
use rampmeter::dynamics::MeasurementFrame;
use rampmeter::harness::{build_controller, run_experiment, ExperimentResult, Scenario};
use rampmeter::network::FreewayNetwork;
use rampmeter::Error;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Simulation = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> RmStatus {
    match err {
        Error::Io { .. } | Error::Csv(_) => RmStatus::Io,
        Error::Config(_) | Error::Scenario(_) | Error::Network(_) | Error::Budget { .. } => {
            RmStatus::Config
        }
        Error::Metric(_) | Error::UnknownRamp(_) | Error::NotAnOnRamp(_) => {
            RmStatus::InvalidArgument
        }
        _ => RmStatus::Simulation,
    }
}

struct Fail(RmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let mut msg = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            msg.push_str(": ");
            msg.push_str(&s.to_string());
            src = s.source();
        }
        Fail(status_of(&e), msg)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RmStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            RmStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(RmStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RmStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

/// Message of the last failure on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn rm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Weighted Gini coefficient of `n` values. `weights` may be null for unit
/// weights.
///
/// # Safety
/// `values` (and `weights` when given) must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn rm_gini(
    values: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut f64,
) -> RmStatus {
    guard(|| {
        let xs = slice(values, n, "values")?;
        let pairs: Vec<(f64, f64)> = if weights.is_null() {
            xs.iter().map(|&x| (x, 1.0)).collect()
        } else {
            xs.iter()
                .copied()
                .zip(slice(weights, n, "weights")?.iter().copied())
                .collect()
        };
        let g = rampmeter::metrics::gini(&pairs)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = g;
        Ok(())
    })
}

/// Fairness statistics of per-ramp average delays.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct RmFairness {
    /// Mean delay over ramps, s.
    pub harsanyian: f64,
    pub gini: f64,
    /// Largest ramp delay, s.
    pub rawlsian_max: f64,
    /// Demand-weighted mean delay, s.
    pub aristotelian: f64,
}

/// Fairness statistics of `n` ramp delays with their demands.
///
/// # Safety
/// `delays` and `demands` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_fairness(
    delays: *const f64,
    demands: *const f64,
    n: usize,
    out: *mut RmFairness,
) -> RmStatus {
    guard(|| {
        let d = slice(delays, n, "delays")?;
        let q = slice(demands, n, "demands")?;
        let key = |i: usize| format!("r{i}");
        let d: IndexMap<String, f64> = d.iter().enumerate().map(|(i, &x)| (key(i), x)).collect();
        let q: IndexMap<String, f64> = q.iter().enumerate().map(|(i, &x)| (key(i), x)).collect();
        let f = rampmeter::metrics::fairness(&d, &q)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = RmFairness {
            harsanyian: f.harsanyian,
            gini: f.gini,
            rawlsian_max: f.rawlsian_max,
            aristotelian: f.aristotelian,
        };
        Ok(())
    })
}

/// Parsed and validated scenario.
pub struct RmScenario {
    inner: Scenario,
}

/// Loads a scenario file. `overrides` holds `n_overrides` strings of the form
/// `section.key=value`; it may be null when `n_overrides` is 0.
///
/// # Safety
/// All strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_scenario_load(
    path: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut RmScenario,
) -> RmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = text(path, "path")?;
        let mut sets = Vec::with_capacity(n_overrides);
        if n_overrides > 0 {
            if overrides.is_null() {
                return Err(null("overrides"));
            }
            for i in 0..n_overrides {
                sets.push(text(*overrides.add(i), "override")?.to_string());
            }
        }
        let inner = Scenario::load(path, &sets)?;
        *out = Box::into_raw(Box::new(RmScenario { inner }));
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from [`rm_scenario_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rm_scenario_free(scenario: *mut RmScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

unsafe fn scenario_ref<'a>(p: *const RmScenario) -> Result<&'a Scenario, Fail> {
    p.as_ref().map(|s| &s.inner).ok_or_else(|| null("scenario"))
}

/// Runs one controller for one seed and writes its trips, ramp log,
/// space-time matrices and manifest into `out_dir`.
///
/// # Safety
/// `scenario` must be live; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rm_simulate(
    scenario: *const RmScenario,
    controller: *const c_char,
    seed: u64,
    out_dir: *const c_char,
) -> RmStatus {
    guard(|| {
        let s = scenario_ref(scenario)?;
        let name = text(controller, "controller")?;
        let dir = text(out_dir, "out_dir")?;
        rampmeter::cli::simulate(s, Some(name), Some(seed), Path::new(dir))?;
        Ok(())
    })
}

/// Aggregated result of one controller over several seeds.
pub struct RmExperiment {
    inner: ExperimentResult,
}

/// Runs a named controller over `n_seeds` seeds.
///
/// # Safety
/// `seeds` must point to `n_seeds` integers; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_experiment_run(
    scenario: *const RmScenario,
    controller: *const c_char,
    seeds: *const u64,
    n_seeds: usize,
    out: *mut *mut RmExperiment,
) -> RmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = scenario_ref(scenario)?;
        let name = text(controller, "controller")?;
        if n_seeds == 0 || seeds.is_null() {
            return Err(Fail(
                RmStatus::InvalidArgument,
                "at least one seed is required".into(),
            ));
        }
        let seeds = std::slice::from_raw_parts(seeds, n_seeds);
        let inner = run_experiment(s, name, seeds)?;
        *out = Box::into_raw(Box::new(RmExperiment { inner }));
        Ok(())
    })
}

/// Mean and sample standard deviation of a metric row such as
/// `"Total Delay (h)"` or `"Gini"`.
///
/// # Safety
/// `experiment` must be live; `mean` and `std` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_experiment_metric(
    experiment: *const RmExperiment,
    label: *const c_char,
    mean: *mut f64,
    std: *mut f64,
) -> RmStatus {
    guard(|| {
        let e = experiment.as_ref().ok_or_else(|| null("experiment"))?;
        let label = text(label, "label")?;
        let stat = e.inner.aggregate.get(label).ok_or_else(|| {
            let known: Vec<&str> = e.inner.aggregate.keys().map(String::as_str).collect();
            Fail(
                RmStatus::InvalidArgument,
                format!("no metric `{label}`; available: {}", known.join(", ")),
            )
        })?;
        if mean.is_null() || std.is_null() {
            return Err(null("mean/std"));
        }
        *mean = stat.mean;
        *std = stat.std;
        Ok(())
    })
}

/// # Safety
/// `experiment` must come from [`rm_experiment_run`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rm_experiment_free(experiment: *mut RmExperiment) {
    if !experiment.is_null() {
        drop(Box::from_raw(experiment));
    }
}

/// A controller driven cycle by cycle from outside.
pub struct RmController {
    net: FreewayNetwork,
    controller: Box<dyn Controller>,
    cycle: u64,
}

/// Builds the named controller block of a scenario on its network.
///
/// # Safety
/// `scenario` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rm_controller_new(
    scenario: *const RmScenario,
    controller: *const c_char,
    out: *mut *mut RmController,
) -> RmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = scenario_ref(scenario)?;
        let name = text(controller, "controller")?;
        let net = s.network()?;
        let spec = s.controller_spec(name)?;
        let controller = build_controller(&net, spec, s.simulation.cycle_s)?;
        *out = Box::into_raw(Box::new(RmController {
            net,
            controller,
            cycle: 0,
        }));
        Ok(())
    })
}

/// Number of on-ramps, the length of every per-ramp array.
///
/// # Safety
/// `controller` must be live or null (null yields 0).
#[no_mangle]
pub unsafe extern "C" fn rm_controller_n_ramps(controller: *const RmController) -> usize {
    controller.as_ref().map_or(0, |c| c.net.n_on_ramps())
}

/// Number of mainline cells, the length of the per-cell array.
///
/// # Safety
/// `controller` must be live or null (null yields 0).
#[no_mangle]
pub unsafe extern "C" fn rm_controller_n_cells(controller: *const RmController) -> usize {
    controller.as_ref().map_or(0, |c| c.net.n_cells())
}

fn write_decisions(
    d: &[rampmeter::control::Decision],
    rates: &mut [f64],
    flows: Option<&mut [f64]>,
) {
    for (r, x) in rates.iter_mut().zip(d) {
        *r = x.rate;
    }
    if let Some(flows) = flows {
        for (f, x) in flows.iter_mut().zip(d) {
            *f = x.flow_command_vph;
        }
    }
}

/// Resets the controller and writes its decisions for the first cycle.
/// `flows_vph` may be null.
///
/// # Safety
/// `rates` (and `flows_vph` when given) must hold one double per on-ramp.
#[no_mangle]
pub unsafe extern "C" fn rm_controller_initial(
    controller: *mut RmController,
    rates: *mut f64,
    flows_vph: *mut f64,
) -> RmStatus {
    guard(|| {
        let c = controller.as_mut().ok_or_else(|| null("controller"))?;
        let n = c.net.n_on_ramps();
        let rates = slice_mut(rates, n, "rates")?;
        let flows = if flows_vph.is_null() {
            None
        } else {
            Some(slice_mut(flows_vph, n, "flows_vph")?)
        };
        c.cycle = 0;
        let d = c.controller.initial();
        write_decisions(&d, rates, flows);
        Ok(())
    })
}

/// Feeds one cycle of measurements and writes the next decisions.
///
/// `ramp_occupancy` and `ramp_queue_veh` hold one value per on-ramp,
/// `cell_occupancy` one per cell (all occupancies in [0, 1]). `flows_vph`
/// may be null.
///
/// # Safety
/// Every non-null array must have the length described above.
#[no_mangle]
pub unsafe extern "C" fn rm_controller_step(
    controller: *mut RmController,
    ramp_occupancy: *const f64,
    ramp_queue_veh: *const f64,
    cell_occupancy: *const f64,
    rates: *mut f64,
    flows_vph: *mut f64,
) -> RmStatus {
    guard(|| {
        let c = controller.as_mut().ok_or_else(|| null("controller"))?;
        let (n, cells) = (c.net.n_on_ramps(), c.net.n_cells());
        let occupancy = slice(ramp_occupancy, n, "ramp_occupancy")?.to_vec();
        let queue_veh = slice(ramp_queue_veh, n, "ramp_queue_veh")?.to_vec();
        let cell_occupancy = slice(cell_occupancy, cells, "cell_occupancy")?.to_vec();
        if occupancy
            .iter()
            .chain(&cell_occupancy)
            .any(|o| !(0.0..=1.0).contains(o))
        {
            return Err(Fail(
                RmStatus::InvalidArgument,
                "occupancy outside [0, 1]".into(),
            ));
        }
        let cell_density: Vec<f64> = c
            .net
            .cells()
            .iter()
            .zip(&cell_occupancy)
            .map(|(cell, o)| o * cell.jam_density_vpkpl)
            .collect();
        let cell_speed_kmh = c
            .net
            .cells()
            .iter()
            .zip(&cell_density)
            .map(|(cell, &d)| cell.speed_kmh(d))
            .collect();
        c.cycle += 1;
        let frame = MeasurementFrame {
            cycle_index: c.cycle,
            occupancy,
            queue_veh,
            cell_occupancy,
            cell_density,
            cell_speed_kmh,
        };
        let d = c.controller.decide(&frame)?;
        let rates = slice_mut(rates, n, "rates")?;
        let flows = if flows_vph.is_null() {
            None
        } else {
            Some(slice_mut(flows_vph, n, "flows_vph")?)
        };
        write_decisions(&d, rates, flows);
        Ok(())
    })
}

/// # Safety
/// `controller` must come from [`rm_controller_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rm_controller_free(controller: *mut RmController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}
