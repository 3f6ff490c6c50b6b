//! C ABI over `taxi_sentinel`.
//!
//! Handles are opaque pointers created by a `*_load` call and released with
//! the matching `*_free`. Every fallible call returns a [`TsStatus`]; on
//! failure, [`ts_last_error_message`] describes what went wrong on the calling
//! thread. Strings handed out through `out` parameters are owned by the caller
//! and must be released with [`ts_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use taxi_sentinel::collision::{overlap_density, risk_map};
use taxi_sentinel::graph::{load_graph, shortest_taxi_plan, AirportGraph};
use taxi_sentinel::rules::{compile_ruleset, RuleSet};
use taxi_sentinel::sim::{load_scenario, mc_collision_oracle, ScenarioConfig};
use taxi_sentinel::travel_time::RouteTimeDist;
use taxi_sentinel::Error;

/// Outcome of a call. Codes 1 to 3 mirror the CLI exit statuses.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    /// Bad input: unreadable or malformed files, unknown nodes, bad parameters.
    InvalidInput = 1,
    /// Valid input for which no result exists, such as plans that never meet.
    NoResult = 2,
    /// A broken internal invariant.
    Internal = 3,
    NullPointer = 4,
    InvalidUtf8 = 5,
    /// The library panicked; the handle involved should be freed.
    Panic = 6,
}

/// Compiled phraseology rules.
pub struct TsRuleSet(RuleSet);

/// Airport node-link layout.
pub struct TsGraph(AirportGraph);

/// Two-aircraft scenario with its graph, plans and sampling settings.
pub struct TsScenario(ScenarioConfig);

/// Monte Carlo estimate of the collision probability at one node.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TsOracleEstimate {
    pub p_hat: f64,
    pub standard_error: f64,
    pub samples: u64,
    pub hits: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Utf8(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TsStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(format!("{}: {e}", e.code()));
            match e.exit_code() {
                1 => TsStatus::InvalidInput,
                2 => TsStatus::NoResult,
                _ => TsStatus::Internal,
            }
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("NULL_POINTER: {what} is null"));
            TsStatus::NullPointer
        }
        Ok(Err(Failure::Utf8(what))) => {
            set_error(format!("INVALID_UTF8: {what} is not valid UTF-8"));
            TsStatus::InvalidUtf8
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("PANIC: {msg}"));
            TsStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_json(out: *mut *mut c_char, value: &serde_json::Value) -> Result<(), Failure> {
    let s = serde_json::to_string(value).expect("JSON values serialize");
    let c = CString::new(s).expect("JSON text has no nul bytes");
    put(out, c.into_raw(), "out")
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a
/// successful one. Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn ts_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and must not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ts_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Compiles a rules file. `tables_path` may be NULL for the bundled tables.
///
/// # Safety
/// Paths must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_rules_load(
    rules_path: *const c_char,
    tables_path: *const c_char,
    out: *mut *mut TsRuleSet,
) -> TsStatus {
    guard(|| {
        let rules = text(rules_path, "rules_path")?;
        let tables = if tables_path.is_null() {
            None
        } else {
            Some(text(tables_path, "tables_path")?)
        };
        let set = compile_ruleset(Path::new(rules), tables.map(Path::new))?;
        put(out, Box::into_raw(Box::new(TsRuleSet(set))), "out")
    })
}

/// # Safety
/// `rules` must come from [`ts_rules_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ts_rules_free(rules: *mut TsRuleSet) {
    if !rules.is_null() {
        drop(Box::from_raw(rules));
    }
}

/// Runs the rules over one utterance. Writes a JSON array of
/// `{start, end, label, rule, surface}` with character offsets.
///
/// # Safety
/// `rules` must be live, `utterance` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_rules_match_json(
    rules: *const TsRuleSet,
    utterance: *const c_char,
    out: *mut *mut c_char,
) -> TsStatus {
    guard(|| {
        let rules = &handle(rules, "rules")?.0;
        let utterance = text(utterance, "utterance")?;
        let spans: Vec<serde_json::Value> = rules
            .match_rules(utterance)
            .iter()
            .map(|s| {
                serde_json::json!({
                    "start": s.start,
                    "end": s.end,
                    "label": s.label.as_str(),
                    "rule": s.rule_id,
                    "surface": s.surface,
                })
            })
            .collect();
        put_json(out, &serde_json::Value::Array(spans))
    })
}

/// Loads an airport graph from JSON.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_graph_load(path: *const c_char, out: *mut *mut TsGraph) -> TsStatus {
    guard(|| {
        let g = load_graph(Path::new(text(path, "path")?))?;
        put(out, Box::into_raw(Box::new(TsGraph(g))), "out")
    })
}

/// # Safety
/// `graph` must come from [`ts_graph_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ts_graph_free(graph: *mut TsGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Number of nodes, or 0 for NULL.
///
/// # Safety
/// `graph` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn ts_graph_node_count(graph: *const TsGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.nodes().len())
}

/// Shortest taxi plan between two nodes, written as
/// `{callsign, nodes, links, start_time}` JSON.
///
/// # Safety
/// `graph` must be live, strings NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_graph_plan_json(
    graph: *const TsGraph,
    callsign: *const c_char,
    from: *const c_char,
    to: *const c_char,
    start_time: f64,
    out: *mut *mut c_char,
) -> TsStatus {
    guard(|| {
        let g = &handle(graph, "graph")?.0;
        let plan = shortest_taxi_plan(
            g,
            text(callsign, "callsign")?,
            text(from, "from")?,
            text(to, "to")?,
            &[],
            start_time,
        )?;
        put_json(out, &serde_json::to_value(&plan).expect("plans serialize"))
    })
}

/// Loads a scenario file; its graph path resolves against the file's folder.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_load(path: *const c_char, out: *mut *mut TsScenario) -> TsStatus {
    guard(|| {
        let sc = load_scenario(Path::new(text(path, "path")?))?;
        put(out, Box::into_raw(Box::new(TsScenario(sc))), "out")
    })
}

/// # Safety
/// `scenario` must come from [`ts_scenario_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_free(scenario: *mut TsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Analytic risk at every node shared by the first two plans, in the first
/// plan's order, as a JSON array of risk scores. An infinite overlap density
/// serializes as `null`.
///
/// # Safety
/// `scenario` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_risk_map_json(scenario: *const TsScenario, out: *mut *mut c_char) -> TsStatus {
    guard(|| {
        let sc = &handle(scenario, "scenario")?.0;
        if sc.aircraft.len() < 2 {
            return Err(Error::invalid("aircraft", "collision estimation needs two aircraft").into());
        }
        let scores = risk_map(&sc.aircraft[0], &sc.aircraft[1], &sc.graph, sc.r_c)?;
        put_json(out, &serde_json::to_value(&scores).expect("scores serialize"))
    })
}

/// Monte Carlo collision estimate at `spot` with the scenario's seed and
/// sample count.
///
/// # Safety
/// `scenario` must be live, `spot` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_oracle(
    scenario: *const TsScenario,
    spot: *const c_char,
    out: *mut TsOracleEstimate,
) -> TsStatus {
    guard(|| {
        let sc = &handle(scenario, "scenario")?.0;
        let est = mc_collision_oracle(sc, text(spot, "spot")?)?;
        let v = TsOracleEstimate {
            p_hat: est.p_hat,
            standard_error: est.standard_error,
            samples: est.samples as u64,
            hits: est.hits as u64,
        };
        put(out, v, "out")
    })
}

fn route(mu_log: f64, sigma_log: f64) -> Result<RouteTimeDist, Failure> {
    if !(mu_log.is_finite() && sigma_log.is_finite() && sigma_log > 0.0) {
        return Err(Error::invalid("sigma_log", format!("need finite mu_log and positive sigma_log, got ({mu_log}, {sigma_log})")).into());
    }
    let s2 = sigma_log * sigma_log;
    let m = (mu_log + 0.5 * s2).exp();
    Ok(RouteTimeDist {
        mu_star: mu_log,
        sigma_star: sigma_log,
        m,
        v: m * m * s2.exp_m1(),
        n_links: 1,
    })
}

/// Density at zero of the arrival-time difference of two log-normal route
/// times shifted by non-negative start offsets.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_overlap_density(
    mu1: f64,
    sigma1: f64,
    offset1: f64,
    mu2: f64,
    sigma2: f64,
    offset2: f64,
    out: *mut f64,
) -> TsStatus {
    guard(|| {
        let d = overlap_density(&route(mu1, sigma1)?, &route(mu2, sigma2)?, offset1, offset2)?;
        put(out, d, "out")
    })
}
