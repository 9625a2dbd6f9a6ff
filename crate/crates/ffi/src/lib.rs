//! C ABI for the nullcore reasoner.
//!
//! Every exported function is prefixed `nc_`, returns an [`NcStatus`] and
//! never unwinds across the boundary. On failure a message is kept per
//! thread and can be read with [`nc_last_error`]. Strings handed out by the
//! library are owned by the caller and released with [`nc_string_free`].

#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nullcore::analysis::Analysis;
use nullcore::chase::{run_chase, ChaseConfig, ChaseError, ChaseVariant, Strategy, DEFAULT_MAX_STEPS};
use nullcore::entailment::{EntailmentError, Mode, Reasoner};
use nullcore::hom::core_of;
use nullcore::io::{emit_facts, emit_report, emit_report_json, parse_facts, parse_program, AnalysisReport, Program};
use nullcore::model::Interpretation;
use nullcore::stratified::{core_safe_chase, find_core_safe_stratification, StratifiedError};

/// Status codes; the non-zero values match the exit codes of the CLI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcStatus {
    Ok = 0,
    NotEntailed = 1,
    InputError = 2,
    StepLimit = 3,
    NoStratification = 4,
    NullArgument = 5,
    InvalidUtf8 = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcVariant {
    Restricted = 0,
    Skolem = 1,
    Oblivious = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcStrategy {
    Fifo = 0,
    DatalogFirst = 1,
    Random = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcMode {
    Auto = 0,
    Core = 1,
    Chase = 2,
}

/// Chase settings. A `max_steps` of 0 selects the default cap.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NcOptions {
    pub variant: NcVariant,
    pub strategy: NcStrategy,
    pub seed: u64,
    pub max_steps: u64,
}

/// A parsed program plus the database it is evaluated on.
pub struct NcProgram {
    program: Program,
    database: Interpretation,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(NcStatus, String);

impl From<ChaseError> for Fail {
    fn from(e: ChaseError) -> Fail {
        Fail(NcStatus::StepLimit, e.to_string())
    }
}

impl From<EntailmentError> for Fail {
    fn from(e: EntailmentError) -> Fail {
        match e {
            EntailmentError::Chase(c) => c.into(),
            other => Fail(NcStatus::InputError, other.to_string()),
        }
    }
}

impl From<StratifiedError> for Fail {
    fn from(e: StratifiedError) -> Fail {
        match e {
            StratifiedError::Chase(c) => c.into(),
            other => Fail(NcStatus::InputError, other.to_string()),
        }
    }
}

fn guard(f: impl FnOnce() -> Result<NcStatus, Fail>) -> NcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NcStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(NcStatus::NullArgument, format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(NcStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a>(p: *const NcProgram) -> Result<&'a NcProgram, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| Fail(NcStatus::NullArgument, "program is null".into()))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<NcStatus, Fail> {
    if out.is_null() {
        return Err(Fail(NcStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(s).map_err(|_| Fail(NcStatus::InputError, "output contains a nul byte".into()))?;
    unsafe { *out = c.into_raw() };
    Ok(NcStatus::Ok)
}

unsafe fn config(opts: *const NcOptions) -> ChaseConfig {
    let Some(o) = (unsafe { opts.as_ref() }) else {
        return ChaseConfig::default();
    };
    let variant = match o.variant {
        NcVariant::Restricted => ChaseVariant::Restricted,
        NcVariant::Skolem => ChaseVariant::Skolem,
        NcVariant::Oblivious => ChaseVariant::Oblivious,
    };
    let strategy = match o.strategy {
        NcStrategy::Fifo => Strategy::Fifo,
        NcStrategy::DatalogFirst => Strategy::DatalogFirst,
        NcStrategy::Random => Strategy::Random,
    };
    let max_steps = match o.max_steps {
        0 => DEFAULT_MAX_STEPS,
        n => usize::try_from(n).unwrap_or(usize::MAX),
    };
    ChaseConfig::new(variant, strategy, o.seed, max_steps)
}

/// The message of the last failed call on this thread, or null. The pointer
/// stays valid until the next `nc_` call on the same thread.
#[no_mangle]
pub extern "C" fn nc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default options: restricted chase, datalog-first, seed 0, default cap.
#[no_mangle]
pub extern "C" fn nc_options_default() -> NcOptions {
    NcOptions {
        variant: NcVariant::Restricted,
        strategy: NcStrategy::DatalogFirst,
        seed: 0,
        max_steps: 0,
    }
}

/// Parses program text and stores a new handle in `*out`.
///
/// # Safety
/// `source` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nc_program_parse(source: *const c_char, out: *mut *mut NcProgram) -> NcStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail(NcStatus::NullArgument, "output pointer is null".into()));
        }
        let src = unsafe { text(source, "source") }?;
        let program = parse_program(src).map_err(|e| Fail(NcStatus::InputError, e.to_string()))?;
        let database = program.facts.clone();
        let handle = Box::new(NcProgram { program, database });
        unsafe { *out = Box::into_raw(handle) };
        Ok(NcStatus::Ok)
    })
}

/// Adds facts in fact-file syntax (nulls allowed) to the program's database.
///
/// # Safety
/// `program` must come from `nc_program_parse`; `facts` must be a
/// nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nc_program_add_facts(program: *mut NcProgram, facts: *const c_char) -> NcStatus {
    guard(|| {
        let p = unsafe { program.as_mut() }.ok_or_else(|| Fail(NcStatus::NullArgument, "program is null".into()))?;
        let src = unsafe { text(facts, "facts") }?;
        let extra = parse_facts(src).map_err(|e| Fail(NcStatus::InputError, e.to_string()))?;
        p.database = p.database.union(&extra);
        Ok(NcStatus::Ok)
    })
}

/// Releases a program handle. Null is ignored.
///
/// # Safety
/// `program` must come from `nc_program_parse` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nc_program_free(program: *mut NcProgram) {
    if !program.is_null() {
        drop(unsafe { Box::from_raw(program) });
    }
}

/// Number of rules in the program, or 0 for a null handle.
///
/// # Safety
/// `program` must be null or come from `nc_program_parse`.
#[no_mangle]
pub unsafe extern "C" fn nc_program_rule_count(program: *const NcProgram) -> usize {
    unsafe { program.as_ref() }.map_or(0, |p| p.program.rules.len())
}

/// Number of queries in the program, or 0 for a null handle.
///
/// # Safety
/// `program` must be null or come from `nc_program_parse`.
#[no_mangle]
pub unsafe extern "C" fn nc_program_query_count(program: *const NcProgram) -> usize {
    unsafe { program.as_ref() }.map_or(0, |p| p.program.queries.len())
}

/// Runs the chase and writes the facts of the result to `*out`.
///
/// # Safety
/// `program` must come from `nc_program_parse`; `options` may be null;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_chase(
    program: *const NcProgram,
    options: *const NcOptions,
    out: *mut *mut c_char,
) -> NcStatus {
    guard(|| {
        let p = unsafe { handle(program) }?;
        let r = run_chase(&p.program.rules, &p.database, &unsafe { config(options) })?;
        unsafe { put_string(out, emit_facts(&r.instance)) }
    })
}

/// Writes the facts of the core of the restricted chase to `*out`.
///
/// # Safety
/// As for `nc_chase`.
#[no_mangle]
pub unsafe extern "C" fn nc_core(program: *const NcProgram, options: *const NcOptions, out: *mut *mut c_char) -> NcStatus {
    guard(|| {
        let p = unsafe { handle(program) }?;
        let cfg = unsafe { config(options) }.restricted();
        let r = run_chase(&p.program.rules, &p.database, &cfg)?;
        unsafe { put_string(out, emit_facts(&core_of(&r.instance))) }
    })
}

/// Computes the core-safe chase along a synthesized stratification and
/// writes the final facts to `*out`.
///
/// # Safety
/// As for `nc_chase`.
#[no_mangle]
pub unsafe extern "C" fn nc_solve(program: *const NcProgram, options: *const NcOptions, out: *mut *mut c_char) -> NcStatus {
    guard(|| {
        let p = unsafe { handle(program) }?;
        let analysis = Analysis::new(&p.program.rules);
        let s = find_core_safe_stratification(&analysis)
            .ok_or_else(|| Fail(NcStatus::NoStratification, "no core-safe stratification exists".into()))?;
        let r = core_safe_chase(&analysis, &s, &p.database, &unsafe { config(options) })?;
        unsafe { put_string(out, emit_facts(r.final_model())) }
    })
}

/// Writes the analysis report to `*out`, as JSON when `json` is non-zero.
///
/// # Safety
/// `program` must come from `nc_program_parse`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_analyze(program: *const NcProgram, json: c_int, out: *mut *mut c_char) -> NcStatus {
    guard(|| {
        let p = unsafe { handle(program) }?;
        let report = AnalysisReport::new(&Analysis::new(&p.program.rules), &p.program.queries, None);
        let s = if json != 0 { emit_report_json(&report) } else { emit_report(&report) };
        unsafe { put_string(out, s) }
    })
}

/// Answers the named query. Returns `Ok` when entailed and `NotEntailed`
/// otherwise; `*entailed` is set in both cases if non-null.
///
/// # Safety
/// `program` must come from `nc_program_parse`; `name` must be a
/// nul-terminated string; `options` and `entailed` may be null.
#[no_mangle]
pub unsafe extern "C" fn nc_query(
    program: *const NcProgram,
    name: *const c_char,
    mode: NcMode,
    options: *const NcOptions,
    entailed: *mut c_int,
) -> NcStatus {
    guard(|| {
        let p = unsafe { handle(program) }?;
        let name = unsafe { text(name, "query name") }?;
        let q = p
            .program
            .queries
            .iter()
            .find(|q| q.name() == name)
            .ok_or_else(|| Fail(NcStatus::InputError, format!("no query named {name}")))?;
        let mode = match mode {
            NcMode::Auto => Mode::Auto,
            NcMode::Core => Mode::Core,
            NcMode::Chase => Mode::Chase,
        };
        let answer = Reasoner::new(&p.program.rules, &p.database, &unsafe { config(options) }).answer(q, mode)?;
        if let Some(slot) = unsafe { entailed.as_mut() } {
            *slot = c_int::from(answer.entailed);
        }
        Ok(if answer.entailed { NcStatus::Ok } else { NcStatus::NotEntailed })
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn nc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
