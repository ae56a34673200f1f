//! Scenario runner behind the `bvc` binary.
//!
//! [`cmd_run`] executes scenario files and writes one trace and one stats
//! file per scenario, [`cmd_replay`] re-simulates a trace from its embedded
//! scenario and compares bytes, and [`cmd_stats`] summarizes a trace.
//! Each command returns a process exit code: [`EXIT_OK`], [`EXIT_CHECK`]
//! or [`EXIT_CONFIG`].

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use bounded_vc::labeling::{message_bound, revive_bound};
use bounded_vc::oracle::{
    global_invariants, max_revives_in_window, stats, stats_of_trace, EventLog, ExecutionStats,
    Oracle, OracleConfig,
};
use bounded_vc::simnet::scenario::{Scenario, ScenarioError};
use bounded_vc::simnet::trace::{parse_header, parse_trace, TraceParseError, TraceWriter};
use bounded_vc::simnet::{run, Observer, SimError};
use serde_json::json;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BVC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "bvc-out";

/// Scenario shipped with the binary: a fault-free run.
pub const CLEAN_SCENARIO: &str = include_str!("../scenarios/clean.scenario");
/// Scenario shipped with the binary: recovery from a corrupted start.
pub const TRANSIENT_SCENARIO: &str = include_str!("../scenarios/transient.scenario");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Scenario {
        path: PathBuf,
        source: ScenarioError,
    },
    #[error("unknown check {0:?}")]
    UnknownCheck(String),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trace(#[from] TraceParseError),
}

impl CliError {
    /// The exit code this error maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Write { .. } | CliError::Sim(_) => EXIT_CHECK,
            _ => EXIT_CONFIG,
        }
    }
}

/// A property verified at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Check {
    Requirement1,
    Causal,
    Shadow,
    Merge,
    Invariants,
    DoForever,
    Stabilized,
    Pigeonhole,
    GlobalInvariants,
    StaleTokens,
    ReviveWindow,
}

impl Check {
    pub const ALL: [Check; 11] = [
        Check::Requirement1,
        Check::Causal,
        Check::Shadow,
        Check::Merge,
        Check::Invariants,
        Check::DoForever,
        Check::Stabilized,
        Check::Pigeonhole,
        Check::GlobalInvariants,
        Check::StaleTokens,
        Check::ReviveWindow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Requirement1 => "requirement1",
            Check::Causal => "causal",
            Check::Shadow => "shadow",
            Check::Merge => "merge",
            Check::Invariants => "invariants",
            Check::DoForever => "do_forever",
            Check::Stabilized => "stabilized",
            Check::Pigeonhole => "pigeonhole",
            Check::GlobalInvariants => "global_invariants",
            Check::StaleTokens => "stale_tokens",
            Check::ReviveWindow => "revive_window",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Check {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::UnknownCheck(s.to_string()))
    }
}

/// Expands `all`, `none` and comma-separated names into a sorted set.
pub fn parse_checks<S: AsRef<str>>(items: &[S]) -> Result<Vec<Check>, CliError> {
    let mut out = Vec::new();
    for item in items {
        for name in item
            .as_ref()
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            match name {
                "all" => out.extend(Check::ALL),
                "none" => {}
                other => out.push(other.parse()?),
            }
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Overrides given on the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    pub out: Option<PathBuf>,
    pub checks: Option<String>,
    pub jobs: usize,
}

/// One evaluated check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub check: Check,
    pub passed: bool,
    pub detail: String,
}

/// Everything a single simulation produced.
pub struct Execution {
    pub scenario: Scenario,
    pub stats: ExecutionStats,
    pub oracle: Oracle,
    pub revive_window_max: u64,
    pub global_invariants: bool,
}

impl Execution {
    /// Evaluates `check` against this run.
    pub fn evaluate(&self, check: Check) -> CheckResult {
        let sc = &self.scenario;
        let (o, s) = (&self.oracle, &self.stats);
        let (passed, detail) = match check {
            Check::Requirement1 => (
                o.requirement1_violations() == 0,
                format!(
                    "{} violations in {} samples",
                    o.requirement1_violations(),
                    o.counts().requirement1_samples
                ),
            ),
            Check::Causal => (
                o.causal_violations() == 0,
                format!(
                    "{} violations in {} samples",
                    o.causal_violations(),
                    o.counts().causal_samples
                ),
            ),
            Check::Shadow => (
                o.shadow_violations() == 0,
                format!("{} mismatches", o.shadow_violations()),
            ),
            Check::Merge => (
                o.merge_violations() == 0,
                format!(
                    "{} mismatches in {} merges",
                    o.merge_violations(),
                    o.counts().merges_checked
                ),
            ),
            Check::Invariants => (
                o.unexplained_invariant_violations() == 0,
                format!(
                    "{} unexplained, {} after label adoption, {} handler checks",
                    o.unexplained_invariant_violations(),
                    o.invariant_violations() - o.unexplained_invariant_violations(),
                    o.counts().handler_checks
                ),
            ),
            Check::DoForever => {
                let un = o.unexplained_do_forever_restarts();
                (
                    un.iter().all(|&c| c <= 1),
                    format!(
                        "per processor {:?}, unexplained {:?}",
                        o.do_forever_restarts(),
                        un
                    ),
                )
            }
            Check::Stabilized => {
                let half = s.steps / 2;
                (
                    s.restart_free_from(half),
                    format!(
                        "last restart {:?}, second half starts at {half}",
                        s.last_restart_step
                    ),
                )
            }
            Check::Pigeonhole => (
                s.pigeonhole_holds(),
                format!(
                    "longest legal segment {} vs bound {:.1}",
                    s.max_segment,
                    s.pigeonhole_bound()
                ),
            ),
            Check::GlobalInvariants => (
                self.global_invariants,
                format!("{}", self.global_invariants),
            ),
            Check::StaleTokens => {
                let m = message_bound(sc.n, sc.c) as u64;
                (
                    s.stale_token_restarts <= m,
                    format!(
                        "{} stale-token restarts of {} receive restarts, bound {m}",
                        s.stale_token_restarts, s.receive_restarts
                    ),
                )
            }
            Check::ReviveWindow => {
                let bound = revive_bound(sc.n, sc.c) as u64;
                (
                    self.revive_window_max <= bound,
                    format!(
                        "{} per {} steps, bound {bound}",
                        self.revive_window_max, sc.maxint
                    ),
                )
            }
        };
        CheckResult {
            check,
            passed,
            detail,
        }
    }
}

/// Simulates `sc`, streaming its trace to `trace` when given.
pub fn execute(sc: &Scenario, trace: Option<&mut dyn Write>) -> Result<Execution, CliError> {
    let mut world = sc.build_world().map_err(|e| CliError::Scenario {
        path: PathBuf::new(),
        source: e,
    })?;
    let mut sched = sc.build_scheduler();
    let mut oracle = Oracle::new(OracleConfig::for_steps(sc.steps, sc.seed));
    let mut log = EventLog::new();
    let mut tw = match trace {
        Some(w) => TraceWriter::new(w),
        None => TraceWriter::discard(),
    };
    tw.header(&sc.to_toml())
        .map_err(|e| CliError::Sim(SimError::Trace(e.to_string())))?;
    {
        let mut obs: [&mut dyn Observer; 2] = [&mut log, &mut oracle];
        run(
            &mut world,
            sched.as_mut(),
            &sc.fault,
            sc.steps,
            &mut obs,
            &mut tw,
        )?;
    }
    let stats = stats(&log.events, sc.steps);
    Ok(Execution {
        scenario: sc.clone(),
        revive_window_max: max_revives_in_window(&log.events, sc.maxint),
        global_invariants: global_invariants(&world),
        stats,
        oracle,
    })
}

/// Re-simulates the scenario embedded in a trace and returns its bytes.
pub fn regenerate(header_line: &str) -> Result<Vec<u8>, CliError> {
    let header = parse_header(header_line)?;
    let sc = Scenario::from_toml(&header.scenario).map_err(|e| CliError::Scenario {
        path: PathBuf::from("<trace header>"),
        source: e,
    })?;
    let mut world = sc.build_world().map_err(|e| CliError::Scenario {
        path: PathBuf::new(),
        source: e,
    })?;
    let mut sched = sc.build_scheduler();
    let mut bytes = Vec::new();
    {
        let mut tw = TraceWriter::new(&mut bytes);
        tw.header(&sc.to_toml())
            .map_err(|e| CliError::Sim(SimError::Trace(e.to_string())))?;
        run(
            &mut world,
            sched.as_mut(),
            &sc.fault,
            sc.steps,
            &mut [],
            &mut tw,
        )?;
    }
    Ok(bytes)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Read {
        path: path.to_path_buf(),
        source: e,
    })?;
    Scenario::from_toml(&text).map_err(|e| CliError::Scenario {
        path: path.to_path_buf(),
        source: e,
    })
}

/// The output directory: the flag, then the scenario, then the environment.
pub fn output_dir(flag: Option<&Path>, sc: &Scenario) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| sc.out.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn apply_overrides(sc: &mut Scenario, opts: &RunOptions) -> Result<Vec<Check>, CliError> {
    if let Some(seed) = opts.seed {
        sc.seed = seed;
        if sc.fault.transient_seed.is_some() {
            sc.fault.transient_seed = Some(seed);
        }
    }
    if let Some(steps) = opts.steps {
        sc.steps = steps;
    }
    let checks = match &opts.checks {
        Some(list) => parse_checks(&[list])?,
        None => parse_checks(&sc.checks)?,
    };
    sc.checks = if checks.is_empty() {
        vec!["none".into()]
    } else {
        checks.iter().map(|c| c.name().into()).collect()
    };
    sc.validate().map_err(|e| CliError::Scenario {
        path: PathBuf::new(),
        source: e,
    })?;
    Ok(checks)
}

fn write_stats(path: &Path, exec: &Execution, results: &[CheckResult]) -> io::Result<()> {
    let s = &exec.stats;
    let doc = json!({
        "steps": s.steps,
        "b_restart": s.b_restart,
        "b_revive": s.b_revive,
        "b_newlabel": s.b_newlabel,
        "increments": s.increments,
        "ignored": s.ignored,
        "evictions": s.evictions,
        "do_forever_restarts": s.do_forever_restarts,
        "receive_restarts": s.receive_restarts,
        "stale_token_restarts": s.stale_token_restarts,
        "last_restart_step": s.last_restart_step,
        "f_r": s.f_r,
        "max_segment": s.max_segment,
        "legal_segments": s.legal_segments.len(),
        "pigeonhole_bound": s.pigeonhole_bound(),
        "revive_window_max": exec.revive_window_max,
        "checks": results.iter().map(|r| json!({
            "name": r.check.name(),
            "passed": r.passed,
            "detail": r.detail,
        })).collect::<Vec<_>>(),
    });
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, &doc)?;
    f.write_all(b"\n")?;
    f.flush()
}

/// A finished scenario: its report text and exit code.
struct Job {
    report: String,
    code: i32,
}

fn run_one(path: &Path, opts: &RunOptions) -> Result<Job, CliError> {
    let mut sc = load_scenario(path)?;
    let checks = apply_overrides(&mut sc, opts).map_err(|e| match e {
        CliError::Scenario { source, .. } => CliError::Scenario {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })?;
    let dir = output_dir(opts.out.as_deref(), &sc);
    fs::create_dir_all(&dir).map_err(|e| CliError::Write {
        path: dir.clone(),
        source: e,
    })?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario");
    let trace_path = dir.join(format!("{stem}-seed{}.trace.jsonl", sc.seed));
    let stats_path = dir.join(format!("{stem}-seed{}.stats.json", sc.seed));
    let file = File::create(&trace_path).map_err(|e| CliError::Write {
        path: trace_path.clone(),
        source: e,
    })?;
    let mut out = BufWriter::new(file);
    let exec = execute(&sc, Some(&mut out))?;
    out.flush().map_err(|e| CliError::Write {
        path: trace_path.clone(),
        source: e,
    })?;
    let results: Vec<CheckResult> = checks.iter().map(|&c| exec.evaluate(c)).collect();
    write_stats(&stats_path, &exec, &results).map_err(|e| CliError::Write {
        path: stats_path.clone(),
        source: e,
    })?;

    let mut report = String::new();
    let s = &exec.stats;
    report.push_str(&format!(
        "{}: {} steps, {} restarts, {} revives, {} new labels\n",
        path.display(),
        s.steps,
        s.b_restart,
        s.b_revive,
        s.b_newlabel
    ));
    for r in &results {
        report.push_str(&format!(
            "  {:<5} {:<18} {}\n",
            if r.passed { "ok" } else { "FAIL" },
            r.check,
            r.detail
        ));
    }
    report.push_str(&format!(
        "  trace {}\n  stats {}\n",
        trace_path.display(),
        stats_path.display()
    ));
    let code = if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_CHECK
    };
    Ok(Job { report, code })
}

/// Runs every scenario in `paths`, `opts.jobs` at a time.
///
/// The exit code is the largest of the per-scenario codes.
pub fn cmd_run(
    paths: &[PathBuf],
    opts: &RunOptions,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let jobs = opts.jobs.clamp(1, paths.len().max(1));
    let results: Vec<Mutex<Option<Result<Job, CliError>>>> =
        paths.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= paths.len() {
                    break;
                }
                let r = run_one(&paths[i], opts);
                *results[i].lock().expect("no panics while holding the lock") = Some(r);
            });
        }
    });
    let mut code = EXIT_OK;
    for slot in results {
        match slot
            .into_inner()
            .expect("workers finished")
            .expect("every scenario ran")
        {
            Ok(job) => {
                out.write_all(job.report.as_bytes()).ok();
                code = code.max(job.code);
            }
            Err(e) => {
                writeln!(err, "error: {e}").ok();
                code = code.max(e.exit_code());
            }
        }
    }
    code
}

fn first_difference(expected: &[u8], actual: &[u8]) -> (usize, String, String) {
    let mut a = expected.split(|&b| b == b'\n');
    let mut b = actual.split(|&b| b == b'\n');
    let mut line = 1;
    loop {
        match (a.next(), b.next()) {
            (Some(x), Some(y)) if x == y => line += 1,
            (x, y) => {
                let show = |v: Option<&[u8]>| {
                    v.map_or("<end of trace>".to_string(), |v| {
                        String::from_utf8_lossy(v).into_owned()
                    })
                };
                return (line, show(x), show(y));
            }
        }
    }
}

/// Re-simulates a trace and compares it byte for byte.
pub fn cmd_replay(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let recorded = match fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            writeln!(err, "error: {}: {e}", path.display()).ok();
            return EXIT_CONFIG;
        }
    };
    let header = match BufReader::new(recorded.as_slice()).lines().next() {
        Some(Ok(line)) => line,
        _ => {
            writeln!(err, "error: {}: empty or unreadable trace", path.display()).ok();
            return EXIT_CONFIG;
        }
    };
    let regenerated = match regenerate(&header) {
        Ok(b) => b,
        Err(e) => {
            writeln!(err, "error: {}: {e}", path.display()).ok();
            return e.exit_code();
        }
    };
    if regenerated == recorded {
        writeln!(
            out,
            "{}: identical ({} bytes)",
            path.display(),
            recorded.len()
        )
        .ok();
        EXIT_OK
    } else {
        let (line, want, got) = first_difference(&recorded, &regenerated);
        writeln!(out, "{}: diverges at line {line}", path.display()).ok();
        writeln!(out, "  recorded:    {want}").ok();
        writeln!(out, "  regenerated: {got}").ok();
        EXIT_CHECK
    }
}

/// Prints the statistics of a trace.
pub fn cmd_stats(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let parsed = match File::open(path)
        .map_err(TraceParseError::from)
        .and_then(|f| parse_trace(BufReader::new(f)))
    {
        Ok(t) => t,
        Err(e) => {
            writeln!(err, "error: {}: {e}", path.display()).ok();
            return EXIT_CONFIG;
        }
    };
    let s = stats_of_trace(&parsed);
    let lines = [
        format!("steps                {}", s.steps),
        format!("b_restart            {}", s.b_restart),
        format!("  do_forever         {:?}", s.do_forever_restarts),
        format!("  receive            {}", s.receive_restarts),
        format!("  stale_token        {}", s.stale_token_restarts),
        format!("b_revive             {}", s.b_revive),
        format!("b_newlabel           {}", s.b_newlabel),
        format!("increments           {}", s.increments),
        format!("ignored              {}", s.ignored),
        format!("evictions            {}", s.evictions),
        format!(
            "last_restart_step    {}",
            s.last_restart_step.map_or("none".into(), |v| v.to_string())
        ),
        format!("f_r                  {}", s.f_r),
        format!("legal_segments       {}", s.legal_segments.len()),
        format!("max_segment          {}", s.max_segment),
        format!("pigeonhole_bound     {:.1}", s.pigeonhole_bound()),
    ];
    for l in lines {
        writeln!(out, "{l}").ok();
    }
    EXIT_OK
}
