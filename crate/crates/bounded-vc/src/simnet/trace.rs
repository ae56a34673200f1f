//! Line-delimited JSON traces.
//!
//! The first line is a header carrying the schema name, its version and the
//! scenario text the run was built from. Each following line is one record
//! with a `kind` field; the last line is a `summary` record. Field names are
//! listed in `docs/trace-schema.md` at the repository root.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::Deserialize;
use thiserror::Error;

use super::{Action, ChannelFault, StepRecord, TransientScope, World};
use crate::protocol::{ProtoEvent, RestartCause};
use crate::ProcId;

pub const SCHEMA: &str = "bvc-trace";
pub const VERSION: u32 = 1;

/// Streams trace records to a writer, or drops them.
pub struct TraceWriter<'a> {
    out: Option<Box<dyn Write + 'a>>,
    line: String,
}

impl<'a> TraceWriter<'a> {
    pub fn new(out: impl Write + 'a) -> Self {
        TraceWriter {
            out: Some(Box::new(out)),
            line: String::with_capacity(256),
        }
    }

    /// A writer that formats nothing.
    pub fn discard() -> Self {
        TraceWriter {
            out: None,
            line: String::new(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.out.is_some()
    }

    fn emit(&mut self) -> io::Result<()> {
        if let Some(out) = self.out.as_mut() {
            self.line.push('\n');
            out.write_all(self.line.as_bytes())?;
        }
        self.line.clear();
        Ok(())
    }

    pub fn header(&mut self, scenario: &str) -> io::Result<()> {
        if self.out.is_none() {
            return Ok(());
        }
        let text = serde_json::to_string(scenario).map_err(io::Error::other)?;
        write!(
            self.line,
            "{{\"schema\":\"{SCHEMA}\",\"version\":{VERSION},\"scenario\":{text}}}"
        )
        .ok();
        self.emit()
    }

    fn int(&mut self, x: impl itoa::Integer) {
        self.line.push_str(itoa::Buffer::new().format(x));
    }

    fn key(&mut self, name: &str) {
        self.line.push_str(",\"");
        self.line.push_str(name);
        self.line.push_str("\":");
    }

    fn int_field(&mut self, name: &str, x: impl itoa::Integer) {
        self.key(name);
        self.int(x);
    }

    fn bool_field(&mut self, name: &str, b: bool) {
        self.key(name);
        self.line.push_str(if b { "true" } else { "false" });
    }

    fn open(&mut self, step: u64, proc: Option<ProcId>, kind: &str) {
        self.line.clear();
        self.line.push_str("{\"step\":");
        self.int(step);
        if let Some(p) = proc {
            self.int_field("proc", p.get());
        }
        self.line.push_str(",\"kind\":\"");
        self.line.push_str(kind);
        self.line.push('"');
    }

    fn close(&mut self) -> io::Result<()> {
        self.line.push('}');
        self.emit()
    }

    fn vec_field(&mut self, name: &str, v: &[u64]) {
        self.key(name);
        self.line.push('[');
        for (i, &x) in v.iter().enumerate() {
            if i > 0 {
                self.line.push(',');
            }
            self.int(x);
        }
        self.line.push(']');
    }

    fn opt_field(&mut self, name: &str, v: Option<u64>) {
        match v {
            Some(x) => self.int_field(name, x),
            None => {
                self.key(name);
                self.line.push_str("null");
            }
        }
    }

    /// Writes the records of one step; `w` is the world after the step.
    pub fn step(&mut self, rec: &StepRecord, w: &World) -> io::Result<()> {
        if self.out.is_none() {
            return Ok(());
        }
        let (step, p) = (rec.step, Some(rec.proc));
        match rec.action {
            Action::Begin { .. } | Action::Continue => {
                let (to, bid) = rec.sent.expect("send steps record a destination");
                self.open(step, p, "send");
                self.int_field("to", to.get());
                self.opt_field("bid", (bid != u64::MAX).then_some(bid));
                self.bool_field("begin", matches!(rec.action, Action::Begin { .. }));
                if let Some(env) = w.channel(rec.proc, to).back() {
                    let arriving = &env.msg.client.arriving;
                    self.line.push_str(",\"label\":\"");
                    arriving.curr_label().write_summary(&mut self.line);
                    self.line.push('"');
                    self.vec_field("m", arriving.curr_m());
                }
                self.bool_field("evicted", rec.evicted);
                self.close()?;
            }
            Action::Receive { from } => {
                let outcome = rec
                    .events
                    .iter()
                    .find_map(|e| match e {
                        ProtoEvent::Merged {
                            static_changed: true,
                            ..
                        } => Some("merged_static"),
                        ProtoEvent::Merged { .. } => Some("merged"),
                        ProtoEvent::Ignored { .. } => Some("ignored"),
                        ProtoEvent::RestartLocal {
                            cause: RestartCause::Receive,
                        } => Some("restart"),
                        _ => None,
                    })
                    .unwrap_or("none");
                self.open(step, p, "receive");
                self.int_field("from", from.get());
                self.opt_field("bid", rec.received.flatten());
                self.bool_field("stale", rec.received_stale);
                write!(self.line, ",\"outcome\":\"{outcome}\"").ok();
                self.vec_field("m", w.proc(rec.proc).local().curr_m());
                self.close()?;
            }
        }
        for e in &rec.events {
            match e {
                ProtoEvent::Increment => {
                    self.open(step, p, "increment");
                }
                ProtoEvent::Revive { new_label } => {
                    self.open(step, p, "revive");
                    write!(self.line, ",\"label\":\"{}\"", new_label.summary()).ok();
                }
                ProtoEvent::RestartLocal { cause } => {
                    self.open(step, p, "restart_local");
                    write!(self.line, ",\"cause\":\"{}\"", cause_str(*cause)).ok();
                    if *cause == RestartCause::Receive {
                        write!(self.line, ",\"stale\":{}", rec.received_stale).ok();
                    }
                }
                ProtoEvent::NewLabel { label } => {
                    self.open(step, p, "new_label");
                    write!(self.line, ",\"label\":\"{label}\"").ok();
                }
                ProtoEvent::Ignored { from, guard } => {
                    self.open(step, p, "ignored");
                    write!(
                        self.line,
                        ",\"from\":{from},\"guard\":\"{}\"",
                        guard.as_str()
                    )
                    .ok();
                }
                ProtoEvent::Merged { .. } => continue,
            }
            self.close()?;
        }
        Ok(())
    }

    pub fn crash(&mut self, step: u64, p: ProcId) -> io::Result<()> {
        if self.out.is_none() {
            return Ok(());
        }
        self.open(step, Some(p), "crash");
        self.close()
    }

    pub fn restart(&mut self, step: u64, p: ProcId) -> io::Result<()> {
        if self.out.is_none() {
            return Ok(());
        }
        self.open(step, Some(p), "restart");
        self.close()
    }

    pub fn transient(&mut self, seed: u64, scope: TransientScope) -> io::Result<()> {
        if self.out.is_none() {
            return Ok(());
        }
        self.open(0, None, "transient");
        write!(
            self.line,
            ",\"seed\":{seed},\"scope\":\"{}\"",
            scope.as_str()
        )
        .ok();
        self.close()
    }

    pub fn channel_fault(
        &mut self,
        step: u64,
        kind: ChannelFault,
        src: ProcId,
        dst: ProcId,
        applied: bool,
    ) -> io::Result<()> {
        if self.out.is_none() {
            return Ok(());
        }
        self.open(step, None, kind.as_str());
        write!(
            self.line,
            ",\"src\":{src},\"dst\":{dst},\"applied\":{applied}"
        )
        .ok();
        self.close()
    }

    pub fn summary(&mut self, s: &TraceSummary) -> io::Result<()> {
        if self.out.is_none() {
            return Ok(());
        }
        self.line.clear();
        write!(
            self.line,
            "{{\"kind\":\"summary\",\"steps\":{},\"b_restart\":{},\"b_revive\":{},\"b_newlabel\":{},\
             \"increments\":{},\"evictions\":{},\"idle_steps\":{}}}",
            s.steps, s.b_restart, s.b_revive, s.b_newlabel, s.increments, s.evictions, s.idle_steps
        )
        .ok();
        self.emit()
    }

    pub fn flush(&mut self) -> io::Result<()> {
        match self.out.as_mut() {
            Some(out) => out.flush(),
            None => Ok(()),
        }
    }
}

fn cause_str(c: RestartCause) -> &'static str {
    match c {
        RestartCause::DoForever => "do_forever",
        RestartCause::Receive => "receive",
    }
}

/// Totals written as the final record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
pub struct TraceSummary {
    pub steps: u64,
    pub b_restart: u64,
    pub b_revive: u64,
    pub b_newlabel: u64,
    pub increments: u64,
    pub evictions: u64,
    pub idle_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub version: u32,
    pub scenario: String,
}

/// The kind of a parsed record, with the fields the statistics need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceKind {
    Send {
        to: ProcId,
        evicted: bool,
    },
    Receive {
        from: ProcId,
    },
    Ignored {
        from: ProcId,
    },
    RestartLocal {
        cause: RestartCause,
        stale_token: bool,
    },
    Revive,
    NewLabel,
    Increment,
    Crash,
    Restart,
    Transient,
    ChannelFault,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub step: u64,
    pub proc: Option<ProcId>,
    pub kind: TraceKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    pub summary: Option<TraceSummary>,
}

#[derive(Debug, Error)]
pub enum TraceParseError {
    #[error("empty trace")]
    Empty,
    #[error("not a trace: schema {0:?}")]
    WrongSchema(String),
    #[error("unsupported trace version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Deserialize)]
struct RawRecord {
    kind: String,
    step: Option<u64>,
    proc: Option<u16>,
    to: Option<u16>,
    from: Option<u16>,
    evicted: Option<bool>,
    cause: Option<String>,
    stale: Option<bool>,
}

/// Reads and checks the header line only.
pub fn parse_header(line: &str) -> Result<TraceHeader, TraceParseError> {
    let header: TraceHeader =
        serde_json::from_str(line).map_err(|e| TraceParseError::Malformed {
            line: 1,
            msg: e.to_string(),
        })?;
    if header.schema != SCHEMA {
        return Err(TraceParseError::WrongSchema(header.schema));
    }
    if header.version != VERSION {
        return Err(TraceParseError::VersionMismatch {
            found: header.version,
            expected: VERSION,
        });
    }
    Ok(header)
}

pub fn parse_trace(input: impl BufRead) -> Result<ParsedTrace, TraceParseError> {
    let mut lines = input.lines();
    let first = lines.next().ok_or(TraceParseError::Empty)??;
    let header = parse_header(&first)?;
    let mut events = Vec::new();
    let mut summary = None;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| TraceParseError::Malformed { line: lineno, msg };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if raw.kind == "summary" {
            summary = Some(serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?);
            continue;
        }
        let id = |v: Option<u16>, name: &str| {
            v.and_then(ProcId::new)
                .ok_or_else(|| bad(format!("missing or invalid {name:?}")))
        };
        let kind = match raw.kind.as_str() {
            "send" => TraceKind::Send {
                to: id(raw.to, "to")?,
                evicted: raw.evicted.unwrap_or(false),
            },
            "receive" => TraceKind::Receive {
                from: id(raw.from, "from")?,
            },
            "ignored" => TraceKind::Ignored {
                from: id(raw.from, "from")?,
            },
            "restart_local" => TraceKind::RestartLocal {
                cause: match raw.cause.as_deref() {
                    Some("do_forever") => RestartCause::DoForever,
                    Some("receive") => RestartCause::Receive,
                    other => return Err(bad(format!("unknown restart cause {other:?}"))),
                },
                stale_token: raw.stale.unwrap_or(false),
            },
            "revive" => TraceKind::Revive,
            "new_label" => TraceKind::NewLabel,
            "increment" => TraceKind::Increment,
            "crash" => TraceKind::Crash,
            "restart" => TraceKind::Restart,
            "transient" => TraceKind::Transient,
            "duplicate" | "reorder" => TraceKind::ChannelFault,
            other => return Err(bad(format!("unknown kind {other:?}"))),
        };
        let step = raw.step.ok_or_else(|| bad("missing \"step\"".into()))?;
        let proc = match raw.proc {
            Some(v) => Some(ProcId::new(v).ok_or_else(|| bad("invalid \"proc\"".into()))?),
            None => None,
        };
        events.push(TraceEvent { step, proc, kind });
    }
    Ok(ParsedTrace {
        header,
        events,
        summary,
    })
}
