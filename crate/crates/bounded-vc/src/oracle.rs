//! Ground truth for simulated runs.
//!
//! [`Oracle`] is an [`Observer`] that keeps an unbounded shadow vector clock
//! per processor, records snapshots of every local pair and audits them as
//! the run proceeds. [`EventLog`] collects the same records a trace would
//! hold, and [`stats`] turns those records into [`ExecutionStats`].

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::labeling::legit_msg;
use crate::protocol::{ProtoEvent, RestartCause};
use crate::simnet::trace::{ParsedTrace, TraceEvent, TraceKind};
use crate::simnet::{Action, Observer, StepRecord, World};
use crate::vcpair::{
    causal_precedence, eq_lo, equal_static, event_count_query, exists_overlap, legit_pairs,
    pair_invar, vc, VectorClockPair,
};
use crate::ProcId;

/// A recorded value of one processor's local pair.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: u64,
    pub proc: ProcId,
    pub pair: VectorClockPair,
    /// `p`'s increments since the start.
    pub increments: u64,
    /// `p`'s `restartLocal` calls since the start.
    pub restarts: u64,
    /// Changes of `p`'s static pair part since the start that moved the
    /// old `curr` item into `prev`.
    pub static_changes: u64,
    /// Other changes of `p`'s static pair part, such as adopting a pair
    /// that wrapped concurrently from the same `prev`.
    pub lateral_changes: u64,
    /// Revive calls of every processor since the start.
    pub revives: Arc<[u64]>,
    /// The shadow vector, when it is still meaningful.
    pub shadow: Option<Arc<[u64]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// The event count query disagrees with the increment tally.
    EventCount { expected: u64, got: Option<u64> },
    /// `causal_precedence` disagrees with the shadow order.
    Causal { expected: bool, got: bool },
    /// `curr.m` differs from the shadow vector modulo `MAXINT`.
    ShadowMismatch { merge: bool },
    /// `local_invariants` failed after a completed handler.
    LocalInvariants {
        /// Since the processor's last do-forever iteration, a received message
        /// left `local.curr.ℓ` different from `getLabel()`.
        after_adoption: bool,
    },
}

/// A failed check, located by the steps of the states involved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub proc: ProcId,
    pub step: u64,
    pub earlier_step: Option<u64>,
}

fn shadow_lt(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Whether Requirement 1 applies to the pair `x` (earlier) and `y` (later)
/// of one processor: the shadow tally still holds at both, and at most one
/// forward static change lies in between.
pub fn requirement1_eligible(x: &Snapshot, y: &Snapshot) -> bool {
    x.proc == y.proc
        && x.shadow.is_some()
        && y.shadow.is_some()
        && x.restarts == y.restarts
        && x.lateral_changes == y.lateral_changes
        && y.static_changes - x.static_changes <= 1
}

/// Checks one sample. Samples without a valid shadow tally are skipped, and
/// queries outside the eligible range only have to be right when they answer.
pub fn requirement1_violation(x: &Snapshot, y: &Snapshot, maxint: u64) -> Option<Violation> {
    if x.proc != y.proc
        || x.restarts != y.restarts
        || x.step > y.step
        || x.shadow.is_none()
        || y.shadow.is_none()
    {
        return None;
    }
    let i = x.proc.index();
    let expected = y.increments - x.increments;
    let got = event_count_query(&x.pair, &y.pair, i, maxint);
    let bad = match got {
        Some(v) => v != expected,
        None => requirement1_eligible(x, y),
    };
    bad.then_some(Violation {
        kind: ViolationKind::EventCount { expected, got },
        proc: y.proc,
        step: y.step,
        earlier_step: Some(x.step),
    })
}

/// Whether `x` and `y` lie in one legal stretch: no restart anywhere (the
/// shadow is still valid) and at most one revive per processor in between.
pub fn within_legal_stretch(x: &Snapshot, y: &Snapshot) -> bool {
    let (a, b) = if x.step <= y.step { (x, y) } else { (y, x) };
    a.shadow.is_some()
        && b.shadow.is_some()
        && a.revives
            .iter()
            .zip(b.revives.iter())
            .all(|(u, v)| v - u <= 1)
}

/// Checks `causal_precedence` in both directions against the shadow order.
/// Samples without a pivot, or outside one legal stretch, are skipped.
pub fn causal_violation(x: &Snapshot, y: &Snapshot, maxint: u64) -> Option<Violation> {
    if !within_legal_stretch(x, y) || exists_overlap(&x.pair, &y.pair).is_none() {
        return None;
    }
    let (sx, sy) = (x.shadow.as_ref()?, y.shadow.as_ref()?);
    for (a, b, sa, sb) in [(x, y, sx, sy), (y, x, sy, sx)] {
        let expected = shadow_lt(sa, sb);
        let got = causal_precedence(&a.pair, &b.pair, maxint);
        if expected != got {
            return Some(Violation {
                kind: ViolationKind::Causal { expected, got },
                proc: b.proc,
                step: b.step,
                earlier_step: Some(a.step),
            });
        }
    }
    None
}

/// Runs [`requirement1_violation`] over index pairs into `snaps`.
pub fn check_requirement1(
    snaps: &[Snapshot],
    samples: &[(usize, usize)],
    maxint: u64,
) -> Vec<Violation> {
    samples
        .iter()
        .filter_map(|&(a, b)| requirement1_violation(&snaps[a], &snaps[b], maxint))
        .collect()
}

/// Runs [`causal_violation`] over index pairs into `snaps`.
pub fn check_causal(snaps: &[Snapshot], samples: &[(usize, usize)], maxint: u64) -> Vec<Violation> {
    samples
        .iter()
        .filter_map(|&(a, b)| causal_violation(&snaps[a], &snaps[b], maxint))
        .collect()
}

/// `globalInvariants`: every live processor satisfies its local invariants,
/// and every in-flight message that would pass the arrival guard carries a
/// pair that is legitimate with respect to the receiver's local pair.
pub fn global_invariants(w: &World) -> bool {
    let maxint = w.sys().maxint();
    for p in w.live() {
        if !w.proc(p).local_invariants().unwrap_or(false) {
            return false;
        }
    }
    for ch in w.channels() {
        if w.is_crashed(ch.dst()) {
            continue;
        }
        let local = w.proc(ch.dst()).local();
        for env in ch.messages() {
            let arriving = &env.msg.client.arriving;
            let passes = equal_static(local, &env.msg.client.rcvd_local)
                && legit_msg(&env.msg, arriving.curr_label())
                && pair_invar(arriving, maxint);
            if passes && !legit_pairs(local, arriving) {
                return false;
            }
        }
    }
    true
}

/// Sampling and checking options.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Fraction of state changes that are snapshotted.
    pub sample_rate: f64,
    pub seed: u64,
    /// Snapshots of each processor kept for random earlier samples.
    pub history: usize,
    /// Random earlier samples compared with each new snapshot.
    pub random_samples: usize,
}

/// Runs up to this many steps are checked at full density.
pub const FULL_DENSITY_STEPS: u64 = 100_000;

impl OracleConfig {
    /// Full density up to [`FULL_DENSITY_STEPS`], then a proportional rate.
    pub fn for_steps(steps: u64, seed: u64) -> Self {
        let sample_rate = if steps <= FULL_DENSITY_STEPS {
            1.0
        } else {
            FULL_DENSITY_STEPS as f64 / steps as f64
        };
        OracleConfig {
            sample_rate,
            seed,
            history: 256,
            random_samples: 2,
        }
    }
}

#[derive(Debug, Default)]
struct ProcTrack {
    last: Option<Snapshot>,
    epoch_first: Option<Snapshot>,
    prev_epoch_first: Option<Snapshot>,
    history: VecDeque<Snapshot>,
    static_changes: u64,
    lateral_changes: u64,
    began: bool,
    adopted: bool,
    do_forever: u64,
    do_forever_unexplained: u64,
}

/// Totals kept by the [`Oracle`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleCounts {
    pub snapshots: u64,
    pub requirement1_samples: u64,
    /// Samples where the query is absent and not required to answer.
    pub requirement1_excluded: u64,
    pub causal_samples: u64,
    pub causal_skipped: u64,
    pub merges_checked: u64,
    pub handler_checks: u64,
}

/// Lockstep auditor.
pub struct Oracle {
    cfg: OracleConfig,
    rng: ChaCha8Rng,
    maxint: u64,
    n: usize,
    procs: Vec<ProcTrack>,
    shadow: Vec<Vec<u64>>,
    shadow_valid: bool,
    tainted: Vec<bool>,
    in_flight: HashMap<u64, (Arc<[u64]>, u32)>,
    revives: Vec<u64>,
    violations: Vec<Violation>,
    counts: OracleCounts,
}

impl Oracle {
    pub fn new(cfg: OracleConfig) -> Self {
        Oracle {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            maxint: 0,
            n: 0,
            procs: Vec::new(),
            shadow: Vec::new(),
            shadow_valid: false,
            tainted: Vec::new(),
            in_flight: HashMap::new(),
            revives: Vec::new(),
            violations: Vec::new(),
            counts: OracleCounts::default(),
        }
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn counts(&self) -> &OracleCounts {
        &self.counts
    }

    /// Whether the shadow clock is still tracking (no corruption, no restart).
    pub fn shadow_valid(&self) -> bool {
        self.shadow_valid
    }

    pub fn shadow_of(&self, p: ProcId) -> &[u64] {
        &self.shadow[p.index()]
    }

    fn count_of(&self, pred: impl Fn(&ViolationKind) -> bool) -> usize {
        self.violations.iter().filter(|v| pred(&v.kind)).count()
    }

    pub fn requirement1_violations(&self) -> usize {
        self.count_of(|k| matches!(k, ViolationKind::EventCount { .. }))
    }

    pub fn causal_violations(&self) -> usize {
        self.count_of(|k| matches!(k, ViolationKind::Causal { .. }))
    }

    pub fn shadow_violations(&self) -> usize {
        self.count_of(|k| matches!(k, ViolationKind::ShadowMismatch { .. }))
    }

    pub fn merge_violations(&self) -> usize {
        self.count_of(|k| matches!(k, ViolationKind::ShadowMismatch { merge: true }))
    }

    pub fn invariant_violations(&self) -> usize {
        self.count_of(|k| matches!(k, ViolationKind::LocalInvariants { .. }))
    }

    /// Invariant violations not preceded by such a receive.
    pub fn unexplained_invariant_violations(&self) -> usize {
        self.count_of(|k| {
            matches!(
                k,
                ViolationKind::LocalInvariants {
                    after_adoption: false
                }
            )
        })
    }

    /// Do-forever restarts per processor.
    pub fn do_forever_restarts(&self) -> Vec<u64> {
        self.procs.iter().map(|t| t.do_forever).collect()
    }

    /// Do-forever restarts per processor not preceded, since the processor's
    /// previous do-forever iteration, by a receive that left `local.curr.ℓ`
    /// different from `getLabel()`.
    pub fn unexplained_do_forever_restarts(&self) -> Vec<u64> {
        self.procs
            .iter()
            .map(|t| t.do_forever_unexplained)
            .collect()
    }

    fn update_shadow(&mut self, rec: &StepRecord) {
        let p = rec.proc.index();
        if rec
            .events
            .iter()
            .any(|e| matches!(e, ProtoEvent::RestartLocal { .. }))
        {
            self.shadow_valid = false;
            self.in_flight.clear();
            return;
        }
        if let Some(bid) = rec.evicted_broadcast {
            self.release(bid);
        }
        match rec.action {
            Action::Begin { .. } | Action::Continue => {
                if rec
                    .events
                    .iter()
                    .any(|e| matches!(e, ProtoEvent::Increment))
                {
                    self.shadow[p][p] += 1;
                }
                if let (Action::Begin { .. }, Some((_, bid))) = (rec.action, rec.sent) {
                    let snap: Arc<[u64]> = self.shadow[p].clone().into();
                    self.in_flight.insert(bid, (snap, self.n as u32 - 1));
                }
            }
            Action::Receive { .. } => {
                let origin = rec.received.flatten();
                let shadow =
                    origin.and_then(|bid| self.in_flight.get(&bid).map(|(s, _)| s.clone()));
                if let Some(bid) = origin {
                    self.release(bid);
                }
                if rec
                    .events
                    .iter()
                    .any(|e| matches!(e, ProtoEvent::Merged { .. }))
                {
                    match shadow {
                        Some(s) => {
                            for (a, b) in self.shadow[p].iter_mut().zip(s.iter()) {
                                *a = (*a).max(*b);
                            }
                        }
                        None => self.tainted[p] = true,
                    }
                }
            }
        }
    }

    fn release(&mut self, bid: u64) {
        if let Some(entry) = self.in_flight.get_mut(&bid) {
            entry.1 = entry.1.saturating_sub(1);
            if entry.1 == 0 {
                self.in_flight.remove(&bid);
            }
        }
    }

    fn check_shadow(&mut self, w: &World, rec: &StepRecord) {
        let p = rec.proc;
        if !self.shadow_valid || self.tainted[p.index()] {
            return;
        }
        let merge = rec
            .events
            .iter()
            .any(|e| matches!(e, ProtoEvent::Merged { .. }));
        if merge {
            self.counts.merges_checked += 1;
        }
        let m = w.proc(p).local().curr_m();
        let ok = m
            .iter()
            .zip(&self.shadow[p.index()])
            .all(|(&a, &s)| a % self.maxint == s % self.maxint);
        if !ok {
            self.violations.push(Violation {
                kind: ViolationKind::ShadowMismatch { merge },
                proc: p,
                step: rec.step,
                earlier_step: None,
            });
        }
    }

    fn check_handler(&mut self, w: &World, rec: &StepRecord) {
        let p = rec.proc;
        let state = w.proc(p);
        let label = state.labeling().get_label().ok();
        let track = &mut self.procs[p.index()];
        if rec.action.is_send() {
            if rec.events.iter().any(|e| {
                matches!(
                    e,
                    ProtoEvent::RestartLocal {
                        cause: RestartCause::DoForever
                    }
                )
            }) {
                track.do_forever += 1;
                if !track.adopted {
                    track.do_forever_unexplained += 1;
                }
            }
            if matches!(rec.action, Action::Begin { .. }) {
                track.adopted = false;
                track.began = true;
            }
        } else if label
            .as_ref()
            .map_or(true, |l| !l.eq_m(state.local().curr_label()))
        {
            track.adopted = true;
        }
        if !track.began {
            return;
        }
        let after_adoption = track.adopted;
        self.counts.handler_checks += 1;
        if !state.local_invariants().unwrap_or(false) {
            self.violations.push(Violation {
                kind: ViolationKind::LocalInvariants { after_adoption },
                proc: p,
                step: rec.step,
                earlier_step: None,
            });
        }
    }

    fn record(&mut self, w: &World, rec: &StepRecord) {
        let p = rec.proc;
        let state = w.proc(p);
        let local = state.local();
        let changed_static;
        {
            let track = &mut self.procs[p.index()];
            let wrapped;
            (changed_static, wrapped) = match &track.last {
                Some(s) if s.pair == *local => return,
                Some(s) if !equal_static(&s.pair, local) => {
                    (true, eq_lo(s.pair.curr(), local.prev()))
                }
                _ => (false, false),
            };
            match (changed_static, wrapped) {
                (true, true) => track.static_changes += 1,
                (true, false) => track.lateral_changes += 1,
                _ => {}
            }
        }
        let sampled =
            self.cfg.sample_rate >= 1.0 || self.rng.gen_bool(self.cfg.sample_rate.max(0.0));
        let snap = Snapshot {
            step: rec.step,
            proc: p,
            pair: local.clone(),
            increments: state.counters().increments,
            restarts: state.counters().restart_calls,
            static_changes: self.procs[p.index()].static_changes,
            lateral_changes: self.procs[p.index()].lateral_changes,
            revives: self.revives.clone().into(),
            shadow: (self.shadow_valid && !self.tainted[p.index()])
                .then(|| self.shadow[p.index()].clone().into()),
        };
        if sampled {
            self.counts.snapshots += 1;
            self.audit(&snap);
        }
        let track = &mut self.procs[p.index()];
        if changed_static || track.epoch_first.is_none() {
            track.prev_epoch_first = track.epoch_first.take();
            track.epoch_first = Some(snap.clone());
        }
        if sampled {
            if track.history.len() == self.cfg.history {
                track.history.pop_front();
            }
            track.history.push_back(snap.clone());
        }
        track.last = Some(snap);
    }

    fn audit(&mut self, y: &Snapshot) {
        let track = &self.procs[y.proc.index()];
        let mut own: Vec<Snapshot> = Vec::with_capacity(3 + self.cfg.random_samples);
        own.extend(track.last.iter().cloned());
        own.extend(track.epoch_first.iter().cloned());
        own.extend(track.prev_epoch_first.iter().cloned());
        for _ in 0..self.cfg.random_samples {
            if !track.history.is_empty() {
                let i = self.rng.gen_range(0..track.history.len());
                own.push(track.history[i].clone());
            }
        }
        let others: Vec<Snapshot> = (0..self.n)
            .filter(|&j| j != y.proc.index())
            .filter_map(|j| self.procs[j].last.clone())
            .collect();
        for x in own.iter() {
            self.counts.requirement1_samples += 1;
            if !requirement1_eligible(x, y) {
                self.counts.requirement1_excluded += 1;
            }
            if let Some(v) = requirement1_violation(x, y, self.maxint) {
                self.violations.push(v);
            }
        }
        for x in own.iter().chain(&others) {
            if !within_legal_stretch(x, y) || exists_overlap(&x.pair, &y.pair).is_none() {
                self.counts.causal_skipped += 1;
                continue;
            }
            self.counts.causal_samples += 1;
            if let Some(v) = causal_violation(x, y, self.maxint) {
                self.violations.push(v);
            }
        }
    }
}

impl Observer for Oracle {
    fn on_start(&mut self, w: &World) {
        self.n = w.n();
        self.maxint = w.sys().maxint();
        self.procs = (0..self.n).map(|_| ProcTrack::default()).collect();
        self.shadow = vec![vec![0; self.n]; self.n];
        self.shadow_valid = !w.corrupted();
        self.tainted = vec![false; self.n];
        self.revives = vec![0; self.n];
        for p in ProcId::all(self.n) {
            let local = w.proc(p).local();
            let state = w.proc(p);
            self.procs[p.index()].last = Some(Snapshot {
                step: 0,
                proc: p,
                pair: local.clone(),
                increments: state.counters().increments,
                restarts: state.counters().restart_calls,
                static_changes: 0,
                lateral_changes: 0,
                revives: self.revives.clone().into(),
                shadow: self
                    .shadow_valid
                    .then(|| self.shadow[p.index()].clone().into()),
            });
            let first = self.procs[p.index()].last.clone();
            self.procs[p.index()].epoch_first = first;
        }
    }

    fn on_step(&mut self, w: &World, rec: &StepRecord) {
        for e in &rec.events {
            if matches!(e, ProtoEvent::Revive { .. }) {
                self.revives[rec.proc.index()] += 1;
            }
        }
        if self.shadow_valid {
            self.update_shadow(rec);
        }
        self.check_shadow(w, rec);
        self.check_handler(w, rec);
        self.record(w, rec);
    }

    fn on_restart(&mut self, _w: &World, _p: ProcId) {
        self.in_flight.clear();
        self.shadow_valid = false;
    }
}

/// Collects trace records in memory, without formatting them.
#[derive(Debug, Default, Clone)]
pub struct EventLog {
    pub events: Vec<TraceEvent>,
    pub steps: u64,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Observer for EventLog {
    fn on_start(&mut self, w: &World) {
        if w.corrupted() {
            self.events.push(TraceEvent {
                step: 0,
                proc: None,
                kind: TraceKind::Transient,
            });
        }
    }

    fn on_step(&mut self, _w: &World, rec: &StepRecord) {
        let (step, proc) = (rec.step, Some(rec.proc));
        let kind = match rec.action {
            Action::Receive { from } => TraceKind::Receive { from },
            _ => TraceKind::Send {
                to: rec.sent.map(|(d, _)| d).unwrap_or(rec.proc),
                evicted: rec.evicted,
            },
        };
        self.events.push(TraceEvent { step, proc, kind });
        for e in &rec.events {
            let kind = match e {
                ProtoEvent::Increment => TraceKind::Increment,
                ProtoEvent::Revive { .. } => TraceKind::Revive,
                ProtoEvent::RestartLocal { cause } => TraceKind::RestartLocal {
                    cause: *cause,
                    stale_token: rec.received_stale,
                },
                ProtoEvent::NewLabel { .. } => TraceKind::NewLabel,
                ProtoEvent::Ignored { from, .. } => TraceKind::Ignored { from: *from },
                ProtoEvent::Merged { .. } => continue,
            };
            self.events.push(TraceEvent { step, proc, kind });
        }
        self.steps = rec.step + 1;
    }

    fn on_crash(&mut self, w: &World, p: ProcId) {
        self.events.push(TraceEvent {
            step: w.clock(),
            proc: Some(p),
            kind: TraceKind::Crash,
        });
    }

    fn on_restart(&mut self, w: &World, p: ProcId) {
        self.events.push(TraceEvent {
            step: w.clock(),
            proc: Some(p),
            kind: TraceKind::Restart,
        });
    }

    fn on_end(&mut self, w: &World) {
        self.steps = w.clock();
    }
}

/// A maximal interval of steps `[start, end]` with no `restartLocal` and at
/// most one revive per processor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: u64,
    pub end: u64,
}

impl Segment {
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Segments {
    pub segments: Vec<Segment>,
    pub max_len: u64,
    /// Steps outside every segment.
    pub outside: u64,
}

#[derive(Default, Clone)]
struct StepFaults {
    restart: bool,
    revives: Vec<(usize, u32)>,
}

/// Extracts the maximal legal segments of steps `0..total_steps`.
pub fn find_legal_segments(events: &[TraceEvent], total_steps: u64) -> Segments {
    let mut marks: Vec<(u64, StepFaults)> = Vec::new();
    let mut n = 0usize;
    for e in events {
        let is_restart = matches!(e.kind, TraceKind::RestartLocal { .. });
        let is_revive = matches!(e.kind, TraceKind::Revive);
        if !(is_restart || is_revive) {
            continue;
        }
        if marks.last().map(|(s, _)| *s) != Some(e.step) {
            marks.push((e.step, StepFaults::default()));
        }
        let f = &mut marks.last_mut().expect("just pushed").1;
        if is_restart {
            f.restart = true;
        }
        if let (true, Some(p)) = (is_revive, e.proc) {
            n = n.max(p.index() + 1);
            match f.revives.iter_mut().find(|(q, _)| *q == p.index()) {
                Some((_, c)) => *c += 1,
                None => f.revives.push((p.index(), 1)),
            }
        }
    }
    marks.sort_by_key(|(s, _)| *s);

    let mut out = Segments::default();
    let mut counts = vec![0u32; n];
    // Marks inside the current window, as indices into `marks`.
    let mut window: VecDeque<usize> = VecDeque::new();
    let mut start = 0u64;
    let close = |out: &mut Segments, start: u64, end_excl: u64| {
        if end_excl > start {
            let seg = Segment {
                start,
                end: end_excl - 1,
            };
            out.max_len = out.max_len.max(seg.len());
            out.segments.push(seg);
        }
    };
    for (mi, (step, f)) in marks.iter().enumerate() {
        if *step >= total_steps {
            break;
        }
        if f.restart || f.revives.iter().any(|&(_, c)| c > 1) {
            close(&mut out, start, *step);
            out.outside += 1;
            window.clear();
            counts.iter_mut().for_each(|c| *c = 0);
            start = step + 1;
            continue;
        }
        let violates = f.revives.iter().any(|&(p, _)| counts[p] >= 1);
        if violates {
            close(&mut out, start, *step);
            while f.revives.iter().any(|&(p, _)| counts[p] >= 1) {
                let old = window
                    .pop_front()
                    .expect("a conflicting mark is in the window");
                for &(p, c) in &marks[old].1.revives {
                    counts[p] -= c;
                }
                start = marks[old].0 + 1;
            }
        }
        for &(p, c) in &f.revives {
            counts[p] += c;
        }
        window.push_back(mi);
    }
    close(&mut out, start, total_steps);
    out
}

/// The largest number of revives in any window of `window` consecutive steps.
pub fn max_revives_in_window(events: &[TraceEvent], window: u64) -> u64 {
    let steps: Vec<u64> = events
        .iter()
        .filter(|e| matches!(e.kind, TraceKind::Revive))
        .map(|e| e.step)
        .collect();
    let mut best = 0u64;
    let mut lo = 0usize;
    for hi in 0..steps.len() {
        while steps[hi] - steps[lo] >= window {
            lo += 1;
        }
        best = best.max((hi - lo + 1) as u64);
    }
    best
}

/// Aggregates of one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutionStats {
    pub steps: u64,
    pub b_restart: u64,
    pub b_revive: u64,
    pub b_newlabel: u64,
    pub increments: u64,
    pub ignored: u64,
    pub evictions: u64,
    /// Restarts from the do-forever check, per processor.
    pub do_forever_restarts: Vec<u64>,
    /// Restarts after a guard pass with an illegitimate pair.
    pub receive_restarts: u64,
    /// Receive restarts whose message carried a stale `rcvd_local`.
    pub stale_token_restarts: u64,
    /// Step of the last `restartLocal`, if any.
    pub last_restart_step: Option<u64>,
    /// States outside every legal segment.
    pub f_r: u64,
    pub legal_segments: Vec<Segment>,
    pub max_segment: u64,
}

impl ExecutionStats {
    /// `|R| / (B_restart + B_revive + 1)`.
    pub fn pigeonhole_bound(&self) -> f64 {
        self.steps as f64 / (self.b_restart + self.b_revive + 1) as f64
    }

    pub fn pigeonhole_holds(&self) -> bool {
        self.max_segment as f64 >= self.pigeonhole_bound()
    }

    /// Whether no restart happened at or after `step`.
    pub fn restart_free_from(&self, step: u64) -> bool {
        self.last_restart_step.map_or(true, |s| s < step)
    }
}

/// Aggregates `events` of a run of `steps` steps.
pub fn stats(events: &[TraceEvent], steps: u64) -> ExecutionStats {
    let n = events
        .iter()
        .filter_map(|e| e.proc)
        .map(|p| p.index() + 1)
        .max()
        .unwrap_or(0);
    let mut s = ExecutionStats {
        steps,
        do_forever_restarts: vec![0; n],
        ..Default::default()
    };
    for e in events {
        match e.kind {
            TraceKind::RestartLocal { cause, stale_token } => {
                s.b_restart += 1;
                s.last_restart_step = Some(s.last_restart_step.map_or(e.step, |x| x.max(e.step)));
                match cause {
                    RestartCause::DoForever => {
                        if let Some(p) = e.proc {
                            s.do_forever_restarts[p.index()] += 1;
                        }
                    }
                    RestartCause::Receive => {
                        s.receive_restarts += 1;
                        s.stale_token_restarts += stale_token as u64;
                    }
                }
            }
            TraceKind::Revive => s.b_revive += 1,
            TraceKind::NewLabel => s.b_newlabel += 1,
            TraceKind::Increment => s.increments += 1,
            TraceKind::Ignored { .. } => s.ignored += 1,
            TraceKind::Send { evicted: true, .. } => s.evictions += 1,
            _ => {}
        }
    }
    let seg = find_legal_segments(events, steps);
    s.f_r = seg.outside;
    s.max_segment = seg.max_len;
    s.legal_segments = seg.segments;
    s
}

/// [`stats`] over a parsed trace; the step count comes from its summary.
pub fn stats_of_trace(t: &ParsedTrace) -> ExecutionStats {
    let steps = t
        .summary
        .map(|s| s.steps)
        .unwrap_or_else(|| t.events.iter().map(|e| e.step + 1).max().unwrap_or(0));
    stats(&t.events, steps)
}

/// `vc` of every live processor, for reports.
pub fn clocks(w: &World) -> Vec<Vec<u64>> {
    w.procs()
        .iter()
        .map(|p| vc(p.local(), w.sys().maxint()))
        .collect()
}
