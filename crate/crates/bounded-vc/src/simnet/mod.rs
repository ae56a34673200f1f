//! Deterministic interleaving simulation.
//!
//! A [`World`] holds every processor and one bounded FIFO channel per
//! ordered pair of processors. Steps are applied one at a time by
//! [`World::sim_step`]; [`run()`] drives a [`Scheduler`] for a number of steps,
//! applies the [`FaultPlan`], feeds [`Observer`]s and writes the trace.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::labeling::SystemConfig;
use crate::labels::next_label;
use crate::protocol::{Message, ProcessorState, ProtoEvent, ProtocolError};
use crate::ProcId;

mod corrupt;
mod fault;
mod run;
pub mod scenario;
mod sched;
pub mod trace;

pub use fault::{ChannelEvent, ChannelFault, FaultPlan, PlanError, TransientScope};
pub use run::{run, Observer, RunOutcome};
pub use sched::{RoundRobin, Scheduler, ScriptEntry, Scripted, SeededRandom};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("action {action:?} is not enabled for processor {proc}")]
    ActionNotEnabled { proc: ProcId, action: Action },
    #[error("processor {0} is already crashed")]
    AlreadyCrashed(ProcId),
    #[error("processor {0} is not crashed")]
    NotCrashed(ProcId),
    #[error("processor {0} is outside 1..=N")]
    UnknownProc(ProcId),
    #[error("transient faults can only be injected at step 0")]
    NotAtStart,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("trace output failed: {0}")]
    Trace(String),
}

/// A step a processor can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Start a do-forever iteration, optionally counting one local event.
    Begin { increment: bool },
    /// Send the next message of the pending broadcast.
    Continue,
    /// Receive the head of the channel from `from`.
    Receive { from: ProcId },
}

impl Action {
    pub fn is_send(&self) -> bool {
        !matches!(self, Action::Receive { .. })
    }
}

/// A message in flight, tagged with the broadcast it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    /// Broadcast identifier; `None` for messages planted by a transient fault.
    pub broadcast: Option<u64>,
    /// Whether `rcvd_local` was planted by a transient fault or copied from a
    /// `pairs[]` entry that a planted message wrote.
    pub stale_token: bool,
    pub msg: Message,
}

/// A bounded FIFO channel that drops its oldest message when full.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Channel {
    src: ProcId,
    dst: ProcId,
    capacity: usize,
    queue: VecDeque<Envelope>,
}

impl Channel {
    pub fn new(src: ProcId, dst: ProcId, capacity: usize) -> Self {
        Channel {
            src,
            dst,
            capacity,
            queue: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn src(&self) -> ProcId {
        self.src
    }

    pub fn dst(&self) -> ProcId {
        self.dst
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn messages(&self) -> impl Iterator<Item = &Envelope> {
        self.queue.iter()
    }

    /// Appends a message; returns the evicted oldest message when full.
    pub fn push(&mut self, env: Envelope) -> Option<Envelope> {
        self.queue.push_back(env);
        if self.queue.len() > self.capacity {
            self.queue.pop_front()
        } else {
            None
        }
    }

    /// The most recently sent message.
    pub fn back(&self) -> Option<&Envelope> {
        self.queue.back()
    }

    pub fn pop(&mut self) -> Option<Envelope> {
        self.queue.pop_front()
    }

    pub(crate) fn clear(&mut self) {
        self.queue.clear();
    }

    pub(crate) fn duplicate_head(&mut self) -> bool {
        match self.queue.front().cloned() {
            Some(env) => {
                self.push(env);
                true
            }
            None => false,
        }
    }

    pub(crate) fn swap_front(&mut self) -> bool {
        if self.queue.len() >= 2 {
            self.queue.swap(0, 1);
            true
        } else {
            false
        }
    }
}

/// What one step did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub step: u64,
    pub proc: ProcId,
    pub action: Action,
    /// Destination and broadcast identifier of a send.
    pub sent: Option<(ProcId, u64)>,
    /// Whether the send evicted the oldest message of a full channel.
    pub evicted: bool,
    /// Broadcast identifier of the evicted message, if it had one.
    pub evicted_broadcast: Option<u64>,
    /// Broadcast identifier of a received message.
    pub received: Option<Option<u64>>,
    /// Whether the received message carried a stale token.
    pub received_stale: bool,
    pub events: Vec<ProtoEvent>,
}

/// The whole simulated system.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    sys: SystemConfig,
    procs: Vec<ProcessorState>,
    channels: Vec<Channel>,
    crashed: Vec<bool>,
    clock: u64,
    corrupted: bool,
    last_was_send: Vec<bool>,
    pending_broadcast: Vec<Option<u64>>,
    next_broadcast: u64,
    tainted: Vec<bool>,
    increment_rate: f64,
    workload: ChaCha8Rng,
}

impl World {
    /// A clean world: every processor shares one genesis label and zero pairs.
    pub fn clean(
        sys: &SystemConfig,
        increment_rate: f64,
        workload_seed: u64,
    ) -> Result<Self, SimError> {
        let n = sys.n();
        let genesis = next_label(std::iter::empty(), ProcId::from_index(n - 1), sys.labels())
            .map_err(|e| SimError::Protocol(ProtocolError::Labeling(e.into())))?;
        let procs = ProcId::all(n)
            .map(|id| ProcessorState::clean(id, sys, &genesis))
            .collect::<Result<Vec<_>, _>>()?;
        let mut channels = Vec::with_capacity(n * n);
        for src in ProcId::all(n) {
            for dst in ProcId::all(n) {
                channels.push(Channel::new(src, dst, sys.c()));
            }
        }
        Ok(World {
            sys: *sys,
            procs,
            channels,
            crashed: vec![false; n],
            clock: 0,
            corrupted: false,
            last_was_send: vec![false; n],
            pending_broadcast: vec![None; n],
            next_broadcast: 0,
            tainted: vec![false; n * n],
            increment_rate,
            workload: ChaCha8Rng::seed_from_u64(workload_seed),
        })
    }

    pub fn sys(&self) -> &SystemConfig {
        &self.sys
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Whether the initial state was replaced by a transient fault.
    pub fn corrupted(&self) -> bool {
        self.corrupted
    }

    pub fn procs(&self) -> &[ProcessorState] {
        &self.procs
    }

    pub fn proc(&self, p: ProcId) -> &ProcessorState {
        &self.procs[p.index()]
    }

    pub fn is_crashed(&self, p: ProcId) -> bool {
        self.crashed[p.index()]
    }

    pub fn live(&self) -> impl Iterator<Item = ProcId> + '_ {
        ProcId::all(self.n()).filter(|&p| !self.is_crashed(p))
    }

    fn chan_index(&self, src: ProcId, dst: ProcId) -> usize {
        src.index() * self.n() + dst.index()
    }

    /// The channel from `src` to `dst`.
    pub fn channel(&self, src: ProcId, dst: ProcId) -> &Channel {
        &self.channels[self.chan_index(src, dst)]
    }

    pub(crate) fn channel_mut(&mut self, src: ProcId, dst: ProcId) -> &mut Channel {
        let i = self.chan_index(src, dst);
        &mut self.channels[i]
    }

    /// All `N(N−1)` channels.
    pub fn channels(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.src != c.dst)
    }

    /// Senders with a non-empty channel into `p`, ascending.
    pub fn nonempty_inbound(&self, p: ProcId) -> impl Iterator<Item = ProcId> + '_ {
        ProcId::all(self.n()).filter(move |&s| s != p && !self.channel(s, p).is_empty())
    }

    /// Whether `p` last took a send step.
    pub fn last_was_send(&self, p: ProcId) -> bool {
        self.last_was_send[p.index()]
    }

    /// Enabled actions of `p`; a begin is listed with and without increment.
    pub fn enabled_actions(&self, p: ProcId) -> Vec<Action> {
        if p.index() >= self.n() || self.is_crashed(p) {
            return Vec::new();
        }
        let mut out = Vec::new();
        if self.proc(p).pending().is_some() {
            out.push(Action::Continue);
        } else {
            out.push(Action::Begin { increment: false });
            out.push(Action::Begin { increment: true });
        }
        out.extend(
            self.nonempty_inbound(p)
                .map(|from| Action::Receive { from }),
        );
        out
    }

    /// The send action of `p`, with the increment drawn from the workload.
    pub fn send_action(&mut self, p: ProcId) -> Action {
        if self.proc(p).pending().is_some() {
            Action::Continue
        } else {
            let increment =
                self.increment_rate > 0.0 && self.workload.gen_bool(self.increment_rate.min(1.0));
            Action::Begin { increment }
        }
    }

    fn is_enabled(&self, p: ProcId, action: Action) -> bool {
        if p.index() >= self.n() || self.is_crashed(p) {
            return false;
        }
        match action {
            Action::Begin { .. } => self.proc(p).pending().is_none(),
            Action::Continue => self.proc(p).pending().is_some(),
            Action::Receive { from } => {
                from != p && from.index() < self.n() && !self.channel(from, p).is_empty()
            }
        }
    }

    /// Applies one atomic step.
    pub fn sim_step(&mut self, p: ProcId, action: Action) -> Result<StepRecord, SimError> {
        if !self.is_enabled(p, action) {
            return Err(SimError::ActionNotEnabled { proc: p, action });
        }
        let step = self.clock;
        let mut rec = StepRecord {
            step,
            proc: p,
            action,
            sent: None,
            evicted: false,
            evicted_broadcast: None,
            received: None,
            received_stale: false,
            events: Vec::new(),
        };
        match action {
            Action::Begin { increment } => {
                let (dest, msg) = self.procs[p.index()].do_forever_begin(increment)?;
                let id = self.next_broadcast;
                self.next_broadcast += 1;
                self.pending_broadcast[p.index()] = self.procs[p.index()].pending().map(|_| id);
                let stale_token = self.tainted[self.chan_index(p, dest)];
                let old = self.channel_mut(p, dest).push(Envelope {
                    broadcast: Some(id),
                    stale_token,
                    msg,
                });
                rec.evicted = old.is_some();
                rec.evicted_broadcast = old.and_then(|e| e.broadcast);
                rec.sent = Some((dest, id));
            }
            Action::Continue => {
                let id = self.pending_broadcast[p.index()];
                let (dest, msg) = self.procs[p.index()].do_forever_continue()?;
                if self.procs[p.index()].pending().is_none() {
                    self.pending_broadcast[p.index()] = None;
                }
                let stale_token = self.tainted[self.chan_index(p, dest)];
                let old = self.channel_mut(p, dest).push(Envelope {
                    broadcast: id,
                    stale_token,
                    msg,
                });
                rec.evicted = old.is_some();
                rec.evicted_broadcast = old.and_then(|e| e.broadcast);
                rec.sent = Some((dest, id.unwrap_or(u64::MAX)));
            }
            Action::Receive { from } => {
                let env = self
                    .channel_mut(from, p)
                    .pop()
                    .expect("enabled receive has a message");
                rec.received = Some(env.broadcast);
                rec.received_stale = env.stale_token;
                let held = self.chan_index(p, from);
                self.tainted[held] = env.broadcast.is_none();
                self.procs[p.index()].on_message(&env.msg, from)?;
            }
        }
        rec.events = self.procs[p.index()].take_events();
        self.last_was_send[p.index()] = action.is_send();
        self.clock += 1;
        Ok(rec)
    }

    /// Advances the clock without any processor taking a step.
    pub(crate) fn idle_step(&mut self) {
        self.clock += 1;
    }

    /// Stops `p`; its state is kept.
    pub fn crash(&mut self, p: ProcId) -> Result<(), SimError> {
        if p.index() >= self.n() {
            return Err(SimError::UnknownProc(p));
        }
        if self.crashed[p.index()] {
            return Err(SimError::AlreadyCrashed(p));
        }
        self.crashed[p.index()] = true;
        Ok(())
    }

    /// Resumes `p` with its pre-crash state; messages sent to it are lost.
    pub fn restart_undetectable(&mut self, p: ProcId) -> Result<(), SimError> {
        if p.index() >= self.n() {
            return Err(SimError::UnknownProc(p));
        }
        if !self.crashed[p.index()] {
            return Err(SimError::NotCrashed(p));
        }
        self.crashed[p.index()] = false;
        for src in ProcId::all(self.n()) {
            self.channel_mut(src, p).clear();
        }
        Ok(())
    }

    /// Replaces processor and channel contents with type-valid random values.
    pub fn inject_transient(&mut self, seed: u64, scope: TransientScope) -> Result<(), SimError> {
        if self.clock != 0 {
            return Err(SimError::NotAtStart);
        }
        corrupt::inject(self, seed, scope);
        self.corrupted = true;
        Ok(())
    }

    pub(crate) fn set_proc(&mut self, p: ProcId, state: ProcessorState) {
        self.procs[p.index()] = state;
    }

    /// Whether `holder`'s `pairs[about]` entry came from corrupted data.
    pub fn pair_tainted(&self, holder: ProcId, about: ProcId) -> bool {
        self.tainted[self.chan_index(holder, about)]
    }

    pub(crate) fn taint_all_pairs(&mut self) {
        self.tainted.iter_mut().for_each(|t| *t = true);
    }

    pub(crate) fn set_pending_broadcast(&mut self, p: ProcId, id: Option<u64>) {
        self.pending_broadcast[p.index()] = id;
    }
}
