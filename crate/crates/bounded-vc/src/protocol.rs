//! The per-processor vector clock algorithm.
//!
//! [`ProcessorState`] composes the labeling state with the vector clock
//! pairs. Each handler is one atomic step: [`ProcessorState::do_forever_begin`]
//! starts a broadcast of an immutable snapshot of `local`,
//! [`ProcessorState::do_forever_continue`] sends the rest of it, and
//! [`ProcessorState::on_message`] handles an arrival with token passing.
//! Handlers record what they did as [`ProtoEvent`]s for the simulator.

use std::collections::VecDeque;

use thiserror::Error;

use crate::labeling::{legit_msg, LabelingError, LabelingState, ServerMessage, SystemConfig};
use crate::labels::{precedes_lb, Label};
use crate::vcpair::{
    eq_lo, equal_static, exhausted, labels_ordered, legit_pairs, merge, pair_invar, VcError,
    VectorClockPair,
};
use crate::ProcId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("a broadcast is still in progress")]
    BroadcastInProgress,
    #[error("no broadcast is in progress")]
    NoBroadcast,
    #[error("processor {0} cannot message itself")]
    SelfMessage(ProcId),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
    #[error(transparent)]
    Pair(#[from] VcError),
}

/// The client part of a message: the sender's snapshot and its copy of the
/// receiver's pair (the token).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientMessage {
    pub arriving: VectorClockPair,
    pub rcvd_local: VectorClockPair,
}

/// A complete protocol message.
pub type Message = ServerMessage<ClientMessage>;

/// A broadcast whose messages are not all sent yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingBroadcast {
    pub snapshot: VectorClockPair,
    /// The maximal label when the snapshot was taken.
    pub sender_max: Label,
    /// Destinations still to be sent to, each with the label last recorded
    /// for it when the snapshot was taken.
    pub remaining: VecDeque<(ProcId, Option<Label>)>,
}

/// Which guard triggered a `restartLocal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartCause {
    /// The do-forever check of mirrored and ordered labels failed.
    DoForever,
    /// A message passed the token guard but its pair could not be merged.
    Receive,
}

/// The first failing conjunct of the arrival guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardFailure {
    EqualStatic,
    LegitMsg,
    PairInvar,
}

impl GuardFailure {
    pub fn as_str(self) -> &'static str {
        match self {
            GuardFailure::EqualStatic => "equal_static",
            GuardFailure::LegitMsg => "legit_msg",
            GuardFailure::PairInvar => "pair_invar",
        }
    }
}

/// Something a handler did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtoEvent {
    Increment,
    Revive { new_label: Label },
    RestartLocal { cause: RestartCause },
    NewLabel { label: Label },
    Ignored { from: ProcId, guard: GuardFailure },
    Merged { from: ProcId, static_changed: bool },
}

/// Monotone tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub restart_calls: u64,
    pub revive_calls: u64,
    pub increments: u64,
    pub new_labels: u64,
}

/// The state of one processor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessorState {
    id: ProcId,
    sys: SystemConfig,
    pairs: Vec<VectorClockPair>,
    labeling: LabelingState,
    pending: Option<PendingBroadcast>,
    counters: Counters,
    events: Vec<ProtoEvent>,
}

impl ProcessorState {
    /// A processor in the common clean start: every queue and `max[]` entry
    /// holds `genesis` and every pair is `⟨y, y⟩` over it.
    pub fn clean(id: ProcId, sys: &SystemConfig, genesis: &Label) -> Result<Self, ProtocolError> {
        let n = sys.n();
        let mut labeling = LabelingState::from_raw(
            id,
            sys,
            vec![Some(genesis.clone()); n],
            (0..n)
                .map(|j| {
                    if j == genesis.creator().index() {
                        vec![genesis.clone()]
                    } else {
                        vec![]
                    }
                })
                .collect(),
            false,
        );
        labeling.label_bookkeeping()?;
        labeling.take_created();
        let y = VectorClockPair::restart(labeling.get_label()?.clone(), n);
        Ok(ProcessorState {
            id,
            sys: *sys,
            pairs: vec![y; n],
            labeling,
            pending: None,
            counters: Counters::default(),
            events: Vec::new(),
        })
    }

    /// Installs arbitrary state, for example after a transient fault.
    pub fn from_raw(
        id: ProcId,
        sys: &SystemConfig,
        pairs: Vec<VectorClockPair>,
        labeling: LabelingState,
        pending: Option<PendingBroadcast>,
    ) -> Self {
        ProcessorState {
            id,
            sys: *sys,
            pairs,
            labeling,
            pending,
            counters: Counters::default(),
            events: Vec::new(),
        }
    }

    pub fn id(&self) -> ProcId {
        self.id
    }

    pub fn sys(&self) -> &SystemConfig {
        &self.sys
    }

    /// `pairs[id]`.
    pub fn local(&self) -> &VectorClockPair {
        &self.pairs[self.id.index()]
    }

    fn local_mut(&mut self) -> &mut VectorClockPair {
        &mut self.pairs[self.id.index()]
    }

    pub fn pairs(&self) -> &[VectorClockPair] {
        &self.pairs
    }

    pub fn labeling(&self) -> &LabelingState {
        &self.labeling
    }

    pub fn pending(&self) -> Option<&PendingBroadcast> {
        self.pending.as_ref()
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Events recorded since the last call.
    pub fn take_events(&mut self) -> Vec<ProtoEvent> {
        std::mem::take(&mut self.events)
    }

    fn collect_created(&mut self) {
        for label in self.labeling.take_created() {
            self.counters.new_labels += 1;
            self.events.push(ProtoEvent::NewLabel { label });
        }
    }

    /// `local ← ⟨y, y⟩` with `y = ⟨getLabel(), 0, 0⟩`.
    pub fn restart_local(&mut self, cause: RestartCause) -> Result<(), ProtocolError> {
        let y = VectorClockPair::restart(self.labeling.get_label()?.clone(), self.sys.n());
        *self.local_mut() = y;
        self.counters.restart_calls += 1;
        self.events.push(ProtoEvent::RestartLocal { cause });
        Ok(())
    }

    /// Cancels both labels of `z`, runs one bookkeeping pass and returns
    /// `⟨⟨getLabel(), z.curr.m, z.curr.m⟩, z.curr⟩`.
    pub fn revive(&mut self, z: &VectorClockPair) -> Result<VectorClockPair, ProtocolError> {
        self.labeling.pin(&[z.curr_label(), z.prev_label()]);
        for l in [z.curr_label(), z.prev_label()] {
            self.labeling.cancel(l, l)?;
        }
        self.labeling.label_bookkeeping_above(z.curr_label())?;
        self.collect_created();
        let label = self.labeling.get_label()?.clone();
        let demoted = self
            .labeling
            .stored(z.curr_label().creator())
            .find(|l| l.eq_m(z.curr_label()))
            .cloned()
            .unwrap_or_else(|| z.curr_label().clone());
        let out = VectorClockPair::new(
            label.clone(),
            z.curr_m().to_vec(),
            z.curr_m().to_vec(),
            demoted,
            z.shared().to_vec(),
        )?;
        self.counters.revive_calls += 1;
        self.events.push(ProtoEvent::Revive { new_label: label });
        Ok(out)
    }

    fn revive_local_if_exhausted(&mut self) -> Result<(), ProtocolError> {
        if exhausted(self.local(), self.sys.maxint()) {
            let z = self.local().clone();
            *self.local_mut() = self.revive(&z)?;
        }
        Ok(())
    }

    /// Counts one local event, reviving the pair when it becomes exhausted.
    pub fn increment(&mut self) -> Result<(), ProtocolError> {
        let i = self.id.index();
        let maxint = self.sys.maxint();
        let m = self.local_mut().curr_m_mut();
        m[i] = (m[i] + 1) % maxint;
        self.counters.increments += 1;
        self.events.push(ProtoEvent::Increment);
        self.revive_local_if_exhausted()
    }

    /// `isStored(local.prev.ℓ) ∧ local.curr.ℓ = getLabel()`.
    pub fn mirrored_local_labels(&self) -> bool {
        let local = self.local();
        self.labeling.is_stored(local.prev_label())
            && self
                .labeling
                .get_label()
                .is_ok_and(|l| l.eq_m(local.curr_label()))
    }

    /// `mirroredLocalLabels() ∧ labelsOrdered(local)`.
    pub fn local_invariants(&self) -> Result<bool, ProtocolError> {
        self.labeling.get_label()?;
        Ok(self.mirrored_local_labels() && labels_ordered(self.local(), &self.labeling))
    }

    /// One do-forever iteration up to its first send.
    pub fn do_forever_begin(
        &mut self,
        maybe_increment: bool,
    ) -> Result<(ProcId, Message), ProtocolError> {
        if self.pending.is_some() {
            return Err(ProtocolError::BroadcastInProgress);
        }
        if maybe_increment {
            self.increment()?;
        }
        let (curr, prev) = (
            self.local().curr_label().clone(),
            self.local().prev_label().clone(),
        );
        self.labeling.pin(&[&curr, &prev]);
        self.labeling.label_bookkeeping()?;
        self.collect_created();
        if !(self.mirrored_local_labels() && labels_ordered(self.local(), &self.labeling)) {
            self.restart_local(RestartCause::DoForever)?;
        }
        self.revive_local_if_exhausted()?;
        let remaining = ProcId::all(self.sys.n())
            .filter(|&p| p != self.id)
            .map(|p| (p, self.labeling.max_of(p).cloned()))
            .collect();
        let sender_max = self.labeling.get_label()?.clone();
        self.pending = Some(PendingBroadcast {
            snapshot: self.local().clone(),
            sender_max,
            remaining,
        });
        self.send_next()
    }

    /// Sends the snapshot of the current broadcast to the next destination.
    pub fn do_forever_continue(&mut self) -> Result<(ProcId, Message), ProtocolError> {
        if self.pending.is_none() {
            return Err(ProtocolError::NoBroadcast);
        }
        self.send_next()
    }

    fn send_next(&mut self) -> Result<(ProcId, Message), ProtocolError> {
        let pending = self.pending.as_mut().ok_or(ProtocolError::NoBroadcast)?;
        let (dest, last_sent) = pending
            .remaining
            .pop_front()
            .ok_or(ProtocolError::NoBroadcast)?;
        let arriving = pending.snapshot.clone();
        let sender_max = pending.sender_max.clone();
        if pending.remaining.is_empty() {
            self.pending = None;
        }
        let client = ClientMessage {
            arriving,
            rcvd_local: self.pairs[dest.index()].clone(),
        };
        Ok((
            dest,
            Message {
                sender_max,
                last_sent,
                client,
            },
        ))
    }

    /// Handles a message from `from`.
    pub fn on_message(&mut self, m: &Message, from: ProcId) -> Result<(), ProtocolError> {
        if from == self.id || from.index() >= self.sys.n() {
            return Err(ProtocolError::SelfMessage(from));
        }
        let arriving = &m.client.arriving;
        let local = self.local();
        let local_has_wrapped = eq_lo(local.prev(), arriving.curr())
            && !eq_lo(local.curr(), arriving.curr())
            && precedes_lb(arriving.curr_label(), local.curr_label());
        let carried: Vec<&Label> = if local_has_wrapped {
            vec![arriving.curr_label()]
        } else {
            vec![arriving.curr_label(), arriving.prev_label()]
        };
        let (curr, prev) = (
            self.local().curr_label().clone(),
            self.local().prev_label().clone(),
        );
        self.labeling.pin(&[&curr, &prev]);
        self.labeling.label_bookkeeping_msg(m, from, carried)?;
        self.collect_created();
        self.pairs[from.index()] = arriving.clone();

        let guard = if !equal_static(self.local(), &m.client.rcvd_local) {
            Some(GuardFailure::EqualStatic)
        } else if !legit_msg(m, arriving.curr_label()) {
            Some(GuardFailure::LegitMsg)
        } else if !pair_invar(arriving, self.sys.maxint()) {
            Some(GuardFailure::PairInvar)
        } else {
            None
        };
        if let Some(guard) = guard {
            self.events.push(ProtoEvent::Ignored { from, guard });
            return Ok(());
        }
        if !legit_pairs(self.local(), arriving) {
            return self.restart_local(RestartCause::Receive);
        }
        let merged = merge(self.local(), arriving, self.sys.maxint())?;
        let static_changed = !equal_static(self.local(), &merged);
        *self.local_mut() = merged;
        self.events.push(ProtoEvent::Merged {
            from,
            static_changed,
        });
        self.revive_local_if_exhausted()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::next_label;
    use crate::vcpair::vc;

    fn p(i: u16) -> ProcId {
        ProcId::new(i).unwrap()
    }

    fn world(n: usize, maxint: u64) -> (SystemConfig, Vec<ProcessorState>) {
        let sys = SystemConfig::new(n, 1, maxint, None).unwrap();
        let genesis =
            next_label(std::iter::empty(), ProcId::from_index(n - 1), sys.labels()).unwrap();
        let procs = ProcId::all(n)
            .map(|id| ProcessorState::clean(id, &sys, &genesis).unwrap())
            .collect();
        (sys, procs)
    }

    #[test]
    fn clean_start_satisfies_invariants() {
        let (_, procs) = world(3, 16);
        for s in &procs {
            assert!(s.local_invariants().unwrap());
            assert_eq!(vc(s.local(), 16), vec![0, 0, 0]);
        }
    }

    #[test]
    fn increment_then_revive_at_boundary() {
        let (_, mut procs) = world(2, 8);
        let s = &mut procs[0];
        for _ in 0..6 {
            s.increment().unwrap();
        }
        assert_eq!(vc(s.local(), 8), vec![6, 0]);
        let before = s.local().clone();
        s.increment().unwrap();
        assert_eq!(s.counters().revive_calls, 1);
        assert_eq!(vc(s.local(), 8), vec![0, 0]);
        assert_eq!(s.local().shared(), &[7, 0]);
        assert!(s.local().prev_label().eq_m(before.curr_label()));
        assert_eq!(s.local().prev().o, before.curr().o);
        assert!(precedes_lb(before.curr_label(), s.local().curr_label()));
        assert!(s.local_invariants().unwrap());
    }

    #[test]
    fn broadcast_snapshot_is_immutable() {
        let (_, mut procs) = world(3, 16);
        let (d1, m1) = procs[0].do_forever_begin(true).unwrap();
        assert_eq!(d1, p(2));
        let (d2, m2) = procs[1].do_forever_begin(true).unwrap();
        assert_eq!(d2, p(1));
        procs[0].on_message(&m2, p(2)).unwrap();
        assert_eq!(vc(procs[0].local(), 16), vec![1, 1, 0]);
        let (d3, m3) = procs[0].do_forever_continue().unwrap();
        assert_eq!(d3, p(3));
        assert_eq!(m3.client.arriving, m1.client.arriving);
        assert!(procs[0].pending().is_none());
        assert_eq!(
            procs[0].do_forever_continue(),
            Err(ProtocolError::NoBroadcast)
        );
    }

    #[test]
    fn stale_message_is_ignored() {
        let (_, mut procs) = world(2, 16);
        let (_, old) = procs[1].do_forever_begin(true).unwrap();
        let (_, fresh) = procs[1].do_forever_begin(false).unwrap();
        procs[0].on_message(&fresh, p(2)).unwrap();
        let local = procs[0].local().clone();
        let mut forged = old.clone();
        forged.sender_max = {
            let cfg = *procs[0].sys().labels();
            next_label(std::iter::empty(), p(1), &cfg).unwrap()
        };
        procs[0].take_events();
        procs[0].on_message(&forged, p(2)).unwrap();
        assert_eq!(procs[0].local(), &local);
        assert!(matches!(
            procs[0].take_events().last(),
            Some(ProtoEvent::Ignored {
                guard: GuardFailure::LegitMsg,
                ..
            })
        ));
    }

    #[test]
    fn corrupted_prev_label_restarts_once() {
        let (sys, mut procs) = world(2, 16);
        let stranger = next_label(std::iter::empty(), p(1), sys.labels()).unwrap();
        let s = &mut procs[0];
        let mut bad = s.local().clone();
        bad.set_prev_label(stranger);
        s.pairs[0] = bad;
        assert!(!s.local_invariants().unwrap());
        s.do_forever_begin(false).unwrap();
        assert_eq!(s.counters().restart_calls, 1);
        assert!(s.local_invariants().unwrap());
        while s.pending().is_some() {
            s.do_forever_continue().unwrap();
        }
        s.do_forever_begin(false).unwrap();
        assert_eq!(s.counters().restart_calls, 1);
    }
}
