use std::collections::BTreeMap;
use std::io;

use super::trace::{TraceSummary, TraceWriter};
use super::{ChannelFault, FaultPlan, Scheduler, SimError, StepRecord, World};
use crate::ProcId;

/// Read-only hooks called in lockstep with the simulation.
pub trait Observer {
    /// Called once, after any transient fault and before the first step.
    fn on_start(&mut self, _w: &World) {}
    /// Called after every processor step with the resulting world.
    fn on_step(&mut self, _w: &World, _rec: &StepRecord) {}
    fn on_crash(&mut self, _w: &World, _p: ProcId) {}
    fn on_restart(&mut self, _w: &World, _p: ProcId) {}
    fn on_end(&mut self, _w: &World) {}
}

/// Totals of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOutcome {
    pub steps: u64,
    pub idle_steps: u64,
    pub evictions: u64,
    pub restart_calls: u64,
    pub revive_calls: u64,
    pub new_labels: u64,
    pub increments: u64,
}

impl RunOutcome {
    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            steps: self.steps,
            b_restart: self.restart_calls,
            b_revive: self.revive_calls,
            b_newlabel: self.new_labels,
            increments: self.increments,
            evictions: self.evictions,
            idle_steps: self.idle_steps,
        }
    }
}

enum Scheduled {
    Crash(ProcId),
    Restart(ProcId),
    Channel(ChannelFault, ProcId, ProcId),
}

fn io_err(e: io::Error) -> SimError {
    SimError::Trace(e.to_string())
}

/// Runs `steps` steps of `sched` on `w`, applying `plan`.
///
/// A transient fault in the plan is injected first when the clock is zero.
/// The trace receives every record except the header, which the caller
/// writes; the summary record closes it.
pub fn run(
    w: &mut World,
    sched: &mut dyn Scheduler,
    plan: &FaultPlan,
    steps: u64,
    observers: &mut [&mut dyn Observer],
    trace: &mut TraceWriter<'_>,
) -> Result<RunOutcome, SimError> {
    if let Some(seed) = plan.transient_seed {
        if w.clock() == 0 {
            w.inject_transient(seed, plan.transient_scope)?;
            trace
                .transient(seed, plan.transient_scope)
                .map_err(io_err)?;
        }
    }
    let mut agenda: BTreeMap<u64, Vec<Scheduled>> = BTreeMap::new();
    for (&p, &t) in &plan.crash_at {
        agenda.entry(t).or_default().push(Scheduled::Crash(p));
    }
    for (&p, &t) in &plan.restart_at {
        agenda.entry(t).or_default().push(Scheduled::Restart(p));
    }
    for ev in &plan.channel_events {
        agenda
            .entry(ev.step)
            .or_default()
            .push(Scheduled::Channel(ev.kind, ev.src, ev.dst));
    }

    for o in observers.iter_mut() {
        o.on_start(w);
    }
    let mut out = RunOutcome::default();
    let base: Vec<_> = w.procs().iter().map(|p| *p.counters()).collect();
    let end = w.clock() + steps;
    while w.clock() < end {
        let now = w.clock();
        if let Some(items) = agenda.remove(&now) {
            for item in items {
                match item {
                    Scheduled::Crash(p) => {
                        w.crash(p)?;
                        trace.crash(now, p).map_err(io_err)?;
                        for o in observers.iter_mut() {
                            o.on_crash(w, p);
                        }
                    }
                    Scheduled::Restart(p) => {
                        w.restart_undetectable(p)?;
                        trace.restart(now, p).map_err(io_err)?;
                        for o in observers.iter_mut() {
                            o.on_restart(w, p);
                        }
                    }
                    Scheduled::Channel(kind, src, dst) => {
                        let ch = w.channel_mut(src, dst);
                        let applied = match kind {
                            ChannelFault::Duplicate => ch.duplicate_head(),
                            ChannelFault::Reorder => ch.swap_front(),
                        };
                        trace
                            .channel_fault(now, kind, src, dst, applied)
                            .map_err(io_err)?;
                    }
                }
            }
        }
        match sched.next(w) {
            Some((p, action)) => {
                let rec = w.sim_step(p, action)?;
                out.evictions += rec.evicted as u64;
                trace.step(&rec, w).map_err(io_err)?;
                for o in observers.iter_mut() {
                    o.on_step(w, &rec);
                }
            }
            None => {
                w.idle_step();
                out.idle_steps += 1;
            }
        }
        out.steps += 1;
    }
    for (p, b) in w.procs().iter().zip(&base) {
        let c = p.counters();
        out.restart_calls += c.restart_calls - b.restart_calls;
        out.revive_calls += c.revive_calls - b.revive_calls;
        out.new_labels += c.new_labels - b.new_labels;
        out.increments += c.increments - b.increments;
    }
    for o in observers.iter_mut() {
        o.on_end(w);
    }
    trace.summary(&out.summary()).map_err(io_err)?;
    trace.flush().map_err(io_err)?;
    Ok(out)
}
