use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Action, World};
use crate::ProcId;

/// Picks the next step. `None` lets the clock advance with no step, which
/// only happens when every processor is crashed.
pub trait Scheduler {
    fn next(&mut self, w: &mut World) -> Option<(ProcId, Action)>;
}

/// Per-processor choice between sending and receiving.
///
/// A processor that just sent receives next if it can, and otherwise sends;
/// receives rotate over the non-empty inbound channels.
#[derive(Debug, Clone, Default)]
struct LocalChoice {
    rr: Vec<usize>,
}

impl LocalChoice {
    fn new(n: usize) -> Self {
        LocalChoice { rr: vec![0; n] }
    }

    fn receive(&mut self, w: &World, p: ProcId) -> Option<Action> {
        let n = w.n();
        let start = self.rr[p.index()];
        for off in 0..n {
            let s = (start + off) % n;
            let from = ProcId::from_index(s);
            if from != p && !w.channel(from, p).is_empty() {
                self.rr[p.index()] = (s + 1) % n;
                return Some(Action::Receive { from });
            }
        }
        None
    }

    fn choose(&mut self, w: &mut World, p: ProcId) -> Action {
        if w.last_was_send(p) {
            if let Some(a) = self.receive(w, p) {
                return a;
            }
        }
        w.send_action(p)
    }
}

/// Cycles through live processors in ascending order.
#[derive(Debug, Clone)]
pub struct RoundRobin {
    cursor: usize,
    local: LocalChoice,
}

impl RoundRobin {
    pub fn new(n: usize) -> Self {
        RoundRobin {
            cursor: 0,
            local: LocalChoice::new(n),
        }
    }

    fn next_live(&mut self, w: &World) -> Option<ProcId> {
        let n = w.n();
        for _ in 0..n {
            let p = ProcId::from_index(self.cursor % n);
            self.cursor = (self.cursor + 1) % n;
            if !w.is_crashed(p) {
                return Some(p);
            }
        }
        None
    }
}

impl Scheduler for RoundRobin {
    fn next(&mut self, w: &mut World) -> Option<(ProcId, Action)> {
        let p = self.next_live(w)?;
        Some((p, self.local.choose(w, p)))
    }
}

/// Picks a uniformly random live processor, except that a processor left
/// unscheduled for `patience` steps is picked first.
#[derive(Debug, Clone)]
pub struct SeededRandom {
    rng: ChaCha8Rng,
    last: Vec<u64>,
    patience: u64,
    local: LocalChoice,
}

impl SeededRandom {
    /// Uses `patience = 4·N·C − N`, which keeps every live processor within
    /// one pick every `4·N·C` steps.
    pub fn new(n: usize, c: usize, seed: u64) -> Self {
        let patience = (4 * n * c).saturating_sub(n).max(1) as u64;
        Self::with_patience(n, seed, patience)
    }

    pub fn with_patience(n: usize, seed: u64, patience: u64) -> Self {
        SeededRandom {
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: vec![0; n],
            patience,
            local: LocalChoice::new(n),
        }
    }
}

impl Scheduler for SeededRandom {
    fn next(&mut self, w: &mut World) -> Option<(ProcId, Action)> {
        let now = w.clock();
        let live: Vec<ProcId> = w.live().collect();
        if live.is_empty() {
            return None;
        }
        let starved = live
            .iter()
            .copied()
            .filter(|p| now.saturating_sub(self.last[p.index()]) >= self.patience)
            .min_by_key(|p| self.last[p.index()]);
        let p = starved.unwrap_or_else(|| live[self.rng.gen_range(0..live.len())]);
        self.last[p.index()] = now + 1;
        Some((p, self.local.choose(w, p)))
    }
}

/// One entry of an adversarial script.
///
/// Textual forms: `"3"` lets processor 3 choose, `"3s"` makes it send and
/// `"3<1"` makes it receive from processor 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScriptEntry {
    Auto(ProcId),
    Send(ProcId),
    Receive { proc: ProcId, from: ProcId },
}

impl ScriptEntry {
    pub fn proc(&self) -> ProcId {
        match *self {
            ScriptEntry::Auto(p) | ScriptEntry::Send(p) => p,
            ScriptEntry::Receive { proc, .. } => proc,
        }
    }
}

impl fmt::Display for ScriptEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScriptEntry::Auto(p) => write!(f, "{p}"),
            ScriptEntry::Send(p) => write!(f, "{p}s"),
            ScriptEntry::Receive { proc, from } => write!(f, "{proc}<{from}"),
        }
    }
}

impl TryFrom<String> for ScriptEntry {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ScriptEntry> for String {
    fn from(e: ScriptEntry) -> String {
        e.to_string()
    }
}

impl FromStr for ScriptEntry {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let id = |t: &str| {
            t.trim()
                .parse::<u16>()
                .ok()
                .and_then(ProcId::new)
                .ok_or_else(|| format!("bad script entry {s:?}"))
        };
        if let Some((p, q)) = s.split_once('<') {
            Ok(ScriptEntry::Receive {
                proc: id(p)?,
                from: id(q)?,
            })
        } else if let Some(p) = s.strip_suffix('s') {
            Ok(ScriptEntry::Send(id(p)?))
        } else {
            Ok(ScriptEntry::Auto(id(s)?))
        }
    }
}

/// Replays a fixed list of entries cyclically.
///
/// An entry that is not enabled falls back to the processor's own choice,
/// or to round-robin when the processor is crashed or unknown.
#[derive(Debug, Clone)]
pub struct Scripted {
    script: Vec<ScriptEntry>,
    pos: usize,
    local: LocalChoice,
    fallback: RoundRobin,
}

impl Scripted {
    pub fn new(n: usize, script: Vec<ScriptEntry>) -> Self {
        Scripted {
            script,
            pos: 0,
            local: LocalChoice::new(n),
            fallback: RoundRobin::new(n),
        }
    }
}

impl Scheduler for Scripted {
    fn next(&mut self, w: &mut World) -> Option<(ProcId, Action)> {
        if self.script.is_empty() {
            return self.fallback.next(w);
        }
        let entry = self.script[self.pos];
        self.pos = (self.pos + 1) % self.script.len();
        let p = entry.proc();
        if p.index() >= w.n() || w.is_crashed(p) {
            return self.fallback.next(w);
        }
        let action = match entry {
            ScriptEntry::Auto(_) => self.local.choose(w, p),
            ScriptEntry::Send(_) => w.send_action(p),
            ScriptEntry::Receive { from, .. } => {
                if from != p && from.index() < w.n() && !w.channel(from, p).is_empty() {
                    Action::Receive { from }
                } else {
                    self.local.choose(w, p)
                }
            }
        };
        Some((p, action))
    }
}
