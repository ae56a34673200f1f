//! The per-processor bounded labeling algorithm.
//!
//! Each processor keeps `max[j]`, the last maximal label announced by `p_j`
//! (with `max[self]` being its own view of the system-wide maximum), and one
//! bounded queue of labels per creator. Queues are deduplicated by `=_m`,
//! move an entry to the front when it is accessed and evict from the back.

use std::collections::VecDeque;

use thiserror::Error;

use crate::labels::{
    cancels, next_label, precedes_b, precedes_lb, Label, LabelComponent, LabelConfig, LabelError,
};
use crate::ProcId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("N must be at least 2, got {0}")]
    TooFewProcessors(u64),
    #[error("C must be at least 1")]
    ZeroCapacity,
    #[error("MAXINT must lie in 2..={max}, got {got}")]
    BadMaxint { got: u64, max: u64 },
    #[error("k = {k} is below the minimum {min} for these queue capacities")]
    KTooSmall { k: u64, min: u64 },
    #[error(transparent)]
    Label(#[from] LabelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelingError {
    #[error("labeling state has not run bookkeeping yet")]
    NotReady,
    #[error("cancel precondition violated: the canceling label precedes the canceled one")]
    PreconditionViolated,
    #[error(transparent)]
    Label(#[from] LabelError),
}

/// System-wide sizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemConfig {
    n: usize,
    c: usize,
    maxint: u64,
    labels: LabelConfig,
}

/// Largest accepted modulus; sums of a few counter values never overflow.
pub const MAXINT_LIMIT: u64 = u64::MAX / 4;

impl SystemConfig {
    /// Builds a configuration with `k = 2·L_cap`, or `k_override` when given.
    pub fn new(
        n: usize,
        c: usize,
        maxint: u64,
        k_override: Option<u64>,
    ) -> Result<Self, ConfigError> {
        if n < 2 {
            return Err(ConfigError::TooFewProcessors(n as u64));
        }
        if c < 1 {
            return Err(ConfigError::ZeroCapacity);
        }
        if !(2..=MAXINT_LIMIT).contains(&maxint) {
            return Err(ConfigError::BadMaxint {
                got: maxint,
                max: MAXINT_LIMIT,
            });
        }
        let min_k = 2 * queue_capacity(n, c) as u64;
        let k = k_override.unwrap_or(min_k);
        if k < min_k {
            return Err(ConfigError::KTooSmall { k, min: min_k });
        }
        let labels = LabelConfig::new(u32::try_from(k).map_err(|_| LabelError::BadK(k))?)?;
        Ok(SystemConfig {
            n,
            c,
            maxint,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn maxint(&self) -> u64 {
        self.maxint
    }

    /// `M = C·N·(N−1)`, the number of messages the channels can hold.
    pub fn m(&self) -> usize {
        message_bound(self.n, self.c)
    }

    /// Capacity of every label queue.
    pub fn queue_capacity(&self) -> usize {
        queue_capacity(self.n, self.c)
    }

    pub fn labels(&self) -> &LabelConfig {
        &self.labels
    }
}

/// `M = C·N·(N−1)`.
pub fn message_bound(n: usize, c: usize) -> usize {
    c * n * (n - 1)
}

/// `N + N² + N³·C`, the revive bound per `MAXINT` window.
pub fn revive_bound(n: usize, c: usize) -> usize {
    n + n * n + n * n * n * c
}

/// `L_cap = (N + N² + N³·C) + (4N² + 4NM − 4N − 2M)`.
pub fn queue_capacity(n: usize, c: usize) -> usize {
    let m = message_bound(n, c);
    revive_bound(n, c) + (4 * n * n + 4 * n * m) - (4 * n + 2 * m)
}

/// The server part of a message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerMessage<C> {
    pub sender_max: Label,
    pub last_sent: Option<Label>,
    pub client: C,
}

/// `legitMsg`: whether `label` is `=_m` the sender's maximal label.
pub fn legit_msg<C>(m: &ServerMessage<C>, label: &Label) -> bool {
    label.eq_m(&m.sender_max)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct LabelQueue {
    items: VecDeque<Label>,
    legit: Option<usize>,
}

impl LabelQueue {
    fn find(&self, label: &Label) -> Option<usize> {
        self.items.iter().position(|x| x.ml() == label.ml())
    }

    fn refresh_legit(&mut self) {
        self.legit = self.items.iter().position(Label::is_legit);
    }

    fn touch(&mut self, idx: usize) {
        if idx > 0 {
            let item = self.items.remove(idx).expect("index in range");
            self.items.push_front(item);
            self.legit = match self.legit {
                Some(l) if l == idx => Some(0),
                Some(l) if l < idx => Some(l + 1),
                other => other,
            };
        }
    }

    fn legit_label(&self) -> Option<&Label> {
        self.legit.map(|i| &self.items[i])
    }
}

/// Outcome of storing one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreOutcome {
    /// The label was already present and was moved to the front.
    Refreshed,
    /// The label was added.
    Added,
}

/// Per-processor labeling state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelingState {
    self_id: ProcId,
    cfg: LabelConfig,
    capacity: usize,
    max: Vec<Option<Label>>,
    stored: Vec<LabelQueue>,
    ready: bool,
    validated: bool,
    created: Vec<Label>,
    storage_resets: u64,
    pinned: Vec<Label>,
}

impl LabelingState {
    /// An empty state; `label_bookkeeping` must run before `get_label`.
    pub fn new(self_id: ProcId, sys: &SystemConfig) -> Self {
        LabelingState {
            self_id,
            cfg: *sys.labels(),
            capacity: sys.queue_capacity(),
            max: vec![None; sys.n()],
            stored: vec![LabelQueue::default(); sys.n()],
            ready: false,
            validated: true,
            created: Vec::new(),
            storage_resets: 0,
            pinned: Vec::new(),
        }
    }

    /// Installs arbitrary contents, for example after a transient fault.
    ///
    /// Queues longer than the capacity are truncated. The next bookkeeping
    /// pass scans for stale information.
    pub fn from_raw(
        self_id: ProcId,
        sys: &SystemConfig,
        max: Vec<Option<Label>>,
        stored: Vec<Vec<Label>>,
        ready: bool,
    ) -> Self {
        let mut s = Self::new(self_id, sys);
        for (j, m) in max.into_iter().take(sys.n()).enumerate() {
            s.max[j] = m;
        }
        for (j, q) in stored.into_iter().take(sys.n()).enumerate() {
            let mut items: VecDeque<Label> = q.into();
            items.truncate(s.capacity);
            s.stored[j] = LabelQueue { items, legit: None };
            s.stored[j].refresh_legit();
        }
        s.ready = ready && s.max[self_id.index()].is_some();
        s.validated = false;
        s
    }

    pub fn self_id(&self) -> ProcId {
        self.self_id
    }

    pub fn label_config(&self) -> &LabelConfig {
        &self.cfg
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `max[j]`.
    pub fn max_of(&self, j: ProcId) -> Option<&Label> {
        self.max.get(j.index()).and_then(Option::as_ref)
    }

    /// Labels stored for creator `j`, most recently accessed first.
    pub fn stored(&self, j: ProcId) -> impl Iterator<Item = &Label> {
        self.stored[j.index()].items.iter()
    }

    /// Number of times the whole storage was emptied because of stale entries.
    pub fn storage_resets(&self) -> u64 {
        self.storage_resets
    }

    /// Labels created since the last call, oldest first.
    pub fn take_created(&mut self) -> Vec<Label> {
        std::mem::take(&mut self.created)
    }

    fn lookup(&self, label: &Label) -> Option<&Label> {
        let q = self.stored.get(label.creator().index())?;
        q.find(label).map(|i| &q.items[i])
    }

    /// Whether a label `=_m` to `label` is stored.
    pub fn is_stored(&self, label: &Label) -> bool {
        self.lookup(label).is_some()
    }

    /// Whether `label` carries a canceling component or its stored copy does.
    pub fn is_canceled(&self, label: &Label) -> bool {
        !label.is_legit() || self.lookup(label).is_some_and(|l| !l.is_legit())
    }

    /// The locally perceived maximal label.
    pub fn get_label(&self) -> Result<&Label, LabelingError> {
        if !self.ready {
            return Err(LabelingError::NotReady);
        }
        self.max[self.self_id.index()]
            .as_ref()
            .ok_or(LabelingError::NotReady)
    }

    /// Stores a label, applying cancellation against its queue.
    ///
    /// A stored legitimate copy becomes canceled when the incoming copy
    /// carries a canceling component.
    pub fn store(&mut self, label: &Label) -> StoreOutcome {
        let Some(q) = self.stored.get_mut(label.creator().index()) else {
            return StoreOutcome::Refreshed;
        };
        if let Some(idx) = q.find(label) {
            q.touch(idx);
            if let Some(cl) = label.cl() {
                if q.items[0].mark_canceled(cl) || q.items[0].mark_canceled(&label.ml().clone()) {
                    q.refresh_legit();
                }
            }
            return StoreOutcome::Refreshed;
        }
        let mut fresh = label.clone();
        for y in q.items.iter_mut() {
            if fresh.is_legit() && cancels(y, &fresh) {
                let by = y.ml().clone();
                if !fresh.mark_canceled(&by) {
                    fresh.mark_canceled(&fresh.ml().clone());
                }
            }
            if y.is_legit() && cancels(&fresh, y) {
                let by = fresh.ml().clone();
                if !y.mark_canceled(&by) {
                    let own = y.ml().clone();
                    y.mark_canceled(&own);
                }
            }
        }
        q.items.push_front(fresh);
        q.items.truncate(self.capacity);
        q.refresh_legit();
        StoreOutcome::Added
    }

    fn mark_stored_canceled(&mut self, label: &Label, by: &LabelComponent) {
        let q = &mut self.stored[label.creator().index()];
        if let Some(idx) = q.find(label) {
            let item = &mut q.items[idx];
            if !item.mark_canceled(by) {
                let own = item.ml().clone();
                item.mark_canceled(&own);
            }
            q.refresh_legit();
        }
    }

    /// Marks `label` as canceled by `by`, storing it first if unknown.
    pub fn cancel(&mut self, label: &Label, by: &Label) -> Result<(), LabelingError> {
        if precedes_lb(by, label) {
            return Err(LabelingError::PreconditionViolated);
        }
        self.store(label);
        self.mark_stored_canceled(label, by.ml());
        let me = self.self_id.index();
        if let Some(m) = &self.max[me] {
            if m.eq_m(label) {
                let canceled = self.lookup(label).cloned();
                self.max[me] = canceled;
            }
        }
        Ok(())
    }

    fn validate(&mut self) {
        let misplaced_or_doubled = self.stored.iter().enumerate().any(|(j, q)| {
            q.items.iter().enumerate().any(|(a, x)| {
                x.creator().index() != j || q.items.iter().skip(a + 1).any(|y| y.eq_m(x))
            })
        });
        if misplaced_or_doubled {
            for q in &mut self.stored {
                *q = LabelQueue::default();
            }
            self.storage_resets += 1;
        } else {
            for q in &mut self.stored {
                let n = q.items.len();
                for a in 0..n {
                    for b in 0..n {
                        if a != b && q.items[b].is_legit() && cancels(&q.items[a], &q.items[b]) {
                            let by = q.items[a].ml().clone();
                            let item = &mut q.items[b];
                            if !item.mark_canceled(&by) {
                                let own = item.ml().clone();
                                item.mark_canceled(&own);
                            }
                        }
                    }
                }
                q.refresh_legit();
            }
        }
        self.validated = true;
    }

    /// Protects labels still referenced by the caller from pruning.
    pub fn pin(&mut self, labels: &[&Label]) {
        self.pinned.clear();
        self.pinned.extend(labels.iter().map(|&l| l.clone()));
    }

    /// Drops canceled labels that are `≺_b`-below a stored label which is
    /// itself `≺_b`-below another one. Labels named by `max`, pinned labels
    /// and `keep` are kept.
    fn prune(&mut self, keep: &[&Label]) {
        let max = &self.max;
        let pinned = &self.pinned;
        for q in &mut self.stored {
            let n = q.items.len();
            if n < 3 {
                continue;
            }
            let below: Vec<bool> = (0..n)
                .map(|y| (0..n).any(|z| precedes_b(q.items[y].ml(), q.items[z].ml())))
                .collect();
            let mut kept = Vec::with_capacity(n);
            for x in 0..n {
                let item = &q.items[x];
                let drop = !item.is_legit()
                    && !max
                        .iter()
                        .flatten()
                        .chain(pinned)
                        .chain(keep.iter().copied())
                        .any(|m| m.eq_m(item))
                    && (0..n).any(|y| below[y] && precedes_b(item.ml(), q.items[y].ml()));
                kept.push(!drop);
            }
            if kept.iter().any(|k| !k) {
                let mut it = kept.iter();
                q.items.retain(|_| *it.next().expect("one flag per item"));
                q.refresh_legit();
            }
        }
    }

    /// Removes stale information and recomputes `max[self]`.
    ///
    /// The maximal label is the `≺_lb`-greatest legitimate stored label. When
    /// there is none, a fresh label dominating `stored[self]` is created.
    pub fn label_bookkeeping(&mut self) -> Result<(), LabelingError> {
        self.bookkeeping(None, &[])
    }

    /// Bookkeeping for a processor that just canceled `floor`: the result is
    /// `≺_lb`-above `floor`. When no stored legitimate label qualifies, the
    /// fresh label is created in the lineage of `max(self, floor.creator)`.
    pub fn label_bookkeeping_above(&mut self, floor: &Label) -> Result<(), LabelingError> {
        self.bookkeeping(Some(floor), &[])
    }

    fn bookkeeping(&mut self, floor: Option<&Label>, keep: &[&Label]) -> Result<(), LabelingError> {
        if !self.validated {
            self.validate();
        }
        for j in 0..self.max.len() {
            if let Some(m) = self.max[j].take() {
                if m.creator().index() < self.stored.len() {
                    self.store(&m);
                    self.max[j] = self.lookup(&m).cloned();
                }
            }
        }
        self.prune(keep);
        let me = self.self_id.index();
        let greatest = self.stored.iter().rev().find_map(LabelQueue::legit_label);
        let chosen = match greatest {
            Some(l) if floor.map_or(true, |f| precedes_lb(f, l)) => l.clone(),
            _ => {
                let lineage = floor.map_or(me, |f| f.creator().index().max(me));
                let creator = ProcId::from_index(lineage);
                let fresh = next_label(self.stored[lineage].items.iter(), creator, &self.cfg)?;
                self.store(&fresh);
                self.created.push(fresh.clone());
                fresh
            }
        };
        self.max[me] = Some(chosen);
        self.ready = true;
        Ok(())
    }

    /// Processes the server part of a message from `from`, plus any labels
    /// carried by the client payload, then runs bookkeeping.
    pub fn label_bookkeeping_msg<'a, C>(
        &mut self,
        m: &ServerMessage<C>,
        from: ProcId,
        carried: impl IntoIterator<Item = &'a Label>,
    ) -> Result<(), LabelingError> {
        if !self.validated {
            self.validate();
        }
        if from.index() < self.max.len() && from != self.self_id {
            self.store(&m.sender_max);
            self.max[from.index()] = self.lookup(&m.sender_max).cloned();
        }
        if let Some(ls) = &m.last_sent {
            let me = self.self_id.index();
            if let (Some(cl), Some(mine)) = (ls.cl(), self.max[me].clone()) {
                if ls.eq_m(&mine) {
                    self.store(&mine);
                    self.mark_stored_canceled(&mine, cl);
                }
            }
        }
        let carried: Vec<&Label> = carried.into_iter().collect();
        for l in &carried {
            self.store(l);
        }
        self.bookkeeping(None, &carried)
    }

    /// Builds the server part of a message to `dest`.
    pub fn encapsulate<C>(
        &self,
        client: C,
        dest: ProcId,
    ) -> Result<ServerMessage<C>, LabelingError> {
        Ok(ServerMessage {
            sender_max: self.get_label()?.clone(),
            last_sent: self.max.get(dest.index()).cloned().flatten(),
            client,
        })
    }

    /// Checks the storage invariants: no misplaced or doubled labels, at most
    /// one legitimate label per queue, capacities respected, and a legitimate
    /// stored `max[self]` once ready.
    pub fn check_invariants(&self) -> bool {
        let queues_ok = self.stored.iter().enumerate().all(|(j, q)| {
            q.items.len() <= self.capacity
                && q.items.iter().filter(|l| l.is_legit()).count() <= 1
                && q.items.iter().enumerate().all(|(a, x)| {
                    x.creator().index() == j && q.items.iter().skip(a + 1).all(|y| !y.eq_m(x))
                })
        });
        let max_ok = !self.ready
            || self.max[self.self_id.index()]
                .as_ref()
                .is_some_and(|l| l.is_legit() && self.is_stored(l) && !self.is_canceled(l));
        queues_ok && max_ok
    }
}
