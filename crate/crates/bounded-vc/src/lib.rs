//! Practically-self-stabilizing bounded vector clocks.
//!
//! The crate is layered bottom-up:
//!
//! * [`labels`]: bounded label components, label orders and fresh-label construction.
//! * [`labeling`]: the per-processor bounded labeling algorithm and its interface.
//! * [`vcpair`]: overflow-tolerant vector clock pairs and their queries.
//! * [`protocol`]: the per-processor state machine that composes the two.
//! * [`simnet`]: a deterministic interleaving simulator with fault injection and traces.
//! * [`oracle`]: unbounded shadow clocks and checkers for the recovery properties.

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod labeling;
pub mod labels;
pub mod oracle;
pub mod protocol;
pub mod simnet;
pub mod vcpair;

/// A processor identifier in `1..=N`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct ProcId(u16);

impl TryFrom<u16> for ProcId {
    type Error = String;

    fn try_from(v: u16) -> Result<Self, Self::Error> {
        ProcId::new(v).ok_or_else(|| "processor ids start at 1".to_string())
    }
}

impl From<ProcId> for u16 {
    fn from(p: ProcId) -> u16 {
        p.0
    }
}

impl ProcId {
    /// Returns `None` for zero.
    pub fn new(id: u16) -> Option<Self> {
        (id >= 1).then_some(ProcId(id))
    }

    /// Identifier for a zero-based index.
    pub fn from_index(index: usize) -> Self {
        ProcId(index as u16 + 1)
    }

    pub fn get(self) -> u16 {
        self.0
    }

    /// Zero-based position in per-processor vectors.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    /// All identifiers `1..=n` in ascending order.
    pub fn all(n: usize) -> impl Iterator<Item = ProcId> + Clone {
        (0..n).map(ProcId::from_index)
    }
}

impl fmt::Display for ProcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for ProcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}
