use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ProcId;

/// Which part of the state a transient fault replaces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransientScope {
    /// Processor states and channel contents.
    #[default]
    All,
    /// Channel contents only; processors keep their clean state.
    Channels,
}

impl TransientScope {
    pub fn as_str(self) -> &'static str {
        match self {
            TransientScope::All => "all",
            TransientScope::Channels => "channels",
        }
    }
}

/// A one-off channel disturbance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelFault {
    /// Append a copy of the head message.
    Duplicate,
    /// Swap the two oldest messages.
    Reorder,
}

impl ChannelFault {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelFault::Duplicate => "duplicate",
            ChannelFault::Reorder => "reorder",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelEvent {
    pub step: u64,
    pub src: ProcId,
    pub dst: ProcId,
    pub kind: ChannelFault,
}

/// Faults to apply during a run, keyed by the step before which they occur.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient_seed: Option<u64>,
    #[serde(default)]
    pub transient_scope: TransientScope,
    #[serde(default, with = "proc_map", skip_serializing_if = "BTreeMap::is_empty")]
    pub crash_at: BTreeMap<ProcId, u64>,
    #[serde(default, with = "proc_map", skip_serializing_if = "BTreeMap::is_empty")]
    pub restart_at: BTreeMap<ProcId, u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channel_events: Vec<ChannelEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanError {
    UnknownProc(ProcId),
    RestartBeforeCrash(ProcId),
    RestartWithoutCrash(ProcId),
    SelfChannel(ProcId),
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanError::UnknownProc(p) => write!(f, "processor {p} is outside 1..=N"),
            PlanError::RestartBeforeCrash(p) => {
                write!(f, "processor {p} restarts no later than it crashes")
            }
            PlanError::RestartWithoutCrash(p) => {
                write!(f, "processor {p} restarts without crashing")
            }
            PlanError::SelfChannel(p) => write!(f, "no channel from processor {p} to itself"),
        }
    }
}

impl std::error::Error for PlanError {}

impl FaultPlan {
    pub fn validate(&self, n: usize) -> Result<(), PlanError> {
        let check = |p: ProcId| {
            if p.index() < n {
                Ok(())
            } else {
                Err(PlanError::UnknownProc(p))
            }
        };
        for &p in self.crash_at.keys() {
            check(p)?;
        }
        for (&p, &t) in &self.restart_at {
            check(p)?;
            match self.crash_at.get(&p) {
                None => return Err(PlanError::RestartWithoutCrash(p)),
                Some(&c) if t <= c => return Err(PlanError::RestartBeforeCrash(p)),
                Some(_) => {}
            }
        }
        for ev in &self.channel_events {
            check(ev.src)?;
            check(ev.dst)?;
            if ev.src == ev.dst {
                return Err(PlanError::SelfChannel(ev.src));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.transient_seed.is_none()
            && self.crash_at.is_empty()
            && self.restart_at.is_empty()
            && self.channel_events.is_empty()
    }
}

mod proc_map {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::ProcId;

    pub fn serialize<S: Serializer>(map: &BTreeMap<ProcId, u64>, s: S) -> Result<S::Ok, S::Error> {
        let m: BTreeMap<String, u64> = map.iter().map(|(p, t)| (p.to_string(), *t)).collect();
        m.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<ProcId, u64>, D::Error> {
        let m = BTreeMap::<String, u64>::deserialize(d)?;
        m.into_iter()
            .map(|(k, v)| {
                let id = k
                    .parse::<u16>()
                    .ok()
                    .and_then(ProcId::new)
                    .ok_or_else(|| D::Error::custom(format!("bad processor id {k:?}")))?;
                Ok((id, v))
            })
            .collect()
    }
}
