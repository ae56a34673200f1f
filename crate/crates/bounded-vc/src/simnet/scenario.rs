//! Declarative run descriptions.
//!
//! A scenario is a TOML document with flat top-level keys and one `[fault]`
//! table:
//!
//! ```toml
//! N = 4
//! C = 2
//! MAXINT = 64
//! scheduler = "random"
//! steps = 200000
//! seed = 7
//! increment_rate = 0.5
//!
//! [fault]
//! transient_seed = 7
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    FaultPlan, RoundRobin, Scheduler, ScriptEntry, Scripted, SeededRandom, SimError, World,
};
use crate::labeling::{ConfigError, SystemConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    #[default]
    RoundRobin,
    Random,
    Scripted,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid fault plan: {0}")]
    Plan(#[from] super::PlanError),
    #[error("steps must be at least 1")]
    NoSteps,
    #[error("increment_rate must lie in [0, 1], got {0}")]
    BadRate(f64),
    #[error("script entry {0} names a processor outside 1..=N")]
    BadScript(ScriptEntry),
    #[error("scheduler \"scripted\" needs a non-empty script")]
    EmptyScript,
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn default_rate() -> f64 {
    0.5
}

fn default_checks() -> Vec<String> {
    vec!["all".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "MAXINT")]
    pub maxint: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
    #[serde(default)]
    pub scheduler: SchedulerKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<ScriptEntry>,
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub increment_rate: f64,
    #[serde(default = "default_checks")]
    pub checks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "FaultPlan::is_empty")]
    pub fault: FaultPlan,
}

impl Scenario {
    /// Parses and validates a scenario.
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// The canonical text embedded in trace headers.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenarios always serialize")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.system_config()?;
        if self.steps == 0 {
            return Err(ScenarioError::NoSteps);
        }
        if !(0.0..=1.0).contains(&self.increment_rate) {
            return Err(ScenarioError::BadRate(self.increment_rate));
        }
        self.fault.validate(self.n)?;
        for e in &self.script {
            let ok = match *e {
                ScriptEntry::Auto(p) | ScriptEntry::Send(p) => p.index() < self.n,
                ScriptEntry::Receive { proc, from } => {
                    proc.index() < self.n && from.index() < self.n
                }
            };
            if !ok {
                return Err(ScenarioError::BadScript(*e));
            }
        }
        if self.scheduler == SchedulerKind::Scripted && self.script.is_empty() {
            return Err(ScenarioError::EmptyScript);
        }
        Ok(())
    }

    pub fn system_config(&self) -> Result<SystemConfig, ConfigError> {
        SystemConfig::new(self.n, self.c, self.maxint, self.k)
    }

    /// A clean world; the fault plan is applied by [`super::run()`].
    pub fn build_world(&self) -> Result<World, ScenarioError> {
        let sys = self.system_config()?;
        Ok(World::clean(&sys, self.increment_rate, self.seed)?)
    }

    pub fn build_scheduler(&self) -> Box<dyn Scheduler> {
        match self.scheduler {
            SchedulerKind::RoundRobin => Box::new(RoundRobin::new(self.n)),
            SchedulerKind::Random => Box::new(SeededRandom::new(
                self.n,
                self.c,
                self.seed ^ 0x9e37_79b9_7f4a_7c15,
            )),
            SchedulerKind::Scripted => Box::new(Scripted::new(self.n, self.script.clone())),
        }
    }
}
