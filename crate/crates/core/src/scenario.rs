//! Scenario files: protocol, population, network model, workload and
//! adversaries for one run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::AdversarySpec;
use crate::simnet::{ClockSkewMap, DelayModel, PartitionSchedule, PreGstPolicy, SimTime};
use crate::types::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Aura,
    Clique,
    Pbft,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Protocol::Aura => "aura",
            Protocol::Clique => "clique",
            Protocol::Pbft => "pbft",
        })
    }
}

fn default_gst() -> Option<u64> {
    Some(0)
}

fn default_pre_gst() -> PreGstPolicy {
    PreGstPolicy::Hold
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub d_min: u64,
    pub d_max: u64,
    /// Absent means synchronous from the start; `null` means never.
    #[serde(default = "default_gst")]
    pub gst: Option<u64>,
    #[serde(default = "default_pre_gst")]
    pub pre_gst: PreGstPolicy,
    #[serde(default)]
    pub partitions: PartitionSchedule,
    /// Clock offsets in ticks, keyed by node index.
    #[serde(default)]
    pub skew: BTreeMap<u32, i64>,
}

impl NetworkSpec {
    pub fn delay_model(&self) -> DelayModel {
        DelayModel { d_min: self.d_min, d_max: self.d_max, gst: self.gst, pre_gst: self.pre_gst }
    }

    pub fn skew_map(&self) -> ClockSkewMap {
        ClockSkewMap { offset: self.skew.iter().map(|(n, o)| (NodeId(*n), *o)).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    /// Submissions per second, per client.
    pub rate_tps: f64,
}

impl Default for Workload {
    fn default() -> Self {
        Self { rate_tps: 20.0 }
    }
}

impl Workload {
    pub fn interval(&self) -> u64 {
        ((1000.0 / self.rate_tps).round() as u64).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuraParams {
    pub step_duration_ms: u64,
}

impl Default for AuraParams {
    fn default() -> Self {
        Self { step_duration_ms: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliqueParams {
    pub epoch_length: u64,
    pub wiggle_max_ms: u64,
    pub period_ms: u64,
}

impl Default for CliqueParams {
    fn default() -> Self {
        Self { epoch_length: 30_000, wiggle_max_ms: 500, period_ms: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PbftParams {
    /// Defaults to ten times the post-GST delay bound.
    #[serde(default)]
    pub view_timeout_ms: Option<u64>,
    #[serde(default)]
    pub block_interval_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub protocol: Protocol,
    #[serde(rename = "N", alias = "n")]
    pub n: usize,
    #[serde(default = "Scenario::default_clients")]
    pub clients: usize,
    #[serde(default = "Scenario::default_block_size")]
    pub block_size: usize,
    pub duration_ticks: u64,
    pub seed: u64,
    #[serde(default)]
    pub settle_ticks: Option<u64>,
    pub network: NetworkSpec,
    #[serde(default)]
    pub adversaries: Vec<AdversarySpec>,
    #[serde(default)]
    pub workload: Workload,
    /// `[start, end)` used by the availability check; defaults to the whole
    /// submission phase.
    #[serde(default)]
    pub adverse_window: Option<[u64; 2]>,
    #[serde(default)]
    pub aura: AuraParams,
    #[serde(default)]
    pub clique: CliqueParams,
    #[serde(default)]
    pub pbft: PbftParams,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    fn default_clients() -> usize {
        4
    }

    fn default_block_size() -> usize {
        10
    }

    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.clients == 0 {
            return bad("at least one client is required".into());
        }
        if self.block_size == 0 {
            return bad("block_size must be positive".into());
        }
        if self.network.d_min > self.network.d_max {
            return bad("d_min exceeds d_max".into());
        }
        if let PreGstPolicy::Uniform { cap } = self.network.pre_gst {
            if cap < self.network.d_min {
                return bad("pre-GST cap below d_min".into());
            }
        }
        self.network.partitions.validate().map_err(ScenarioError::Invalid)?;
        for iv in &self.network.partitions.intervals {
            if iv.groups.iter().flatten().any(|n| n.index() >= self.n) {
                return bad("partition names an unknown authority".into());
            }
        }
        if self.network.skew.keys().any(|n| *n as usize >= self.n) {
            return bad("skew names an unknown authority".into());
        }
        if !(self.workload.rate_tps.is_finite() && self.workload.rate_tps > 0.0) {
            return bad("rate_tps must be positive".into());
        }
        if self.settle() >= self.duration_ticks {
            return bad(format!(
                "duration_ticks {} must exceed the settle window {}",
                self.duration_ticks,
                self.settle()
            ));
        }
        if let Some([a, b]) = self.adverse_window {
            if a >= b {
                return bad("adverse_window must be non-empty".into());
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for adv in &self.adversaries {
            if adv.node.index() >= self.n {
                return bad(format!("adversary {} is not an authority", adv.node));
            }
            if !seen.insert((adv.node, adv.kind)) {
                return bad(format!("adversary {} listed twice as {:?}", adv.node, adv.kind));
            }
            if let Some(w) = adv.window {
                if w.start >= w.end {
                    return bad("adversary window must be non-empty".into());
                }
            }
        }
        match self.protocol {
            Protocol::Aura if self.aura.step_duration_ms == 0 => bad("step_duration_ms must be positive".into()),
            Protocol::Clique if self.clique.epoch_length == 0 => bad("epoch_length must be positive".into()),
            Protocol::Clique if self.clique.wiggle_max_ms == 0 => bad("wiggle_max_ms must be positive".into()),
            Protocol::Clique if self.clique.period_ms == 0 => bad("period_ms must be positive".into()),
            Protocol::Pbft if self.view_timeout() == 0 => bad("view_timeout_ms must be positive".into()),
            _ => Ok(()),
        }
    }

    pub fn view_timeout(&self) -> u64 {
        self.pbft.view_timeout_ms.unwrap_or(10 * self.network.d_max).max(1)
    }

    pub fn block_interval(&self) -> u64 {
        self.pbft.block_interval_ms.unwrap_or(0)
    }

    /// Ticks reserved at the end of the run for in-flight work to finish.
    pub fn settle(&self) -> SimTime {
        if let Some(s) = self.settle_ticks {
            return s;
        }
        let d = self.network.d_max;
        match self.protocol {
            Protocol::Aura => (self.n as u64 + 3) * self.aura.step_duration_ms,
            Protocol::Clique => {
                (self.n as u64 / 2 + 3) * (self.clique.period_ms + self.clique.wiggle_max_ms + 2 * d)
            }
            Protocol::Pbft => 4 * self.view_timeout() + 10 * (self.block_interval() + 3 * d),
        }
    }

    pub fn cutoff(&self) -> SimTime {
        self.duration_ticks - self.settle()
    }

    /// Nominal time between consecutive blocks in a fault-free run.
    pub fn expected_interval(&self) -> u64 {
        match self.protocol {
            Protocol::Aura => self.aura.step_duration_ms,
            Protocol::Clique => self.clique.period_ms + self.network.d_max,
            Protocol::Pbft => self.block_interval() + 3 * self.network.d_max.max(1),
        }
    }

    pub fn adverse_phase(&self) -> (SimTime, SimTime) {
        match self.adverse_window {
            Some([a, b]) => (a, b),
            None => (0, self.cutoff().saturating_sub(self.settle())),
        }
    }

    pub fn byzantine(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.adversaries.iter().map(|a| a.node).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn miners(&self) -> Vec<NodeId> {
        (0..self.n as u32).map(NodeId).collect()
    }

    pub fn client_ids(&self) -> Vec<NodeId> {
        (self.n as u32..(self.n + self.clients) as u32).map(NodeId).collect()
    }

    pub fn with_seed(&self, seed: u64) -> Scenario {
        Scenario { seed, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t", "protocol": "aura", "N": 4, "seed": 1, "duration_ticks": 20000,
        "network": {"d_min": 5, "d_max": 10}
    }"#;

    #[test]
    fn seed_is_required() {
        let text = MINIMAL.replace(r#""seed": 1, "#, "");
        assert!(matches!(Scenario::from_json(&text), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn lowercase_n_accepted() {
        let s = Scenario::from_json(&MINIMAL.replace(r#""N": 4"#, r#""n": 4"#)).unwrap();
        assert_eq!(s.n, 4);
    }

    #[test]
    fn minimal_scenario_defaults() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.clients, 4);
        assert_eq!(s.network.gst, Some(0));
        assert_eq!(s.aura.step_duration_ms, 1000);
        assert_eq!(s.settle(), 7000);
        assert_eq!(s.cutoff(), 13000);
    }

    #[test]
    fn json_round_trip() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn null_gst_means_never() {
        let text = MINIMAL.replace(r#""d_max": 10"#, r#""d_max": 10, "gst": null, "pre_gst": {"policy": "hold"}"#);
        let s = Scenario::from_json(&text).unwrap();
        assert_eq!(s.network.gst, None);
    }

    #[test]
    fn rejects_bad_delays() {
        let text = MINIMAL.replace(r#""d_min": 5"#, r#""d_min": 50"#);
        assert!(matches!(Scenario::from_json(&text), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = MINIMAL.replace(r#""N": 4"#, r#""N": 4, "bogus": 1"#);
        assert!(matches!(Scenario::from_json(&text), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn rejects_short_duration() {
        let text = MINIMAL.replace("20000", "5000");
        assert!(Scenario::from_json(&text).is_err());
    }

    #[test]
    fn rejects_adversary_outside_authorities() {
        let text = MINIMAL.replace(r#""N": 4"#, r#""N": 4, "adversaries": [{"node": 9, "kind": "silent"}]"#);
        assert!(Scenario::from_json(&text).is_err());
    }
}
