//! Seed, population and adversary sweeps. Runs are independent, so batches
//! fan out over a rayon pool when the `parallel` feature is on.

use serde::Serialize;

use crate::analysis::{cap_classify, CapLabel, ConsistencyClass};
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{run, RunOutcome};

/// Order-preserving map, parallel when the `parallel` feature is enabled.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Always sequential; the baseline for the parallel path.
pub fn seq_map<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(f).collect()
}

pub fn run_all(scenarios: &[Scenario]) -> Vec<RunOutcome> {
    par_map(scenarios, run)
}

pub fn run_all_sequential(scenarios: &[Scenario]) -> Vec<RunOutcome> {
    seq_map(scenarios, run)
}

pub fn run_seeds(base: &Scenario, seeds: impl IntoIterator<Item = u64>) -> Vec<RunOutcome> {
    let scenarios: Vec<Scenario> = seeds.into_iter().map(|s| base.with_seed(s)).collect();
    run_all(&scenarios)
}

/// Family classification over several runs.
pub fn classify_family(outcomes: &[RunOutcome]) -> (CapLabel, ConsistencyClass) {
    let runs: Vec<(bool, ConsistencyClass)> =
        outcomes.iter().map(|o| (o.verdict.available, o.verdict.consistency_class)).collect();
    cap_classify(&runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    N,
    Seed,
    Adversaries,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "N" | "n" => Ok(Axis::N),
            "seed" => Ok(Axis::Seed),
            "adversaries" => Ok(Axis::Adversaries),
            other => Err(format!("unknown axis {other:?}; expected N, seed or adversaries")),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::N => "N",
            Axis::Seed => "seed",
            Axis::Adversaries => "adversaries",
        })
    }
}

/// The base scenario with one axis set to `value`. For `adversaries` the
/// value is how many entries of the base adversary list to keep.
pub fn apply_axis(base: &Scenario, axis: Axis, value: u64) -> Result<Scenario, ScenarioError> {
    let mut s = base.clone();
    match axis {
        Axis::N => s.n = value as usize,
        Axis::Seed => s.seed = value,
        Axis::Adversaries => {
            let k = value as usize;
            if k > base.adversaries.len() {
                return Err(ScenarioError::Invalid(format!(
                    "scenario lists {} adversaries, cannot keep {k}",
                    base.adversaries.len()
                )));
            }
            s.adversaries.truncate(k);
        }
    }
    s.validate()?;
    Ok(s)
}

/// One `metrics.csv` line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub seed: u64,
    pub protocol: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub throughput_tps: f64,
    pub latency_mean_ms: f64,
    pub latency_p99_ms: f64,
    pub rounds_mean: f64,
    pub cap_label: String,
    pub consistency_class: String,
    /// Violated property names joined with `;`.
    pub violations: String,
}

impl MetricsRow {
    pub fn from_outcome(o: &RunOutcome) -> Self {
        let v = &o.verdict;
        Self {
            scenario: v.scenario.clone(),
            seed: v.seed,
            protocol: v.protocol.to_string(),
            n: v.n,
            throughput_tps: o.metrics.throughput_tps,
            latency_mean_ms: o.metrics.latency_mean_ms,
            latency_p99_ms: o.metrics.latency_p99_ms,
            rounds_mean: o.metrics.rounds_mean,
            cap_label: v.cap_label.to_string(),
            consistency_class: v.consistency_class.to_string(),
            violations: v.violated_properties().join(";"),
        }
    }
}

/// Why one sweep point produced no outcome.
#[derive(Debug, thiserror::Error)]
pub enum SweepFailure {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("run panicked: {0}")]
    Panicked(String),
}

#[derive(Debug)]
pub struct SweepPoint {
    pub axis: Axis,
    pub value: u64,
    pub outcome: Result<RunOutcome, SweepFailure>,
}

fn guarded_run(s: &Scenario) -> Result<RunOutcome, SweepFailure> {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(s))).map_err(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "unknown panic".into());
        SweepFailure::Panicked(msg)
    })
}

/// One run per value. A value that fails to build or run is kept as a
/// failed point and the rest still run.
pub fn sweep(base: &Scenario, axis: Axis, values: &[u64]) -> Vec<SweepPoint> {
    par_map(values, |value| SweepPoint {
        axis,
        value: *value,
        outcome: apply_axis(base, axis, *value).map_err(SweepFailure::from).and_then(|s| guarded_run(&s)),
    })
}
