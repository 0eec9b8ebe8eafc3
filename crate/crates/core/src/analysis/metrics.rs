//! Throughput, latency, message rounds and the index of tolerance.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::trace::{Phase, Trace, TraceRecord};
use crate::types::{Digest, NodeId};

/// Message rounds between each block's proposal and its first commit by a
/// correct node: distinct `(phase, slot)` labels on sends logged in
/// between, both ends included.
pub fn rounds_to_commit(trace: &Trace) -> BTreeMap<Digest, u64> {
    let correct: BTreeSet<NodeId> = trace.header().correct_miners().into_iter().collect();
    let mut proposed: BTreeMap<Digest, usize> = BTreeMap::new();
    let mut committed: BTreeMap<Digest, usize> = BTreeMap::new();
    let mut sends: Vec<(usize, Phase, u64)> = Vec::new();
    for (i, r) in trace.records.iter().enumerate() {
        match r {
            TraceRecord::Send { phase, slot, block, .. } => {
                sends.push((i, *phase, *slot));
                if matches!(phase, Phase::Propose | Phase::Preprepare) {
                    if let Some(b) = block {
                        proposed.entry(*b).or_insert(i);
                    }
                }
            }
            TraceRecord::Commit { node, block, .. } if correct.contains(node) => {
                committed.entry(*block).or_insert(i);
            }
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    for (block, c) in committed {
        let Some(p) = proposed.get(&block).copied() else { continue };
        let lo = sends.partition_point(|(i, _, _)| *i < p);
        let hi = sends.partition_point(|(i, _, _)| *i <= c);
        let labels: BTreeSet<(Phase, u64)> = sends[lo..hi].iter().map(|(_, ph, s)| (*ph, *s)).collect();
        out.insert(block, labels.len() as u64);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub throughput_tps: f64,
    pub committed_txs: usize,
    pub blocks_committed: usize,
    pub latency_min_ms: f64,
    pub latency_mean_ms: f64,
    pub latency_p50_ms: f64,
    pub latency_p99_ms: f64,
    pub rounds_mean: f64,
    /// Mean commit latency seen by each correct node.
    pub per_node_latency_mean_ms: BTreeMap<NodeId, f64>,
}

/// Nearest-rank percentile of a sorted sample.
pub fn percentile(sorted: &[u64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1] as f64
}

fn mean(xs: &[u64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<u64>() as f64 / xs.len() as f64
    }
}

pub fn compute_metrics(trace: &Trace) -> MetricsReport {
    let h = trace.header();
    let correct: BTreeSet<NodeId> = h.correct_miners().into_iter().collect();
    let mut submitted: BTreeMap<Digest, u64> = BTreeMap::new();
    for r in &trace.records {
        if let TraceRecord::Submit { t, tx, byzantine: false, .. } = r {
            submitted.insert(*tx, *t);
        }
    }
    let mut first: BTreeMap<Digest, u64> = BTreeMap::new();
    let mut per_node: BTreeMap<NodeId, Vec<u64>> = correct.iter().map(|n| (*n, Vec::new())).collect();
    let mut per_node_seen: BTreeSet<(NodeId, Digest)> = BTreeSet::new();
    let mut blocks = BTreeSet::new();
    for r in &trace.records {
        if let TraceRecord::Commit { t, node, block, txs, .. } = r {
            if !correct.contains(node) {
                continue;
            }
            blocks.insert(*block);
            for tx in txs {
                let Some(sub) = submitted.get(tx) else { continue };
                first.entry(*tx).or_insert(*t);
                if per_node_seen.insert((*node, *tx)) {
                    per_node.get_mut(node).expect("correct node").push(t - sub);
                }
            }
        }
    }
    let mut latencies: Vec<u64> = first.iter().map(|(tx, t)| t - submitted[tx]).collect();
    latencies.sort_unstable();
    let in_window = first.values().filter(|t| **t <= h.cutoff).count();
    let secs = h.cutoff as f64 / 1000.0;
    let rounds: Vec<u64> = rounds_to_commit(trace).into_values().collect();
    MetricsReport {
        throughput_tps: if secs > 0.0 { in_window as f64 / secs } else { 0.0 },
        committed_txs: first.len(),
        blocks_committed: blocks.len(),
        latency_min_ms: latencies.first().copied().unwrap_or(0) as f64,
        latency_mean_ms: mean(&latencies),
        latency_p50_ms: percentile(&latencies, 50.0),
        latency_p99_ms: percentile(&latencies, 99.0),
        rounds_mean: mean(&rounds),
        per_node_latency_mean_ms: per_node.into_iter().map(|(n, v)| (n, mean(&v))).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexOfTolerance {
    /// attacked / baseline; 0 with `zero_baseline` set when the baseline
    /// committed nothing.
    pub throughput_ratio: f64,
    pub latency_ratio: f64,
    pub zero_baseline: bool,
    pub violated_properties: Vec<String>,
}

pub fn index_of_tolerance(baseline: &MetricsReport, attacked: &MetricsReport, violated: Vec<String>) -> IndexOfTolerance {
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    IndexOfTolerance {
        throughput_ratio: ratio(attacked.throughput_tps, baseline.throughput_tps),
        latency_ratio: ratio(attacked.latency_mean_ms, baseline.latency_mean_ms),
        zero_baseline: baseline.throughput_tps <= 0.0 || baseline.latency_mean_ms <= 0.0,
        violated_properties: violated,
    }
}
