//! Offline analysis of run traces: property checks, CAP classification and
//! metrics.

pub mod cap;
pub mod checks;
pub mod metrics;
pub mod trace;

use serde::{Deserialize, Serialize};

pub use cap::{availability, cap_classify, consistency_class, min_abstainers_to_fork, CapLabel, ConsistencyClass, DomainError};
pub use checks::Evidence;
pub use metrics::{compute_metrics, index_of_tolerance, rounds_to_commit, IndexOfTolerance, MetricsReport};
pub use trace::{Phase, RunHeader, Trace, TraceRecord};

use crate::scenario::Protocol;
use crate::types::Digest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunVerdict {
    pub scenario: String,
    pub protocol: Protocol,
    pub seed: u64,
    pub n: usize,
    pub finality: bool,
    pub agreement: bool,
    pub total_order: bool,
    pub validity: bool,
    pub integrity_no_dup: bool,
    pub integrity_no_creation: bool,
    pub block_validity: bool,
    pub termination: bool,
    pub termination_inconclusive: bool,
    /// finality holds exactly when agreement and total order both hold
    pub finality_equivalence: bool,
    pub reverts: usize,
    pub consistency_class: ConsistencyClass,
    pub available: bool,
    pub cap_label: CapLabel,
    pub violations: Vec<Evidence>,
    pub trace_digest: Digest,
}

impl RunVerdict {
    pub fn violated_properties(&self) -> Vec<String> {
        let mut v: Vec<String> = self.violations.iter().map(|e| e.property.clone()).collect();
        v.dedup();
        v
    }

    pub fn has_violation(&self) -> bool {
        !self.violations.is_empty()
    }
}

pub fn evaluate(trace: &Trace) -> RunVerdict {
    let h = trace.header();
    let orders = trace.append_orders();
    let mut violations = Vec::new();
    let mut run = |c: checks::Check| match c {
        Ok(()) => true,
        Err(e) => {
            violations.push(e);
            false
        }
    };
    let finality = run(checks::check_finality(&orders));
    let agreement = run(checks::check_agreement(&orders));
    let total_order = run(checks::check_total_order(&orders));
    let validity = run(checks::check_validity(trace));
    let integrity_no_dup = run(checks::check_integrity_no_dup(trace));
    let integrity_no_creation = run(checks::check_integrity_no_creation(trace));
    let block_validity = run(checks::check_block_validity(trace));
    let inconclusive = checks::termination_inconclusive(trace);
    let termination = match checks::check_termination(trace) {
        Ok(()) => true,
        Err(e) => {
            if !inconclusive {
                violations.push(e);
            }
            false
        }
    };
    let available = availability(trace);
    RunVerdict {
        scenario: h.scenario.clone(),
        protocol: h.protocol,
        seed: h.seed,
        n: h.n,
        finality,
        agreement,
        total_order,
        validity,
        integrity_no_dup,
        integrity_no_creation,
        block_validity,
        termination,
        termination_inconclusive: inconclusive,
        finality_equivalence: finality == (agreement && total_order),
        reverts: trace.count_reverts(),
        consistency_class: consistency_class(trace, finality),
        available,
        cap_label: cap::cap_label(available),
        violations,
        trace_digest: trace.digest(),
    }
}
