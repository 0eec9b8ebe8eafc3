//! Consistency and availability classification of runs and families.

use serde::{Deserialize, Serialize};

use super::trace::{Trace, TraceRecord};

/// Ordered from worst to best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyClass {
    None,
    Eventual,
    Strong,
}

impl std::fmt::Display for ConsistencyClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConsistencyClass::None => "none",
            ConsistencyClass::Eventual => "eventual",
            ConsistencyClass::Strong => "strong",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CapLabel {
    AP,
    CP,
}

impl std::fmt::Display for CapLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CapLabel::AP => "AP",
            CapLabel::CP => "CP",
        })
    }
}

/// Strong: no correct node ever saw a fork. Eventual: forks were seen but
/// at the horizon every final chain is a prefix of the longest one. None:
/// two final chains still hold conflicting blocks.
pub fn consistency_class(trace: &Trace, finality: bool) -> ConsistencyClass {
    if finality && trace.count_reverts() == 0 {
        return ConsistencyClass::Strong;
    }
    let chains = trace.final_chains();
    let longest = chains.values().max_by_key(|c| c.len());
    let resolved = match longest {
        None => true,
        Some(l) => chains.values().all(|c| l[..c.len()] == c[..]),
    };
    if resolved {
        ConsistencyClass::Eventual
    } else {
        ConsistencyClass::None
    }
}

/// Commits kept flowing during the adverse phase: no gap between the
/// phase start, consecutive first commits of client transactions and the
/// phase end exceeds twenty nominal block intervals.
pub fn availability(trace: &Trace) -> bool {
    let h = trace.header();
    let correct = h.correct_miners();
    let (start, end) = (h.adverse_start, h.adverse_end);
    if end <= start {
        return true;
    }
    let window = 20 * h.expected_interval.max(1);
    let clients: std::collections::BTreeSet<_> = trace
        .records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Submit { tx, byzantine: false, .. } => Some(*tx),
            _ => None,
        })
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut times = Vec::new();
    for r in &trace.records {
        if let TraceRecord::Commit { t, node, txs, .. } = r {
            if correct.contains(node) {
                for tx in txs {
                    if clients.contains(tx) && seen.insert(*tx) {
                        times.push(*t);
                    }
                }
            }
        }
    }
    let mut last = start;
    for t in times.into_iter().filter(|t| *t >= start && *t < end) {
        if t - last > window {
            return false;
        }
        last = t;
    }
    end - last <= window
}

pub fn cap_label(available: bool) -> CapLabel {
    if available {
        CapLabel::AP
    } else {
        CapLabel::CP
    }
}

/// Family label: AP only if every run stayed available; the consistency
/// class is the worst seen.
pub fn cap_classify(runs: &[(bool, ConsistencyClass)]) -> (CapLabel, ConsistencyClass) {
    let available = runs.iter().all(|(a, _)| *a);
    let class = runs.iter().map(|(_, c)| *c).min().unwrap_or(ConsistencyClass::Strong);
    (cap_label(available), class)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("N = {0} must be odd and at least 3")]
    BadN(usize),
    #[error("N1 = {n1} must lie in [K + 1, 2K] = [{lo}, {hi}]")]
    BadN1 { n1: usize, lo: usize, hi: usize },
}

/// Fewest abstainers in the larger group `A1` (size `n1`) that keep the
/// vote-out of a skewed leader below `K + 1`, so its block is committed by
/// the minority and the chains fork: `n1 - K`.
pub fn min_abstainers_to_fork(n: usize, n1: usize) -> Result<usize, DomainError> {
    if n < 3 || n.is_multiple_of(2) {
        return Err(DomainError::BadN(n));
    }
    let k = n / 2;
    if n1 < k + 1 || n1 > 2 * k {
        return Err(DomainError::BadN1 { n1, lo: k + 1, hi: 2 * k });
    }
    Ok(n1 - k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{AuthoritySet, VoteOutcome};
    use crate::types::NodeId;

    #[test]
    fn family_label_is_worst_case() {
        use ConsistencyClass::*;
        assert_eq!(cap_classify(&[(true, Strong), (true, Eventual)]), (CapLabel::AP, Eventual));
        assert_eq!(cap_classify(&[(true, None), (false, Strong)]), (CapLabel::CP, None));
        assert_eq!(cap_classify(&[(false, Strong)]), (CapLabel::CP, Strong));
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(min_abstainers_to_fork(5, 3), Ok(1));
        assert_eq!(min_abstainers_to_fork(13, 12), Ok(6));
        assert!(matches!(min_abstainers_to_fork(4, 3), Err(DomainError::BadN(4))));
        assert!(matches!(min_abstainers_to_fork(5, 2), Err(DomainError::BadN1 { .. })));
        assert!(min_abstainers_to_fork(5, 5).is_err());
    }

    /// Smallest abstainer count that stops the A1 vote against a single A2
    /// leader, found by tallying real votes.
    fn brute_force(n: usize, n1: usize) -> usize {
        let target = NodeId(n as u32 - 1);
        (0..=n1)
            .find(|b| {
                let mut set = AuthoritySet::new((0..n as u32).map(NodeId).collect());
                let removed = (0..(n1 - b) as u32)
                    .map(|v| set.cast_vote(NodeId(v), target))
                    .any(|o| o == VoteOutcome::Removed);
                !removed
            })
            .unwrap()
    }

    #[test]
    fn closed_form_matches_vote_tally_up_to_13() {
        for n in (3..=13).step_by(2) {
            let k = n / 2;
            for n1 in k + 1..=2 * k {
                assert_eq!(min_abstainers_to_fork(n, n1).unwrap(), brute_force(n, n1), "N={n} N1={n1}");
            }
        }
    }
}
