//! Property checkers over a run trace. Only correct authorities count.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::trace::{Trace, TraceRecord};
use crate::crypto::KeyRegistry;
use crate::types::{Digest, NodeId, Role, Signature};

/// Why a property failed, with the nodes and blocks involved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub property: String,
    pub detail: String,
    pub nodes: Vec<NodeId>,
    pub blocks: Vec<Digest>,
}

impl Evidence {
    fn new(property: &str, detail: String, nodes: Vec<NodeId>, blocks: Vec<Digest>) -> Self {
        Self { property: property.to_string(), detail, nodes, blocks }
    }
}

pub type Check = Result<(), Evidence>;

/// Per-node block sequences in first-append order.
pub type Orders = BTreeMap<NodeId, Vec<Digest>>;

/// Every correct node appended exactly the same sequence.
pub fn check_finality(orders: &Orders) -> Check {
    let mut it = orders.iter();
    let Some((first, reference)) = it.next() else { return Ok(()) };
    for (node, seq) in it {
        if seq != reference {
            let pos = reference.iter().zip(seq).take_while(|(a, b)| a == b).count();
            let blocks = reference.get(pos).into_iter().chain(seq.get(pos)).copied().collect();
            return Err(Evidence::new(
                "finality",
                format!("histories of {first} and {node} diverge at position {pos}"),
                vec![*first, *node],
                blocks,
            ));
        }
    }
    Ok(())
}

/// A block appended by one correct node is appended by all of them.
pub fn check_agreement(orders: &Orders) -> Check {
    let sets: BTreeMap<NodeId, BTreeSet<Digest>> =
        orders.iter().map(|(n, s)| (*n, s.iter().copied().collect())).collect();
    for (a, sa) in &sets {
        for (b, sb) in &sets {
            if let Some(missing) = sa.difference(sb).next() {
                return Err(Evidence::new(
                    "agreement",
                    format!("{a} appended a block {b} never appended"),
                    vec![*a, *b],
                    vec![*missing],
                ));
            }
        }
    }
    Ok(())
}

/// Blocks appended by two correct nodes appear in the same relative order.
pub fn check_total_order(orders: &Orders) -> Check {
    let nodes: Vec<&NodeId> = orders.keys().collect();
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            let sb: BTreeSet<&Digest> = orders[*b].iter().collect();
            let sa: BTreeSet<&Digest> = orders[*a].iter().collect();
            let pa: Vec<&Digest> = orders[*a].iter().filter(|d| sb.contains(d)).collect();
            let pb: Vec<&Digest> = orders[*b].iter().filter(|d| sa.contains(d)).collect();
            if let Some(pos) = pa.iter().zip(&pb).position(|(x, y)| x != y) {
                return Err(Evidence::new(
                    "total_order",
                    format!("{a} and {b} order common blocks differently"),
                    vec![**a, **b],
                    vec![*pa[pos], *pb[pos]],
                ));
            }
        }
    }
    Ok(())
}

/// Committed tx ids per correct node at the end of the run, plus the first
/// duplicate seen while replaying appends and reverts.
type TxSets = BTreeMap<NodeId, BTreeSet<Digest>>;

fn replay_txs(trace: &Trace) -> (TxSets, Option<(NodeId, Digest)>) {
    let correct = trace.header().correct_miners();
    let mut sets: TxSets = correct.iter().map(|n| (*n, BTreeSet::new())).collect();
    let mut block_txs: BTreeMap<Digest, Vec<Digest>> = BTreeMap::new();
    let mut dup = None;
    for r in &trace.records {
        match r {
            TraceRecord::Commit { node, block, txs, .. } => {
                block_txs.entry(*block).or_insert_with(|| txs.clone());
                if let Some(set) = sets.get_mut(node) {
                    for tx in txs {
                        if !set.insert(*tx) && dup.is_none() {
                            dup = Some((*node, *tx));
                        }
                    }
                }
            }
            TraceRecord::Revert { node, block, .. } => {
                if let (Some(set), Some(txs)) = (sets.get_mut(node), block_txs.get(block)) {
                    for tx in txs {
                        set.remove(tx);
                    }
                }
            }
            _ => {}
        }
    }
    (sets, dup)
}

/// No correct node holds a transaction twice in its committed chain.
pub fn check_integrity_no_dup(trace: &Trace) -> Check {
    match replay_txs(trace).1 {
        None => Ok(()),
        Some((node, tx)) => Err(Evidence::new(
            "integrity_no_dup",
            format!("{node} committed a transaction twice"),
            vec![node],
            vec![tx],
        )),
    }
}

/// Every committed transaction was broadcast by its client.
pub fn check_integrity_no_creation(trace: &Trace) -> Check {
    let submitted: BTreeSet<Digest> = trace
        .records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Submit { tx, .. } => Some(*tx),
            _ => None,
        })
        .collect();
    let correct = trace.header().correct_miners();
    for r in &trace.records {
        if let TraceRecord::Commit { node, block, txs, .. } = r {
            if !correct.contains(node) {
                continue;
            }
            if let Some(tx) = txs.iter().find(|t| !submitted.contains(t)) {
                return Err(Evidence::new(
                    "integrity_no_creation",
                    format!("{node} committed a transaction nobody submitted ({tx})"),
                    vec![*node],
                    vec![*block],
                ));
            }
        }
    }
    Ok(())
}

/// Every valid transaction a correct client submitted before
/// `cutoff - settle` is committed by some correct node.
pub fn check_validity(trace: &Trace) -> Check {
    let h = trace.header();
    let deadline = h.cutoff.saturating_sub(h.settle);
    let committed: BTreeSet<Digest> = replay_txs(trace).0.into_values().flatten().collect();
    for r in &trace.records {
        if let TraceRecord::Submit { t, client, tx, byzantine: false } = r {
            if *t < deadline && !committed.contains(tx) {
                return Err(Evidence::new(
                    "validity",
                    format!("transaction {tx} from {client} submitted at {t} was never committed"),
                    vec![*client],
                    vec![],
                ));
            }
        }
    }
    Ok(())
}

/// Every transaction committed by one correct node is committed by all.
pub fn check_termination(trace: &Trace) -> Check {
    let sets = replay_txs(trace).0;
    for (a, sa) in &sets {
        for (b, sb) in &sets {
            if let Some(tx) = sa.difference(sb).next() {
                return Err(Evidence::new(
                    "termination",
                    format!("{a} committed {tx} but {b} did not"),
                    vec![*a, *b],
                    vec![],
                ));
            }
        }
    }
    Ok(())
}

/// The horizon does not reach GST plus the settle window.
pub fn termination_inconclusive(trace: &Trace) -> bool {
    let h = trace.header();
    match h.gst {
        None => true,
        Some(g) => h.duration < g + h.settle,
    }
}

/// Re-verifies every committed block signature against a registry rebuilt
/// from the run seed.
pub fn check_block_validity(trace: &Trace) -> Check {
    let h = trace.header();
    let mut roles = vec![Role::MinerClient; h.n];
    roles.extend(std::iter::repeat_n(Role::Client, h.clients));
    let registry = KeyRegistry::new(h.seed, roles);
    let correct = h.correct_miners();
    for r in &trace.records {
        if let TraceRecord::Commit { node, block, author, signing, token, .. } = r {
            if !correct.contains(node) {
                continue;
            }
            let ok = author.index() < h.n && registry.verify(&Signature { author: *author, token: *token }, signing);
            if !ok {
                return Err(Evidence::new(
                    "block_validity",
                    format!("{node} committed a block with a bad signature"),
                    vec![*node],
                    vec![*block],
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(i: u8) -> Digest {
        Digest::of(&[i])
    }

    fn orders(rows: &[(u32, &[u8])]) -> Orders {
        rows.iter().map(|(n, seq)| (NodeId(*n), seq.iter().map(|i| d(*i)).collect())).collect()
    }

    #[test]
    fn identical_histories_pass_everything() {
        let o = orders(&[(0, &[1, 2, 3]), (1, &[1, 2, 3])]);
        assert!(check_finality(&o).is_ok());
        assert!(check_agreement(&o).is_ok());
        assert!(check_total_order(&o).is_ok());
    }

    #[test]
    fn divergent_branch_breaks_agreement_only() {
        // one node sticks to b2, the other to b3, both after b1
        let o = orders(&[(0, &[1, 2]), (1, &[1, 3])]);
        let e = check_agreement(&o).unwrap_err();
        assert_eq!(e.property, "agreement");
        assert!(check_total_order(&o).is_ok());
        assert!(check_finality(&o).is_err());
    }

    #[test]
    fn swapped_blocks_break_total_order_only() {
        let o = orders(&[(0, &[1, 2, 3]), (1, &[1, 3, 2])]);
        assert!(check_agreement(&o).is_ok());
        let e = check_total_order(&o).unwrap_err();
        assert_eq!(e.blocks, vec![d(2), d(3)]);
        assert!(check_finality(&o).is_err());
    }

    #[test]
    fn lagging_prefix_breaks_agreement() {
        let o = orders(&[(0, &[1, 2]), (1, &[1])]);
        assert!(check_agreement(&o).is_err());
        assert!(check_total_order(&o).is_ok());
    }

    #[test]
    fn empty_histories_are_trivially_final() {
        let o = orders(&[(0, &[]), (1, &[])]);
        assert!(check_finality(&o).is_ok());
    }
}
