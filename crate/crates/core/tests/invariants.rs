//! Randomised invariants over the network fabric, the chain bookkeeping and
//! the order checkers.

use std::collections::{BTreeMap, BTreeSet};

use poasim_core::analysis::checks::{check_agreement, check_finality, check_total_order};
use poasim_core::aura::finalized_prefix;
use poasim_core::chain::{ChainView, Linkage, TxStatus};
use poasim_core::scenario::Protocol;
use poasim_core::simnet::{
    ClockSkewMap, DelayModel, EventKind, EventQueue, Fabric, PartitionInterval, PartitionSchedule,
};
use poasim_core::types::{Block, Digest, NodeId, Signature, Transaction};
use poasim_core::Scenario;
use proptest::prelude::*;

/// Longest prefix whose last position still sees `omega` distinct authors
/// from there to the end, computed position by position.
fn prefix_oracle(authors: &[NodeId], omega: usize) -> usize {
    (0..authors.len())
        .filter(|&i| authors[i..].iter().collect::<BTreeSet<_>>().len() >= omega)
        .map(|i| i + 1)
        .max()
        .unwrap_or(0)
}

fn d(i: u8) -> Digest {
    Digest([i; 32])
}

fn tx(i: u8) -> Transaction {
    Transaction {
        id: d(100 + i),
        client: NodeId(0),
        payload: vec![i],
        nonce: i as u64,
        signature: Signature { author: NodeId(0), token: d(0) },
        submit_time: 0,
    }
}

fn child(parent: &Block, txs: Vec<Transaction>, salt: u64) -> Block {
    let mut b = Block {
        height: parent.height + 1,
        parent: parent.id,
        author: NodeId(0),
        step_or_view: salt,
        txs,
        vote: None,
        epoch_snapshot: None,
        signature: Signature { author: NodeId(0), token: d(0) },
        id: d(0),
    };
    b.id = b.compute_id();
    b
}

#[derive(Debug, Clone)]
enum ChainOp {
    Commit(Vec<u8>),
    Revert(usize),
}

fn chain_op() -> impl Strategy<Value = ChainOp> {
    prop_oneof![
        3 => prop::collection::vec(0u8..12, 0..4).prop_map(ChainOp::Commit),
        1 => (0usize..8).prop_map(ChainOp::Revert),
    ]
}

proptest! {
    #[test]
    fn queue_pops_in_due_then_seq_order(dues in prop::collection::vec(0u64..50, 1..60)) {
        let mut q: EventQueue<u32, ()> = EventQueue::new();
        for (i, due) in dues.iter().enumerate() {
            q.schedule(*due, EventKind::ClientSubmit { client: NodeId(i as u32) }).unwrap();
        }
        let popped: Vec<(u64, u64)> = std::iter::from_fn(|| q.pop()).map(|e| (e.due, e.seq)).collect();
        prop_assert_eq!(popped.len(), dues.len());
        prop_assert!(popped.windows(2).all(|w| w[0] < w[1]));
        for (due, seq) in &popped {
            prop_assert_eq!(dues[*seq as usize], *due);
        }
    }

    #[test]
    fn queue_refuses_the_past(a in 1u64..100, back in 1u64..100) {
        let mut q: EventQueue<u32, ()> = EventQueue::new();
        q.schedule(a, EventKind::ClientSubmit { client: NodeId(0) }).unwrap();
        q.pop();
        let late = a.saturating_sub(back);
        let submit = || EventKind::ClientSubmit { client: NodeId(0) };
        prop_assert!(q.schedule(late, submit()).is_err());
        prop_assert!(q.schedule(a, submit()).is_ok());
    }

    #[test]
    fn partitioned_messages_land_after_heal(
        seed in any::<u64>(),
        d_min in 1u64..20,
        spread in 0u64..50,
        start in 0u64..5,
        len in 1u64..500,
        sends in prop::collection::vec((0u32..4, 0u32..4), 1..40),
    ) {
        let d_max = d_min + spread;
        let end = start + len;
        let cut = PartitionInterval { start, end, groups: vec![vec![NodeId(0), NodeId(1)], vec![NodeId(2), NodeId(3)]] };
        let mut fab: Fabric<u32, ()> = Fabric::new(
            seed,
            DelayModel::synchronous(d_min, d_max),
            PartitionSchedule { intervals: vec![cut.clone()] },
            ClockSkewMap::default(),
        );
        // advance the clock into the partition
        fab.set_timer_after(NodeId(0), start, ());
        fab.pop();
        for (i, (a, b)) in sends.iter().enumerate() {
            fab.pl_send(NodeId(*a), NodeId(*b), i as u32);
        }
        let sent_at = fab.now();
        let mut delivered = 0;
        while let Some(ev) = fab.pop() {
            if let EventKind::MessageDelivery { from, to, .. } = ev.kind {
                delivered += 1;
                if from == to {
                    prop_assert_eq!(ev.due, sent_at);
                } else if cut.separates(from, to) {
                    prop_assert!(ev.due >= end + d_min, "{from}->{to} at {} before heal {end}", ev.due);
                } else {
                    prop_assert!(ev.due >= sent_at + d_min && ev.due <= sent_at + d_max);
                }
            }
        }
        prop_assert_eq!(delivered, sends.len());
    }

    #[test]
    fn skewed_timers_fire_when_local_clock_reads_due(offset in -500i64..500, local in 0u64..5000) {
        let skew = ClockSkewMap { offset: BTreeMap::from([(NodeId(1), offset)]) };
        let g = skew.global_for_local(NodeId(1), local);
        prop_assert!(skew.local_time(NodeId(1), g) >= local);
        if g > 0 {
            prop_assert!(skew.local_time(NodeId(1), g - 1) < local);
        }
    }

    #[test]
    fn finalized_prefix_matches_oracle(authors in prop::collection::vec(0u32..6, 0..30), omega in 1usize..7) {
        let authors: Vec<NodeId> = authors.into_iter().map(NodeId).collect();
        prop_assert_eq!(finalized_prefix(&authors, omega), prefix_oracle(&authors, omega));
    }

    #[test]
    fn finalized_prefix_never_shrinks(authors in prop::collection::vec(0u32..6, 1..30), omega in 1usize..7) {
        let authors: Vec<NodeId> = authors.into_iter().map(NodeId).collect();
        let mut last = 0;
        for len in 0..=authors.len() {
            let p = finalized_prefix(&authors[..len], omega);
            prop_assert!(p >= last && p <= len);
            last = p;
        }
    }

    #[test]
    fn finality_iff_agreement_and_total_order(
        seqs in prop::collection::vec(prop::collection::vec(0u8..8, 0..8), 1..5),
        shared in any::<bool>(),
    ) {
        // each node's history lists distinct blocks
        let mut orders: BTreeMap<NodeId, Vec<Digest>> = BTreeMap::new();
        for (i, s) in seqs.iter().enumerate() {
            let src = if shared { &seqs[0] } else { s };
            let mut seen = BTreeSet::new();
            let hist = src.iter().filter(|b| seen.insert(**b)).map(|b| d(*b)).collect();
            orders.insert(NodeId(i as u32), hist);
        }
        let fin = check_finality(&orders).is_ok();
        let both = check_agreement(&orders).is_ok() && check_total_order(&orders).is_ok();
        prop_assert_eq!(fin, both);
        if shared {
            prop_assert!(fin);
        }
    }

    #[test]
    fn scenario_json_round_trips(
        n in 1usize..20,
        seed in any::<u64>(),
        duration in 100_000u64..1_000_000,
        d_min in 0u64..50,
        spread in 0u64..100,
        proto in 0u8..3,
    ) {
        let protocol = ["aura", "clique", "pbft"][proto as usize];
        let n = if protocol == "pbft" { n.max(4) } else { n };
        let text = format!(
            r#"{{"name": "rt", "protocol": "{protocol}", "N": {n}, "seed": {seed}, "duration_ticks": {duration},
                "network": {{"d_min": {d_min}, "d_max": {}}}}}"#,
            d_min + spread
        );
        let s = Scenario::from_json(&text).unwrap();
        prop_assert_eq!(s.protocol, match proto { 0 => Protocol::Aura, 1 => Protocol::Clique, _ => Protocol::Pbft });
        let back = Scenario::from_json(&s.to_json()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn committed_txs_track_the_committed_blocks(ops in prop::collection::vec(chain_op(), 1..40)) {
        let mut view = ChainView::new(Block::genesis(&[NodeId(0)]), Linkage::Strict);
        let mut ever = BTreeSet::new();
        for (salt, op) in ops.into_iter().enumerate() {
            match op {
                ChainOp::Commit(ids) => {
                    let txs: Vec<Transaction> = ids.iter().copied().collect::<BTreeSet<_>>().into_iter().map(tx).collect();
                    for t in &txs {
                        if view.tx_status(&t.id).is_none() {
                            view.set_tx_status(t.id, TxStatus::Submitted);
                        }
                        if view.tx_status(&t.id) == Some(TxStatus::Submitted) {
                            view.set_tx_status(t.id, TxStatus::Wait);
                        }
                    }
                    let b = child(view.head(), txs, salt as u64);
                    let fresh = view.commit(b.clone()).unwrap();
                    // a tx already on the chain is never committed twice
                    for id in &fresh {
                        prop_assert!(b.txs.iter().any(|t| t.id == *id));
                    }
                    ever.extend(fresh);
                }
                ChainOp::Revert(h) => {
                    let before = view.committed().len();
                    let gone = view.revert_to(h);
                    prop_assert_eq!(gone.len(), before.saturating_sub(h + 1));
                }
            }
            let on_chain: BTreeSet<Digest> = view.committed().iter().flat_map(|b| b.txs.iter().map(|t| t.id)).collect();
            for id in &ever {
                prop_assert_eq!(view.is_committed_tx(id), on_chain.contains(id));
                let want = if on_chain.contains(id) { TxStatus::Committed } else { TxStatus::Submitted };
                prop_assert_eq!(view.tx_status(id), Some(want));
            }
            prop_assert!(view.illegal_transitions().is_empty(), "{:?}", view.illegal_transitions());
        }
    }
}
