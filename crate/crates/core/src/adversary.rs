//! Byzantine behaviours. An adversary is an authority whose machine runs
//! the honest protocol with some actions replaced or suppressed while its
//! window is open.

use serde::{Deserialize, Serialize};

use crate::crypto::Signer;
use crate::ledger::{make_transaction, seal_block, BlockDraft};
use crate::simnet::SimTime;
use crate::types::{Block, NodeId, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    /// Sends two different blocks for the same slot to disjoint halves.
    Equivocator,
    /// Injects transactions and blocks signed under stolen identities.
    Forger,
    /// Never proposes. Under PBFT it sends no consensus messages at all.
    Silent,
    /// Never votes to remove anyone.
    Abstainer,
}

/// Half-open activity window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: SimTime,
    pub end: SimTime,
}

impl Window {
    pub fn contains(&self, t: SimTime) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    pub node: NodeId,
    pub kind: AdversaryKind,
    #[serde(default)]
    pub window: Option<Window>,
    /// Forger only: total forged messages.
    #[serde(default)]
    pub budget: Option<u32>,
    /// Forger only: ticks between injections.
    #[serde(default)]
    pub interval: Option<u64>,
}

impl AdversarySpec {
    pub fn new(node: u32, kind: AdversaryKind) -> Self {
        Self { node: NodeId(node), kind, window: None, budget: None, interval: None }
    }
}

pub const DEFAULT_FORGE_BUDGET: u32 = 1000;
pub const DEFAULT_FORGE_INTERVAL: u64 = 10;

/// All behaviours attached to one node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Behavior {
    specs: Vec<AdversarySpec>,
}

impl Behavior {
    pub fn honest() -> Self {
        Self::default()
    }

    pub fn for_node(node: NodeId, specs: &[AdversarySpec]) -> Self {
        Self { specs: specs.iter().filter(|s| s.node == node).copied().collect() }
    }

    pub fn is_byzantine(&self) -> bool {
        !self.specs.is_empty()
    }

    pub fn spec(&self, kind: AdversaryKind) -> Option<&AdversarySpec> {
        self.specs.iter().find(|s| s.kind == kind)
    }

    /// Behaviour `kind` is configured and its window covers `now`.
    pub fn acting(&self, kind: AdversaryKind, now: SimTime) -> bool {
        self.spec(kind).is_some_and(|s| s.window.is_none_or(|w| w.contains(now)))
    }
}

/// Splits recipients into two disjoint halves, first half rounded up.
pub fn split_halves(recipients: &[NodeId]) -> (Vec<NodeId>, Vec<NodeId>) {
    let mid = recipients.len().div_ceil(2);
    (recipients[..mid].to_vec(), recipients[mid..].to_vec())
}

/// Two conflicting blocks from one draft. The second drops the last
/// transaction, or when the draft is empty carries a padding transaction
/// self-signed by the equivocator (returned so it can be logged).
pub fn equivocate(draft: BlockDraft, signer: &Signer, padding_nonce: u64, now: SimTime) -> (Block, Block, Option<Transaction>) {
    let mut other = draft.clone();
    let padding = if other.txs.is_empty() {
        let tx = make_transaction(signer, padding_nonce, b"padding".to_vec(), now);
        other.txs.push(tx.clone());
        Some(tx)
    } else {
        other.txs.pop();
        None
    };
    (seal_block(draft, signer), seal_block(other, signer), padding)
}

/// Nonces used for forged and padding txs live far above honest ones.
pub const FORGED_NONCE_BASE: u64 = 1 << 40;

/// A transaction claiming `victim` as its client, signed with the forger's
/// own secret.
pub fn forge_tx(forger: &Signer, victim: NodeId, k: u64, now: SimTime) -> Transaction {
    let nonce = FORGED_NONCE_BASE + k;
    let payload = b"forged".to_vec();
    let id = Transaction::compute_id(victim, nonce, &payload);
    Transaction { id, client: victim, payload, nonce, signature: forger.forge_as(victim, &id), submit_time: now }
}

/// Who a forged block claims to come from: `preferred` unless that is the
/// forger itself, else another member picked by `k`.
pub fn impersonation_target(preferred: NodeId, forger: NodeId, members: &[NodeId], k: u64) -> NodeId {
    if preferred != forger {
        return preferred;
    }
    let others: Vec<NodeId> = members.iter().copied().filter(|m| *m != forger).collect();
    if others.is_empty() {
        forger
    } else {
        others[(k as usize) % others.len()]
    }
}

/// A block on `parent` claiming `claimed` as author.
pub fn forge_block(forger: &Signer, claimed: NodeId, parent: &Block, step_or_view: u64, txs: Vec<Transaction>) -> Block {
    let mut block = seal_block(BlockDraft::on(parent, claimed, step_or_view).with_txs(txs), forger);
    block.signature = forger.forge_as(claimed, &block.signing_digest());
    block.id = block.compute_id();
    block
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{verify_block, AuthoritySet, ChainView, Linkage};
    use crate::crypto::KeyRegistry;
    use crate::ledger::external_validity;
    use crate::types::Role;

    fn setup() -> (std::sync::Arc<KeyRegistry>, ChainView, AuthoritySet) {
        let reg = KeyRegistry::new(3, vec![Role::MinerClient; 4]);
        let members: Vec<NodeId> = (0..4).map(NodeId).collect();
        (reg, ChainView::new(Block::genesis(&members), Linkage::Strict), AuthoritySet::new(members))
    }

    #[test]
    fn never_impersonates_self() {
        let members: Vec<NodeId> = (0..4).map(NodeId).collect();
        for k in 0..16 {
            for f in 0..4 {
                let t = impersonation_target(NodeId(f), NodeId(f), &members, k);
                assert_ne!(t, NodeId(f));
            }
        }
        assert_eq!(impersonation_target(NodeId(2), NodeId(1), &members, 7), NodeId(2));
        assert_eq!(impersonation_target(NodeId(0), NodeId(0), &[NodeId(0)], 3), NodeId(0));
    }

    #[test]
    fn window_gates_behavior() {
        let mut spec = AdversarySpec::new(1, AdversaryKind::Silent);
        spec.window = Some(Window { start: 100, end: 200 });
        let b = Behavior::for_node(NodeId(1), &[spec]);
        assert!(!b.acting(AdversaryKind::Silent, 99));
        assert!(b.acting(AdversaryKind::Silent, 100));
        assert!(!b.acting(AdversaryKind::Silent, 200));
        assert!(!b.acting(AdversaryKind::Abstainer, 150));
        assert!(!Behavior::for_node(NodeId(2), &[spec]).is_byzantine());
    }

    #[test]
    fn halves_are_disjoint_and_cover() {
        let all: Vec<NodeId> = (0..5).map(NodeId).collect();
        let (a, b) = split_halves(&all);
        assert_eq!(a.len(), 3);
        assert_eq!(b.len(), 2);
        assert!(a.iter().all(|x| !b.contains(x)));
    }

    #[test]
    fn equivocation_yields_two_valid_distinct_blocks() {
        let (reg, view, auth) = setup();
        let signer = reg.signer(NodeId(0));
        let draft = BlockDraft::on(view.head(), NodeId(0), 1);
        let (x, y, pad) = equivocate(draft, &signer, FORGED_NONCE_BASE, 0);
        assert_ne!(x.id, y.id);
        assert!(pad.is_some());
        assert!(verify_block(&x, &view, &auth, &reg));
        assert!(verify_block(&y, &view, &auth, &reg));
    }

    #[test]
    fn forgeries_fail_validation() {
        let (reg, view, auth) = setup();
        let forger = reg.signer(NodeId(3));
        let tx = forge_tx(&forger, NodeId(1), 0, 0);
        assert!(tx.id_matches());
        assert!(!external_validity(&tx, &view, &reg));
        let b = forge_block(&forger, NodeId(0), view.head(), 1, Vec::new());
        assert!(b.id_matches());
        assert!(!verify_block(&b, &view, &auth, &reg));
    }
}
