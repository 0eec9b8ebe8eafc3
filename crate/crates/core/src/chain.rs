//! Per-node chain state, the authority registry and block verification.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::crypto::KeyRegistry;
use crate::ledger;
use crate::types::{Block, Digest, NodeId, Transaction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Submitted,
    Wait,
    Committed,
    Refused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockStatus {
    Wait,
    Committed,
    Refused,
}

/// How a newly committed block must relate to the committed sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    /// Parent must be the current head.
    Strict,
    /// Parent must be some block this node already knows. Used by Aura,
    /// whose pending queue is an acceptance order rather than a tree.
    KnownAncestor,
}

/// A status change outside the lifecycle automaton.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IllegalTransition {
    pub id: Digest,
    pub from: Option<TxStatus>,
    pub to: TxStatus,
}

fn tx_transition_allowed(from: Option<TxStatus>, to: TxStatus) -> bool {
    use TxStatus::*;
    match (from, to) {
        (None, Submitted | Wait | Refused) => true,
        (Some(a), b) if a == b => true,
        (Some(Submitted), Wait | Refused) => true,
        (Some(Wait), Committed | Refused) => true,
        // block refused or orphaned: its txs return to the pool
        (Some(Wait), Submitted) => true,
        // fork-choice revert of a tentatively committed block
        (Some(Committed), Wait) => true,
        _ => false,
    }
}

/// One node's view of the ledger: committed sequence, pending queues and
/// lifecycle status maps.
#[derive(Debug, Clone)]
pub struct ChainView {
    committed: Vec<Block>,
    committed_index: HashMap<Digest, usize>,
    committed_txs: HashSet<Digest>,
    pub q_txn: BTreeMap<Digest, Transaction>,
    pub q_b: Vec<Block>,
    tx_status: BTreeMap<Digest, TxStatus>,
    block_status: BTreeMap<Digest, BlockStatus>,
    illegal: Vec<IllegalTransition>,
    linkage: Linkage,
}

impl ChainView {
    pub fn new(genesis: Block, linkage: Linkage) -> Self {
        let mut committed_index = HashMap::new();
        committed_index.insert(genesis.id, 0);
        let mut block_status = BTreeMap::new();
        block_status.insert(genesis.id, BlockStatus::Committed);
        Self {
            committed: vec![genesis],
            committed_index,
            committed_txs: HashSet::new(),
            q_txn: BTreeMap::new(),
            q_b: Vec::new(),
            tx_status: BTreeMap::new(),
            block_status,
            illegal: Vec::new(),
            linkage,
        }
    }

    pub fn linkage(&self) -> Linkage {
        self.linkage
    }

    pub fn committed(&self) -> &[Block] {
        &self.committed
    }

    pub fn head(&self) -> &Block {
        self.committed.last().expect("genesis is always committed")
    }

    pub fn genesis(&self) -> &Block {
        &self.committed[0]
    }

    /// Last pending block if any, else the committed head.
    pub fn tip(&self) -> &Block {
        self.q_b.last().unwrap_or_else(|| self.head())
    }

    pub fn is_committed_block(&self, id: &Digest) -> bool {
        self.committed_index.contains_key(id)
    }

    pub fn is_committed_tx(&self, id: &Digest) -> bool {
        self.committed_txs.contains(id)
    }

    pub fn is_pending_tx(&self, id: &Digest) -> bool {
        self.q_b.iter().any(|b| b.contains_tx(id))
    }

    /// Block was ever committed, queued or refused here.
    pub fn knows_block(&self, id: &Digest) -> bool {
        self.block_status.contains_key(id)
    }

    pub fn tx_status(&self, id: &Digest) -> Option<TxStatus> {
        self.tx_status.get(id).copied()
    }

    pub fn block_status(&self, id: &Digest) -> Option<BlockStatus> {
        self.block_status.get(id).copied()
    }

    pub fn illegal_transitions(&self) -> &[IllegalTransition] {
        &self.illegal
    }

    pub fn set_tx_status(&mut self, id: Digest, to: TxStatus) {
        let from = self.tx_status.get(&id).copied();
        if !tx_transition_allowed(from, to) {
            self.illegal.push(IllegalTransition { id, from, to });
            return;
        }
        self.tx_status.insert(id, to);
    }

    pub fn set_block_status(&mut self, id: Digest, to: BlockStatus) {
        match self.block_status.get(&id) {
            Some(BlockStatus::Committed | BlockStatus::Refused) => {}
            _ => {
                self.block_status.insert(id, to);
            }
        }
    }

    /// Appends `block` to the committed sequence. Returns the ids of
    /// transactions committed for the first time; txs already committed
    /// (possible only after a fork) are not committed again.
    pub fn commit(&mut self, block: Block) -> Result<Vec<Digest>, ChainError> {
        if self.committed_index.contains_key(&block.id) {
            return Err(ChainError::AlreadyCommitted(block.id));
        }
        let linked = match self.linkage {
            Linkage::Strict => block.parent == self.head().id,
            Linkage::KnownAncestor => self.knows_block(&block.parent),
        };
        if !linked {
            return Err(ChainError::Unlinked { block: block.id, parent: block.parent });
        }
        let mut fresh = Vec::new();
        for tx in &block.txs {
            self.q_txn.remove(&tx.id);
            if self.committed_txs.insert(tx.id) {
                if self.tx_status(&tx.id).is_none() {
                    self.set_tx_status(tx.id, TxStatus::Wait);
                }
                self.set_tx_status(tx.id, TxStatus::Committed);
                fresh.push(tx.id);
            }
        }
        self.q_b.retain(|b| b.id != block.id);
        self.block_status.insert(block.id, BlockStatus::Committed);
        self.committed_index.insert(block.id, self.committed.len());
        self.committed.push(block);
        Ok(fresh)
    }

    /// Removes committed blocks above `height` (fork-choice reorg). Their
    /// transactions move back to the pool.
    pub fn revert_to(&mut self, height: usize) -> Vec<Block> {
        let mut reverted = Vec::new();
        while self.committed.len() > height + 1 {
            let block = self.committed.pop().expect("len checked");
            self.committed_index.remove(&block.id);
            self.block_status.insert(block.id, BlockStatus::Wait);
            for tx in &block.txs {
                // a lower block may carry the same tx
                if self.committed.iter().any(|b| b.contains_tx(&tx.id)) {
                    continue;
                }
                if self.committed_txs.remove(&tx.id) {
                    self.set_tx_status(tx.id, TxStatus::Wait);
                    self.set_tx_status(tx.id, TxStatus::Submitted);
                    self.q_txn.insert(tx.id, tx.clone());
                }
            }
            reverted.push(block);
        }
        reverted
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("block {0:?} already committed")]
    AlreadyCommitted(Digest),
    #[error("block {block:?} does not link to parent {parent:?}")]
    Unlinked { block: Digest, parent: Digest },
}

/// Ordered validator set with majority removal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthoritySet {
    members: Vec<NodeId>,
    removed: BTreeSet<NodeId>,
    /// (voter, target)
    votes: BTreeSet<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteOutcome {
    Ignored,
    Recorded,
    Removed,
}

impl AuthoritySet {
    pub fn new(mut members: Vec<NodeId>) -> Self {
        members.sort();
        members.dedup();
        Self { members, removed: BTreeSet::new(), votes: BTreeSet::new() }
    }

    pub fn all_members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn removed(&self) -> &BTreeSet<NodeId> {
        &self.removed
    }

    /// Current members, sorted.
    pub fn active(&self) -> Vec<NodeId> {
        self.members.iter().copied().filter(|m| !self.removed.contains(m)).collect()
    }

    pub fn is_active(&self, node: NodeId) -> bool {
        self.members.binary_search(&node).is_ok() && !self.removed.contains(&node)
    }

    pub fn n(&self) -> usize {
        self.members.len() - self.removed.len()
    }

    /// `floor(N / 2)`
    pub fn k(&self) -> usize {
        self.n() / 2
    }

    pub fn majority(&self) -> usize {
        self.k() + 1
    }

    pub fn votes_against(&self, target: NodeId) -> usize {
        self.votes
            .iter()
            .filter(|(voter, t)| *t == target && self.is_active(*voter))
            .count()
    }

    pub fn has_voted(&self, voter: NodeId, target: NodeId) -> bool {
        self.votes.contains(&(voter, target))
    }

    /// Records a removal vote; idempotent per (voter, target). Removes the
    /// target once `K + 1` distinct current members voted against it.
    pub fn cast_vote(&mut self, voter: NodeId, target: NodeId) -> VoteOutcome {
        if !self.is_active(voter) || !self.is_active(target) {
            return VoteOutcome::Ignored;
        }
        self.votes.insert((voter, target));
        if self.votes_against(target) >= self.majority() {
            self.remove(target);
            VoteOutcome::Removed
        } else {
            VoteOutcome::Recorded
        }
    }

    pub fn remove(&mut self, target: NodeId) {
        self.removed.insert(target);
        self.votes.retain(|(_, t)| *t != target);
    }

    pub fn clear_votes(&mut self) {
        self.votes.clear();
    }
}

/// Block validity: id and signature check out, the author is a current
/// authority, the parent links per the view's linkage rule, and every
/// transaction is externally valid and not already committed.
pub fn verify_block(
    block: &Block,
    view: &ChainView,
    authorities: &AuthoritySet,
    registry: &KeyRegistry,
) -> bool {
    if block.is_genesis() || !block.id_matches() {
        return false;
    }
    if block.signature.author != block.author
        || !registry.verify(&block.signature, &block.signing_digest())
    {
        return false;
    }
    if !authorities.is_active(block.author) {
        return false;
    }
    let linked = match view.linkage() {
        Linkage::Strict => {
            block.parent == view.head().id && block.height == view.head().height + 1
        }
        Linkage::KnownAncestor => view.knows_block(&block.parent),
    };
    if !linked {
        return false;
    }
    let mut seen = HashSet::new();
    block
        .txs
        .iter()
        .all(|tx| seen.insert(tx.id) && ledger::external_validity(tx, view, registry))
}
