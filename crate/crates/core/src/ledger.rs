//! Protocol-agnostic first layer: transaction validation, block assembly and
//! lifecycle bookkeeping. Consensus engines drive it through
//! [`Ledger::on_consensus_deliver`].

use std::sync::Arc;

use crate::chain::{BlockStatus, ChainView, TxStatus};
use crate::crypto::{KeyRegistry, Signer};
use crate::types::{Block, Digest, NodeId, Signature, Transaction, Vote};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerConfig {
    pub block_size: usize,
}

impl LedgerConfig {
    pub fn new(block_size: usize) -> Self {
        assert!(block_size >= 1, "block size must be positive");
        Self { block_size }
    }
}

/// The external-validity predicate: the client signed it, the client is
/// registered, the id is well-formed and not already committed in `view`.
pub fn external_validity(tx: &Transaction, view: &ChainView, registry: &KeyRegistry) -> bool {
    tx.id_matches()
        && tx.signature.author == tx.client
        && registry.is_client(tx.client)
        && registry.verify(&tx.signature, &tx.id)
        && !view.is_committed_tx(&tx.id)
}

pub fn make_transaction(signer: &Signer, nonce: u64, payload: Vec<u8>, submit_time: u64) -> Transaction {
    let client = signer.node();
    let id = Transaction::compute_id(client, nonce, &payload);
    Transaction { id, client, payload, nonce, signature: signer.sign(&id), submit_time }
}

/// Unsigned block contents.
#[derive(Debug, Clone)]
pub struct BlockDraft {
    pub height: u64,
    pub parent: Digest,
    pub author: NodeId,
    pub step_or_view: u64,
    pub txs: Vec<Transaction>,
    pub vote: Option<Vote>,
    pub epoch_snapshot: Option<Vec<NodeId>>,
}

impl BlockDraft {
    pub fn on(parent: &Block, author: NodeId, step_or_view: u64) -> Self {
        Self {
            height: parent.height + 1,
            parent: parent.id,
            author,
            step_or_view,
            txs: Vec::new(),
            vote: None,
            epoch_snapshot: None,
        }
    }

    pub fn with_txs(mut self, txs: Vec<Transaction>) -> Self {
        self.txs = txs;
        self
    }
}

/// Orders transactions by ascending id, signs and computes the block id.
pub fn seal_block(draft: BlockDraft, signer: &Signer) -> Block {
    let mut txs = draft.txs;
    txs.sort_by_key(|a| a.id);
    let mut block = Block {
        height: draft.height,
        parent: draft.parent,
        author: draft.author,
        step_or_view: draft.step_or_view,
        txs,
        vote: draft.vote,
        epoch_snapshot: draft.epoch_snapshot,
        signature: Signature::EMPTY,
        id: Digest::ZERO,
    };
    block.signature = signer.sign(&block.signing_digest());
    block.id = block.compute_id();
    block
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intake {
    Accepted,
    Duplicate,
    Refused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accepted,
    Refused,
}

/// One miner's first-layer state.
#[derive(Debug, Clone)]
pub struct Ledger {
    pub config: LedgerConfig,
    pub view: ChainView,
    registry: Arc<KeyRegistry>,
}

impl Ledger {
    pub fn new(config: LedgerConfig, view: ChainView, registry: Arc<KeyRegistry>) -> Self {
        Self { config, view, registry }
    }

    pub fn registry(&self) -> &KeyRegistry {
        &self.registry
    }

    pub fn external_validity(&self, tx: &Transaction) -> bool {
        external_validity(tx, &self.view, &self.registry)
    }

    /// Client transaction delivered by reliable broadcast.
    pub fn on_client_tx(&mut self, tx: Transaction) -> Intake {
        if !self.external_validity(&tx) {
            return Intake::Refused;
        }
        if self.view.q_txn.contains_key(&tx.id) || self.view.tx_status(&tx.id).is_some() {
            return Intake::Duplicate;
        }
        self.view.set_tx_status(tx.id, TxStatus::Submitted);
        self.view.q_txn.insert(tx.id, tx);
        Intake::Accepted
    }

    /// Submitted transactions not already pending in `q_b`.
    pub fn eligible(&self) -> impl Iterator<Item = &Transaction> {
        self.view
            .q_txn
            .values()
            .filter(|tx| self.view.tx_status(&tx.id) == Some(TxStatus::Submitted))
            .filter(|tx| !self.view.is_committed_tx(&tx.id))
    }

    pub fn eligible_count(&self) -> usize {
        self.eligible().count()
    }

    /// Up to `limit` eligible transactions, lowest id first, skipping ids
    /// in `exclude`.
    pub fn take_for_block(&self, limit: usize, exclude: &dyn Fn(&Digest) -> bool) -> Vec<Transaction> {
        self.eligible().filter(|tx| !exclude(&tx.id)).take(limit).cloned().collect()
    }

    /// Block assembly: a signed block on `parent` holding `block_txs` in
    /// ascending id order.
    pub fn beta(&self, block_txs: Vec<Transaction>, proposer: &Signer, parent: &Block, step_or_view: u64) -> Block {
        seal_block(BlockDraft::on(parent, proposer.node(), step_or_view).with_txs(block_txs), proposer)
    }

    /// Builds one block of exactly `block_size` lowest-id transactions when
    /// at least that many are submitted and the consensus gate allows it.
    pub fn maybe_build(&mut self, gate: bool, proposer: &Signer, step_or_view: u64) -> Option<Block> {
        if !gate || self.eligible_count() < self.config.block_size {
            return None;
        }
        let txs = self.take_for_block(self.config.block_size, &|_| false);
        let parent = self.view.tip().clone();
        let block = self.beta(txs, proposer, &parent, step_or_view);
        self.mark_wait(&block);
        Some(block)
    }

    /// Block is pending consensus.
    pub fn mark_wait(&mut self, block: &Block) {
        for tx in &block.txs {
            if !self.view.is_committed_tx(&tx.id) {
                self.view.set_tx_status(tx.id, TxStatus::Wait);
            }
        }
        self.view.set_block_status(block.id, BlockStatus::Wait);
    }

    /// Consensus outcome for a block. Accepted blocks are committed (ids of
    /// freshly committed txs are returned); refused blocks release their txs
    /// back to the submitted pool. Repeated deliveries are no-ops.
    pub fn on_consensus_deliver(&mut self, block: &Block, decision: Decision) -> Vec<Digest> {
        match decision {
            Decision::Accepted => {
                if self.view.is_committed_block(&block.id) {
                    return Vec::new();
                }
                self.mark_wait(block);
                self.view.commit(block.clone()).unwrap_or_default()
            }
            Decision::Refused => {
                if matches!(
                    self.view.block_status(&block.id),
                    Some(BlockStatus::Committed | BlockStatus::Refused)
                ) {
                    return Vec::new();
                }
                self.view.q_b.retain(|b| b.id != block.id);
                self.view.set_block_status(block.id, BlockStatus::Refused);
                for tx in &block.txs {
                    let still_pending = self.view.is_pending_tx(&tx.id);
                    if !self.view.is_committed_tx(&tx.id) && !still_pending {
                        if self.view.tx_status(&tx.id) == Some(TxStatus::Wait) {
                            self.view.set_tx_status(tx.id, TxStatus::Submitted);
                        }
                        self.view.q_txn.entry(tx.id).or_insert_with(|| tx.clone());
                    }
                }
                Vec::new()
            }
        }
    }
}
