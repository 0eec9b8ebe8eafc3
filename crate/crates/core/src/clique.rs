//! Clique: height-based in-turn leaders, a bounded signing frequency,
//! randomly delayed backup proposers, epoch transition blocks, votes carried
//! in blocks and a heaviest-chain fork choice.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::Rng;

use crate::adversary::{self, AdversaryKind, FORGED_NONCE_BASE};
use crate::analysis::trace::{Phase, TraceRecord};
use crate::chain::AuthoritySet;
use crate::codec::Encoder;
use crate::crypto::{KeyRegistry, Signer};
use crate::engine::{encode_block, Ctx, Message, Replica, Timer};
use crate::ledger::{BlockDraft, Decision, Ledger};
use crate::types::{Block, Digest, NodeId, Vote, VoteKind};

pub const SCORE_IN_TURN: u64 = 2;
pub const SCORE_OUT_OF_TURN: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliqueMsg {
    Block(Block),
    /// Ask a peer for a block we saw referenced as a parent.
    Request(Digest),
}

impl CliqueMsg {
    pub(crate) fn encode(&self, e: &mut Encoder) {
        match self {
            CliqueMsg::Block(b) => {
                e.u8(0);
                encode_block(e, b);
            }
            CliqueMsg::Request(id) => {
                e.u8(1).digest(id);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliqueTimer {
    /// Seal a block on `parent` if it is still the head.
    Seal { parent: Digest, height: u64 },
}

/// Member at index `height mod N` of the sorted active list.
pub fn clique_inturn(height: u64, active: &[NodeId]) -> NodeId {
    active[(height % active.len() as u64) as usize]
}

/// Active members minus the authors of the last `floor(N/2) + 1` blocks.
pub fn clique_allowed(active: &[NodeId], recent_signers: &[NodeId]) -> Vec<NodeId> {
    let w = active.len() / 2 + 1;
    let recent = &recent_signers[recent_signers.len().saturating_sub(w)..];
    active.iter().copied().filter(|a| !recent.contains(a)).collect()
}

/// Authority snapshot carried by transition blocks.
pub fn clique_epoch(height: u64, epoch_length: u64, active: &[NodeId]) -> Option<Vec<NodeId>> {
    (height > 0 && height.is_multiple_of(epoch_length)).then(|| active.to_vec())
}

pub fn clique_difficulty(author: NodeId, height: u64, active: &[NodeId]) -> u64 {
    if clique_inturn(height, active) == author {
        SCORE_IN_TURN
    } else {
        SCORE_OUT_OF_TURN
    }
}

/// Branch state after a block: authority set with pending tallies, and the
/// most recent signers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub authorities: AuthoritySet,
    pub signers: Vec<NodeId>,
}

const SIGNER_MEMORY: usize = 128;

impl Snapshot {
    pub fn apply(&self, block: &Block, epoch_length: u64) -> Snapshot {
        let mut next = self.clone();
        if block.height.is_multiple_of(epoch_length) {
            next.authorities.clear_votes();
        }
        if let Some(v) = &block.vote {
            next.authorities.cast_vote(block.author, v.target);
        }
        next.signers.push(block.author);
        if next.signers.len() > SIGNER_MEMORY {
            next.signers.remove(0);
        }
        next
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub block: Block,
    /// Total score from genesis.
    pub score: u64,
    pub snapshot: Snapshot,
}

/// `a` beats `b`: higher total score, then smaller digest.
pub fn heavier(a: (u64, Digest), b: (u64, Digest)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[derive(Debug, Clone)]
pub struct BlockTree {
    nodes: HashMap<Digest, TreeNode>,
    genesis: Digest,
    head: Digest,
    by_slot: HashMap<(u64, NodeId), Vec<Digest>>,
    tx_blocks: HashMap<Digest, Vec<Digest>>,
}

impl BlockTree {
    pub fn new(genesis: Block, authorities: AuthoritySet) -> Self {
        let id = genesis.id;
        let root = TreeNode { block: genesis, score: 0, snapshot: Snapshot { authorities, signers: Vec::new() } };
        Self {
            nodes: HashMap::from([(id, root)]),
            genesis: id,
            head: id,
            by_slot: HashMap::new(),
            tx_blocks: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: &Digest) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &Digest) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn head(&self) -> &TreeNode {
        &self.nodes[&self.head]
    }

    /// Adds a block whose parent is present. Returns true if the head moved.
    pub fn insert(&mut self, block: Block, difficulty: u64, snapshot: Snapshot) -> bool {
        let parent_score = self.nodes[&block.parent].score;
        let id = block.id;
        let score = parent_score + difficulty;
        self.by_slot.entry((block.height, block.author)).or_default().push(id);
        for tx in &block.txs {
            self.tx_blocks.entry(tx.id).or_default().push(id);
        }
        self.nodes.insert(id, TreeNode { block, score, snapshot });
        if heavier((score, id), (self.head().score, self.head)) {
            self.head = id;
            return true;
        }
        false
    }

    /// Other blocks by the same author at the same height.
    pub fn slot_conflicts(&self, height: u64, author: NodeId) -> usize {
        self.by_slot.get(&(height, author)).map_or(0, Vec::len)
    }

    /// `a` lies on the chain ending at `tip` (inclusive).
    pub fn is_ancestor(&self, a: &Digest, tip: &Digest) -> bool {
        let Some(target) = self.nodes.get(a) else { return false };
        let mut cur = *tip;
        loop {
            let node = &self.nodes[&cur];
            if node.block.height < target.block.height {
                return false;
            }
            if cur == *a {
                return true;
            }
            if node.block.is_genesis() {
                return false;
            }
            cur = node.block.parent;
        }
    }

    pub fn tx_on_branch(&self, tx: &Digest, tip: &Digest) -> bool {
        self.tx_blocks.get(tx).is_some_and(|bs| bs.iter().any(|b| self.is_ancestor(b, tip)))
    }

    /// Block ids from genesis to `tip`, both included.
    pub fn path(&self, tip: &Digest) -> Vec<Digest> {
        let mut out = vec![*tip];
        let mut cur = &self.nodes[tip];
        while !cur.block.is_genesis() {
            out.push(cur.block.parent);
            cur = &self.nodes[&cur.block.parent];
        }
        out.reverse();
        out
    }

    /// Full-scan fork choice; agrees with the incrementally tracked head.
    pub fn fork_choice(&self) -> Digest {
        let mut best = self.genesis;
        for (id, node) in &self.nodes {
            if heavier((node.score, *id), (self.nodes[&best].score, best)) {
                best = *id;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CliqueConfig {
    pub epoch_length: u64,
    pub wiggle_max: u64,
    pub period: u64,
}

pub struct CliqueNode {
    signer: Signer,
    ledger: Ledger,
    cfg: CliqueConfig,
    tree: BlockTree,
    orphans: HashMap<Digest, Vec<Block>>,
    requested: HashSet<Digest>,
    offenders: BTreeSet<NodeId>,
    padding_nonce: u64,
}

/// Why a block with a known parent is refused, if it is.
pub fn check_block(block: &Block, parent: &TreeNode, tree: &BlockTree, registry: &KeyRegistry, epoch_length: u64) -> Option<&'static str> {
    let active = parent.snapshot.authorities.active();
    if !block.id_matches() || block.signature.author != block.author || !registry.verify(&block.signature, &block.signing_digest()) {
        return Some("bad_signature");
    }
    if !parent.snapshot.authorities.is_active(block.author) {
        return Some("not_authority");
    }
    if block.height != parent.block.height + 1 {
        return Some("bad_height");
    }
    if !clique_allowed(&active, &parent.snapshot.signers).contains(&block.author) {
        return Some("signed_recently");
    }
    if block.step_or_view != clique_difficulty(block.author, block.height, &active) {
        return Some("bad_difficulty");
    }
    if block.epoch_snapshot != clique_epoch(block.height, epoch_length, &active) {
        return Some("bad_epoch_snapshot");
    }
    if let Some(v) = &block.vote {
        if !parent.snapshot.authorities.is_active(v.target) {
            return Some("bad_vote");
        }
    }
    let mut seen = HashSet::new();
    for tx in &block.txs {
        let sound = tx.id_matches()
            && tx.signature.author == tx.client
            && registry.is_client(tx.client)
            && registry.verify(&tx.signature, &tx.id);
        if !sound || !seen.insert(tx.id) || tree.tx_on_branch(&tx.id, &parent.block.id) {
            return Some("invalid_tx");
        }
    }
    None
}

impl CliqueNode {
    pub fn new(signer: Signer, ledger: Ledger, authorities: AuthoritySet, cfg: CliqueConfig) -> Self {
        let tree = BlockTree::new(ledger.view.genesis().clone(), authorities);
        Self {
            signer,
            ledger,
            cfg,
            tree,
            orphans: HashMap::new(),
            requested: HashSet::new(),
            offenders: BTreeSet::new(),
            padding_nonce: FORGED_NONCE_BASE / 2,
        }
    }

    pub fn tree(&self) -> &BlockTree {
        &self.tree
    }

    fn me(&self) -> NodeId {
        self.signer.node()
    }

    fn schedule_seal(&mut self, ctx: &mut Ctx) {
        let head = self.tree.head();
        let height = head.block.height + 1;
        let active = head.snapshot.authorities.active();
        if active.is_empty() || !clique_allowed(&active, &head.snapshot.signers).contains(&self.me()) {
            return;
        }
        let wiggle = if clique_inturn(height, &active) == self.me() {
            0
        } else {
            ctx.rng.gen_range(1..=self.cfg.wiggle_max)
        };
        let parent = head.block.id;
        ctx.set_timer_after(self.cfg.period + wiggle, Timer::Clique(CliqueTimer::Seal { parent, height }));
    }

    fn seal(&mut self, ctx: &mut Ctx, parent: Digest) {
        if self.tree.head().block.id != parent || !ctx.proposals_open() || ctx.acting(AdversaryKind::Silent) {
            return;
        }
        let head = self.tree.head().clone();
        let active = head.snapshot.authorities.active();
        let height = head.block.height + 1;
        let mut draft = BlockDraft::on(&head.block, self.me(), clique_difficulty(self.me(), height, &active));
        draft.txs = self.ledger.take_for_block(self.ledger.config.block_size, &|_| false);
        draft.epoch_snapshot = clique_epoch(height, self.cfg.epoch_length, &active);
        if !ctx.acting(AdversaryKind::Abstainer) {
            let me = self.me();
            let target = self
                .offenders
                .iter()
                .copied()
                .find(|t| *t != me && head.snapshot.authorities.is_active(*t) && !head.snapshot.authorities.has_voted(me, *t));
            if let Some(target) = target {
                draft.vote = Some(Vote { target, kind: VoteKind::Remove });
                let t = ctx.now();
                ctx.record(TraceRecord::Vote { t, voter: me, target, reason: "double_sign".into() });
            }
        }
        if ctx.acting(AdversaryKind::Equivocator) {
            self.padding_nonce += 1;
            let (a, b, pad) = adversary::equivocate(draft, &self.signer, self.padding_nonce, ctx.now());
            if let Some(tx) = &pad {
                ctx.log_padding(tx);
            }
            let (left, right) = adversary::split_halves(ctx.miners);
            ctx.label(Phase::Propose, height, Some(a.id));
            ctx.send_many(&left, Message::Clique(CliqueMsg::Block(a)));
            ctx.label(Phase::Propose, height, Some(b.id));
            ctx.send_many(&right, Message::Clique(CliqueMsg::Block(b)));
            return;
        }
        let block = crate::ledger::seal_block(draft, &self.signer);
        let id = block.id;
        ctx.announce(Message::Clique(CliqueMsg::Block(block)), Phase::Propose, height, Some(id));
    }

    fn on_block(&mut self, ctx: &mut Ctx, from: NodeId, block: Block) {
        if self.tree.contains(&block.id) {
            return;
        }
        if !self.tree.contains(&block.parent) {
            let parent = block.parent;
            self.orphans.entry(parent).or_default().push(block);
            if self.requested.insert(parent) {
                ctx.send(from, Message::Clique(CliqueMsg::Request(parent)));
            }
            return;
        }
        let old_head = self.tree.head().block.id;
        let mut work = vec![block];
        while let Some(block) = work.pop() {
            if self.tree.contains(&block.id) {
                continue;
            }
            let parent = self.tree.get(&block.parent).expect("parent present");
            if let Some(reason) = check_block(&block, parent, &self.tree, self.ledger.registry(), self.cfg.epoch_length) {
                ctx.reject(Some(block.id), reason);
                continue;
            }
            let snapshot = parent.snapshot.apply(&block, self.cfg.epoch_length);
            if self.tree.slot_conflicts(block.height, block.author) > 0 {
                self.offenders.insert(block.author);
            }
            let id = block.id;
            let difficulty = block.step_or_view;
            self.tree.insert(block, difficulty, snapshot);
            if let Some(children) = self.orphans.remove(&id) {
                work.extend(children);
            }
        }
        if self.tree.head().block.id != old_head {
            self.reorg(ctx, old_head);
            self.schedule_seal(ctx);
        }
    }

    /// Moves the committed chain onto the new head.
    fn reorg(&mut self, ctx: &mut Ctx, old_head: Digest) {
        let new_path = self.tree.path(&self.tree.head().block.id);
        let common = self
            .ledger
            .view
            .committed()
            .iter()
            .zip(&new_path)
            .take_while(|(b, id)| b.id == **id)
            .count();
        for b in self.ledger.view.revert_to(common - 1) {
            ctx.log_revert(&b);
        }
        for id in &new_path[common..] {
            let block = self.tree.get(id).expect("on path").block.clone();
            self.ledger.on_consensus_deliver(&block, Decision::Accepted);
            ctx.log_commit(&block);
        }
        let before = self.tree.get(&old_head).expect("old head").snapshot.authorities.removed().clone();
        let after = self.tree.head().snapshot.authorities.removed().clone();
        let t = ctx.now();
        for target in after.difference(&before) {
            ctx.record(TraceRecord::Removal { t, node: self.me(), target: *target });
        }
    }
}

impl Replica for CliqueNode {
    fn start(&mut self, ctx: &mut Ctx) {
        self.schedule_seal(ctx);
    }

    fn on_message(&mut self, ctx: &mut Ctx, from: NodeId, msg: Message) {
        match msg {
            Message::ClientTx(tx) => ctx.intake(&mut self.ledger, from, tx),
            Message::Clique(CliqueMsg::Block(b)) => self.on_block(ctx, from, b),
            Message::Clique(CliqueMsg::Request(id)) => {
                if let Some(node) = self.tree.get(&id) {
                    if !node.block.is_genesis() {
                        let b = node.block.clone();
                        ctx.send(from, Message::Clique(CliqueMsg::Block(b)));
                    }
                }
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, timer: Timer) {
        if let Timer::Clique(CliqueTimer::Seal { parent, .. }) = timer {
            self.seal(ctx, parent);
        }
    }

    fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    fn forged_block(&self, forger: &Signer, k: u64) -> Message {
        let head = self.tree.head();
        let active = head.snapshot.authorities.active();
        let height = head.block.height + 1;
        let claimed = adversary::impersonation_target(clique_inturn(height, &active), forger.node(), &active, k);
        let block = adversary::forge_block(forger, claimed, &head.block, SCORE_IN_TURN, Vec::new());
        Message::Clique(CliqueMsg::Block(block))
    }
}
