//! Simplified PBFT: one block per sequence number, three message rounds,
//! locking on prepared blocks and timeout-driven view changes.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::adversary::{self, AdversaryKind, FORGED_NONCE_BASE};
use crate::analysis::trace::{Phase, TraceRecord};
use crate::chain::{verify_block, AuthoritySet};
use crate::codec::Encoder;
use crate::crypto::Signer;
use crate::engine::{encode_block, Ctx, Message, Replica, Timer};
use crate::ledger::{BlockDraft, Decision, Ledger};
use crate::types::{Block, Digest, NodeId};

/// Tolerated faults: `floor((N - 1) / 3)`.
pub fn pbft_f(n: usize) -> usize {
    n.saturating_sub(1) / 3
}

/// Smallest quorum whose pairwise intersections contain a correct node:
/// `ceil((N + f + 1) / 2)`, which is `2f + 1` when `N = 3f + 1`.
pub fn pbft_quorum(n: usize) -> usize {
    (n + pbft_f(n) + 2) / 2
}

pub fn pbft_primary(view: u64, members: &[NodeId]) -> NodeId {
    members[(view % members.len() as u64) as usize]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedCert {
    pub view: u64,
    pub seq: u64,
    pub block: Block,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PbftMsg {
    PrePrepare { view: u64, seq: u64, block: Block },
    Prepare { view: u64, seq: u64, block: Digest },
    Commit { view: u64, seq: u64, block: Digest },
    ViewChange { new_view: u64, last_committed: u64, prepared: Option<PreparedCert> },
}

impl PbftMsg {
    pub(crate) fn encode(&self, e: &mut Encoder) {
        match self {
            PbftMsg::PrePrepare { view, seq, block } => {
                e.u8(0).u64(*view).u64(*seq);
                encode_block(e, block);
            }
            PbftMsg::Prepare { view, seq, block } => {
                e.u8(1).u64(*view).u64(*seq).digest(block);
            }
            PbftMsg::Commit { view, seq, block } => {
                e.u8(2).u64(*view).u64(*seq).digest(block);
            }
            PbftMsg::ViewChange { new_view, last_committed, prepared } => {
                e.u8(3).u64(*new_view).u64(*last_committed);
                match prepared {
                    None => {
                        e.u8(0);
                    }
                    Some(c) => {
                        e.u8(1).u64(c.view).u64(c.seq);
                        encode_block(e, &c.block);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PbftTimer {
    Propose { view: u64, seq: u64 },
    /// Stale unless `epoch` matches the node's current timer epoch.
    ViewTimeout { epoch: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct PbftConfig {
    pub view_timeout: u64,
    pub block_interval: u64,
}

#[derive(Debug, Default, Clone)]
struct Slot {
    preprepare: Option<Digest>,
    prepares: BTreeMap<Digest, BTreeSet<NodeId>>,
    commits: BTreeMap<Digest, BTreeSet<NodeId>>,
    sent_commit: bool,
}

/// (view, seq, block) of the latest prepared certificate.
type Lock = (u64, u64, Digest);

const MAX_BACKOFF: u64 = 64;

pub struct PbftNode {
    signer: Signer,
    ledger: Ledger,
    authorities: AuthoritySet,
    members: Vec<NodeId>,
    cfg: PbftConfig,
    view: u64,
    /// Target view while a view change is in progress.
    changing: Option<u64>,
    slots: BTreeMap<(u64, u64), Slot>,
    blocks: HashMap<Digest, Block>,
    lock: Option<Lock>,
    vc: BTreeMap<u64, BTreeMap<NodeId, Option<Lock>>>,
    buffered: BTreeMap<u64, Vec<(NodeId, u64, Block)>>,
    timeout: u64,
    timer_epoch: u64,
    proposed: BTreeSet<(u64, u64)>,
    padding_nonce: u64,
}

impl PbftNode {
    pub fn new(signer: Signer, ledger: Ledger, authorities: AuthoritySet, cfg: PbftConfig) -> Self {
        let members = authorities.active();
        Self {
            signer,
            ledger,
            authorities,
            members,
            cfg,
            view: 0,
            changing: None,
            slots: BTreeMap::new(),
            blocks: HashMap::new(),
            lock: None,
            vc: BTreeMap::new(),
            buffered: BTreeMap::new(),
            timeout: cfg.view_timeout,
            timer_epoch: 0,
            proposed: BTreeSet::new(),
            padding_nonce: FORGED_NONCE_BASE / 2,
        }
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn target_view(&self) -> u64 {
        self.changing.unwrap_or(self.view)
    }

    fn me(&self) -> NodeId {
        self.signer.node()
    }

    fn quorum(&self) -> usize {
        pbft_quorum(self.members.len())
    }

    fn next_seq(&self) -> u64 {
        self.ledger.view.head().height + 1
    }

    fn primary(&self, view: u64) -> NodeId {
        pbft_primary(view, &self.members)
    }

    fn mute(&self, ctx: &Ctx) -> bool {
        ctx.acting(AdversaryKind::Silent)
    }

    fn arm_timer(&mut self, ctx: &mut Ctx) {
        self.timer_epoch += 1;
        ctx.set_timer_after(self.timeout, Timer::Pbft(PbftTimer::ViewTimeout { epoch: self.timer_epoch }));
    }

    fn schedule_proposal(&mut self, ctx: &mut Ctx) {
        if self.changing.is_none() && self.primary(self.view) == self.me() {
            let (view, seq) = (self.view, self.next_seq());
            ctx.set_timer_after(self.cfg.block_interval, Timer::Pbft(PbftTimer::Propose { view, seq }));
        }
    }

    fn propose(&mut self, ctx: &mut Ctx, view: u64, seq: u64) {
        if view != self.view
            || self.changing.is_some()
            || seq != self.next_seq()
            || self.primary(view) != self.me()
            || !ctx.proposals_open()
            || self.mute(ctx)
            || !self.proposed.insert((view, seq))
        {
            return;
        }
        let head = self.ledger.view.head().clone();
        let relocked = match self.lock {
            Some((_, s, id)) if s == seq => self.blocks.get(&id).cloned(),
            _ => None,
        };
        if relocked.is_none() && ctx.acting(AdversaryKind::Equivocator) {
            let txs = self.ledger.take_for_block(self.ledger.config.block_size, &|_| false);
            let draft = BlockDraft::on(&head, self.me(), view).with_txs(txs);
            self.padding_nonce += 1;
            let (a, b, pad) = adversary::equivocate(draft, &self.signer, self.padding_nonce, ctx.now());
            if let Some(tx) = &pad {
                ctx.log_padding(tx);
            }
            let (left, right) = adversary::split_halves(ctx.miners);
            ctx.label(Phase::Preprepare, seq, Some(a.id));
            ctx.send_many(&left, Message::Pbft(PbftMsg::PrePrepare { view, seq, block: a }));
            ctx.label(Phase::Preprepare, seq, Some(b.id));
            ctx.send_many(&right, Message::Pbft(PbftMsg::PrePrepare { view, seq, block: b }));
            return;
        }
        let block = relocked.unwrap_or_else(|| {
            let txs = self.ledger.take_for_block(self.ledger.config.block_size, &|_| false);
            self.ledger.beta(txs, &self.signer, &head, view)
        });
        let id = block.id;
        ctx.announce(Message::Pbft(PbftMsg::PrePrepare { view, seq, block }), Phase::Preprepare, seq, Some(id));
    }

    fn authentic(&self, block: &Block) -> bool {
        block.id_matches()
            && block.signature.author == block.author
            && self.authorities.is_active(block.author)
            && self.ledger.registry().verify(&block.signature, &block.signing_digest())
    }

    fn on_preprepare(&mut self, ctx: &mut Ctx, from: NodeId, view: u64, seq: u64, block: Block) {
        if !self.authentic(&block) {
            ctx.reject(Some(block.id), "bad_signature");
            return;
        }
        self.blocks.entry(block.id).or_insert_with(|| block.clone());
        if from != self.primary(view) {
            ctx.reject(Some(block.id), "not_primary");
            return;
        }
        if view < self.view || seq < self.next_seq() {
            return;
        }
        if view > self.view || self.changing.is_some() || seq > self.next_seq() {
            self.buffered.entry(seq).or_default().push((from, view, block));
            return;
        }
        let id = block.id;
        let slot = self.slots.entry((view, seq)).or_default();
        match slot.preprepare {
            Some(existing) if existing == id => return,
            Some(_) => {
                ctx.reject(Some(id), "conflicting_preprepare");
                self.start_view_change(ctx, view + 1);
                return;
            }
            None => {}
        }
        if block.height != seq || !verify_block(&block, &self.ledger.view, &self.authorities, self.ledger.registry()) {
            ctx.reject(Some(id), "invalid_block");
            return;
        }
        if let Some((_, s, locked)) = self.lock {
            if s == seq && locked != id {
                ctx.reject(Some(id), "locked");
                return;
            }
        }
        self.slots.get_mut(&(view, seq)).expect("inserted").preprepare = Some(id);
        if !self.mute(ctx) {
            ctx.announce(Message::Pbft(PbftMsg::Prepare { view, seq, block: id }), Phase::Prepare, seq, Some(id));
        }
        self.progress(ctx, view, seq);
    }

    fn progress(&mut self, ctx: &mut Ctx, view: u64, seq: u64) {
        let q = self.quorum();
        if let Some(slot) = self.slots.get(&(view, seq)) {
            // a quorum of prepares in a newer view moves the lock
            let newer = slot
                .prepares
                .iter()
                .find(|(id, voters)| voters.len() >= q && self.blocks.contains_key(*id))
                .map(|(id, _)| *id);
            if let Some(id) = newer {
                if seq >= self.next_seq() && self.lock.is_none_or(|(v, s, _)| s != seq || v < view) {
                    self.lock = Some((view, seq, id));
                }
            }
        }
        let ready = self.slots.get(&(view, seq)).and_then(|slot| {
            let id = slot.preprepare?;
            let enough = slot.prepares.get(&id).is_some_and(|v| v.len() >= q);
            (enough && !slot.sent_commit).then_some(id)
        });
        if let Some(id) = ready {
            if view == self.view && self.changing.is_none() {
                self.slots.get_mut(&(view, seq)).expect("present").sent_commit = true;
                self.lock = Some((view, seq, id));
                if !self.mute(ctx) {
                    ctx.announce(Message::Pbft(PbftMsg::Commit { view, seq, block: id }), Phase::Commit, seq, Some(id));
                }
            }
        }
        self.try_commit(ctx);
    }

    fn try_commit(&mut self, ctx: &mut Ctx) {
        let q = self.quorum();
        loop {
            let seq = self.next_seq();
            let head = self.ledger.view.head().id;
            let found = self
                .slots
                .range((0, seq)..)
                .filter(|((_, s), _)| *s == seq)
                .flat_map(|(_, slot)| slot.commits.iter())
                .find(|(id, voters)| {
                    voters.len() >= q && self.blocks.get(*id).is_some_and(|b| b.parent == head)
                })
                .map(|(id, _)| *id);
            let Some(id) = found else { break };
            let block = self.blocks[&id].clone();
            self.ledger.on_consensus_deliver(&block, Decision::Accepted);
            ctx.log_commit(&block);
            if self.lock.is_some_and(|(_, s, _)| s <= seq) {
                self.lock = None;
            }
            self.slots.retain(|(_, s), _| *s > seq);
            self.buffered.retain(|s, _| *s > seq);
            self.blocks.retain(|_, b| b.height > seq);
            self.timeout = self.cfg.view_timeout;
            self.arm_timer(ctx);
            self.schedule_proposal(ctx);
            self.replay_buffered(ctx);
        }
    }

    fn replay_buffered(&mut self, ctx: &mut Ctx) {
        let seq = self.next_seq();
        if self.changing.is_some() {
            return;
        }
        let pending = self.buffered.remove(&seq).unwrap_or_default();
        for (from, view, block) in pending {
            if view == self.view {
                self.on_preprepare(ctx, from, view, seq, block);
            } else if view > self.view {
                self.buffered.entry(seq).or_default().push((from, view, block));
            }
        }
    }

    fn start_view_change(&mut self, ctx: &mut Ctx, target: u64) {
        if target <= self.target_view() {
            return;
        }
        self.changing = Some(target);
        self.timeout = (self.timeout * 2).min(self.cfg.view_timeout * MAX_BACKOFF);
        let t = ctx.now();
        ctx.record(TraceRecord::ViewChange { t, node: self.me(), view: target });
        self.arm_timer(ctx);
        if self.mute(ctx) {
            return;
        }
        let prepared = self.lock.and_then(|(view, seq, id)| {
            (seq == self.next_seq()).then(|| PreparedCert { view, seq, block: self.blocks[&id].clone() })
        });
        let last_committed = self.ledger.view.head().height;
        ctx.announce(
            Message::Pbft(PbftMsg::ViewChange { new_view: target, last_committed, prepared }),
            Phase::ViewChange,
            target,
            None,
        );
    }

    fn on_view_change(&mut self, ctx: &mut Ctx, from: NodeId, new_view: u64, prepared: Option<PreparedCert>) {
        if new_view <= self.view || !self.authorities.is_active(from) {
            return;
        }
        let summary = prepared.and_then(|c| {
            if self.authentic(&c.block) {
                let id = c.block.id;
                self.blocks.entry(id).or_insert(c.block);
                Some((c.view, c.seq, id))
            } else {
                None
            }
        });
        let votes = self.vc.entry(new_view).or_default();
        votes.insert(from, summary);
        let count = votes.len();
        if count > pbft_f(self.members.len()) && self.target_view() < new_view {
            self.start_view_change(ctx, new_view);
        }
        if count >= self.quorum() {
            self.enter_view(ctx, new_view);
        }
    }

    fn enter_view(&mut self, ctx: &mut Ctx, view: u64) {
        let next = self.next_seq();
        let best = self.vc[&view]
            .values()
            .flatten()
            .filter(|(_, s, _)| *s == next)
            .max_by_key(|(v, _, _)| *v)
            .copied();
        if let Some(cert) = best {
            if self.lock.is_none_or(|(v, s, _)| s != next || v < cert.0) {
                self.lock = Some(cert);
            }
        }
        self.view = view;
        self.changing = None;
        self.vc.retain(|v, _| *v > view);
        self.arm_timer(ctx);
        self.schedule_proposal(ctx);
        self.replay_buffered(ctx);
    }
}

impl Replica for PbftNode {
    fn start(&mut self, ctx: &mut Ctx) {
        self.arm_timer(ctx);
        self.schedule_proposal(ctx);
    }

    fn on_message(&mut self, ctx: &mut Ctx, from: NodeId, msg: Message) {
        let Message::Pbft(m) = msg else {
            if let Message::ClientTx(tx) = msg {
                ctx.intake(&mut self.ledger, from, tx);
            }
            return;
        };
        match m {
            PbftMsg::PrePrepare { view, seq, block } => self.on_preprepare(ctx, from, view, seq, block),
            PbftMsg::Prepare { view, seq, block } => {
                if self.authorities.is_active(from) && seq >= self.next_seq() {
                    self.slots.entry((view, seq)).or_default().prepares.entry(block).or_default().insert(from);
                    self.progress(ctx, view, seq);
                }
            }
            PbftMsg::Commit { view, seq, block } => {
                if self.authorities.is_active(from) && seq >= self.next_seq() {
                    self.slots.entry((view, seq)).or_default().commits.entry(block).or_default().insert(from);
                    self.try_commit(ctx);
                }
            }
            PbftMsg::ViewChange { new_view, prepared, .. } => self.on_view_change(ctx, from, new_view, prepared),
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, timer: Timer) {
        match timer {
            Timer::Pbft(PbftTimer::Propose { view, seq }) => self.propose(ctx, view, seq),
            Timer::Pbft(PbftTimer::ViewTimeout { epoch }) if epoch == self.timer_epoch => {
                let target = self.target_view() + 1;
                self.start_view_change(ctx, target);
            }
            _ => {}
        }
    }

    fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    fn forged_block(&self, forger: &Signer, k: u64) -> Message {
        let claimed = adversary::impersonation_target(self.primary(self.view), forger.node(), &self.members, k);
        let head = self.ledger.view.head();
        let block = adversary::forge_block(forger, claimed, head, self.view, Vec::new());
        Message::Pbft(PbftMsg::PrePrepare { view: self.view, seq: head.height + 1, block })
    }
}
