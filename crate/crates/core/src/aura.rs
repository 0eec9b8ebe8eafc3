//! Aura: round-robin step leaders, a propose/echo exchange per step, vote-out
//! of misbehaving leaders and the distinct-author finality window.

use std::collections::{BTreeMap, BTreeSet};

use crate::adversary::{self, AdversaryKind, FORGED_NONCE_BASE};
use crate::analysis::trace::{Phase, TraceRecord};
use crate::chain::{verify_block, AuthoritySet, VoteOutcome};
use crate::codec::Encoder;
use crate::crypto::Signer;
use crate::engine::{encode_block, Ctx, Message, Replica, Timer};
use crate::ledger::{BlockDraft, Decision, Ledger};
use crate::simnet::SimTime;
use crate::types::{Block, Digest, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VoteReason {
    NoBlock,
    TooManyBlocks,
    InconsistentBlocks,
}

impl VoteReason {
    pub fn as_str(self) -> &'static str {
        match self {
            VoteReason::NoBlock => "no_block",
            VoteReason::TooManyBlocks => "too_many_blocks",
            VoteReason::InconsistentBlocks => "inconsistent_blocks",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuraMsg {
    Proposal(Block),
    Echo { step: u64, block: Digest },
    Vote { target: NodeId, step: u64, reason: VoteReason },
}

impl AuraMsg {
    pub(crate) fn encode(&self, e: &mut Encoder) {
        match self {
            AuraMsg::Proposal(b) => {
                e.u8(0);
                encode_block(e, b);
            }
            AuraMsg::Echo { step, block } => {
                e.u8(1).u64(*step).digest(block);
            }
            AuraMsg::Vote { target, step, reason } => {
                e.u8(2).node(*target).u64(*step).u8(*reason as u8);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuraTimer {
    /// Local clock reached the end of this step.
    StepEnd(u64),
}

/// `floor(local_time / step_duration)`
pub fn aura_step(local_time: SimTime, step_duration: u64) -> u64 {
    local_time / step_duration
}

/// Member at index `step mod N` of the sorted active list.
pub fn aura_leader(step: u64, active: &[NodeId]) -> NodeId {
    active[(step % active.len() as u64) as usize]
}

/// Length of the longest prefix of `authors` in which every position is
/// followed (itself included) by at least `omega` distinct authors.
pub fn finalized_prefix(authors: &[NodeId], omega: usize) -> usize {
    let mut seen = BTreeSet::new();
    let mut last_ok = None;
    for (i, a) in authors.iter().enumerate().rev() {
        seen.insert(*a);
        if seen.len() >= omega {
            last_ok = Some(i);
            break;
        }
    }
    // distinct-suffix counts only grow towards the front
    last_ok.map_or(0, |i| i + 1)
}

#[derive(Debug, Clone, Copy)]
pub struct AuraConfig {
    pub step_duration: u64,
}

pub struct AuraNode {
    signer: Signer,
    ledger: Ledger,
    authorities: AuthoritySet,
    cfg: AuraConfig,
    step: u64,
    leaders: BTreeMap<u64, NodeId>,
    proposals: BTreeMap<u64, Vec<Block>>,
    echoes: BTreeMap<u64, BTreeMap<NodeId, Digest>>,
    /// Block accepted into `q_b` at each step, for late-echo checks.
    accepted: BTreeMap<u64, Digest>,
    voted: BTreeSet<NodeId>,
    padding_nonce: u64,
}

impl AuraNode {
    pub fn new(signer: Signer, ledger: Ledger, authorities: AuthoritySet, cfg: AuraConfig) -> Self {
        Self {
            signer,
            ledger,
            authorities,
            cfg,
            step: 0,
            leaders: BTreeMap::new(),
            proposals: BTreeMap::new(),
            echoes: BTreeMap::new(),
            accepted: BTreeMap::new(),
            voted: BTreeSet::new(),
            padding_nonce: FORGED_NONCE_BASE / 2,
        }
    }

    pub fn authorities(&self) -> &AuthoritySet {
        &self.authorities
    }

    fn me(&self) -> NodeId {
        self.signer.node()
    }

    fn begin_step(&mut self, ctx: &mut Ctx, step: u64) {
        self.step = step;
        let active = self.authorities.active();
        if active.is_empty() {
            return;
        }
        let leader = aura_leader(step, &active);
        self.leaders.insert(step, leader);
        if leader == self.me() {
            self.propose(ctx, step);
        }
        ctx.set_local_timer((step + 1) * self.cfg.step_duration, Timer::Aura(AuraTimer::StepEnd(step)));
    }

    fn propose(&mut self, ctx: &mut Ctx, step: u64) {
        if !ctx.proposals_open() || ctx.acting(AdversaryKind::Silent) {
            return;
        }
        let txs = self.ledger.take_for_block(self.ledger.config.block_size, &|_| false);
        let parent = self.ledger.view.tip().clone();
        if ctx.acting(AdversaryKind::Equivocator) {
            let draft = BlockDraft::on(&parent, self.me(), step).with_txs(txs);
            self.padding_nonce += 1;
            let (a, b, pad) = adversary::equivocate(draft, &self.signer, self.padding_nonce, ctx.now());
            if let Some(tx) = &pad {
                ctx.log_padding(tx);
            }
            let (left, right) = adversary::split_halves(ctx.miners);
            ctx.label(Phase::Propose, step, Some(a.id));
            ctx.send_many(&left, Message::Aura(AuraMsg::Proposal(a)));
            ctx.label(Phase::Propose, step, Some(b.id));
            ctx.send_many(&right, Message::Aura(AuraMsg::Proposal(b)));
            return;
        }
        let block = self.ledger.beta(txs, &self.signer, &parent, step);
        let id = block.id;
        ctx.announce(Message::Aura(AuraMsg::Proposal(block)), Phase::Propose, step, Some(id));
    }

    fn end_step(&mut self, ctx: &mut Ctx, step: u64) {
        let Some(leader) = self.leaders.get(&step).copied() else { return };
        let props = self.proposals.remove(&step).unwrap_or_default();
        let echoes = self.echoes.remove(&step).unwrap_or_default();
        match props.as_slice() {
            [] => {
                // honest leaders stop proposing at the cutoff
                if leader != self.me() && ctx.proposals_open() {
                    self.vote(ctx, leader, step, VoteReason::NoBlock);
                }
            }
            [block] => {
                if echoes.values().all(|id| *id == block.id) {
                    self.accept(ctx, step, block.clone());
                } else {
                    self.vote(ctx, leader, step, VoteReason::InconsistentBlocks);
                }
            }
            _ => self.vote(ctx, leader, step, VoteReason::TooManyBlocks),
        }
        self.echoes.retain(|s, _| *s > step);
        self.proposals.retain(|s, _| *s > step);
    }

    fn accept(&mut self, ctx: &mut Ctx, step: u64, block: Block) {
        if !self.authorities.is_active(block.author) {
            return;
        }
        self.accepted.insert(step, block.id);
        self.ledger.mark_wait(&block);
        self.ledger.view.q_b.push(block);
        self.finalize(ctx);
    }

    fn finalize(&mut self, ctx: &mut Ctx) {
        let omega = self.authorities.k() + 1;
        let authors: Vec<NodeId> = self.ledger.view.q_b.iter().map(|b| b.author).collect();
        let count = finalized_prefix(&authors, omega);
        let ready: Vec<Block> = self.ledger.view.q_b[..count].to_vec();
        for block in ready {
            self.ledger.on_consensus_deliver(&block, Decision::Accepted);
            if self.ledger.view.is_committed_block(&block.id) {
                ctx.log_commit(&block);
            } else {
                self.ledger.on_consensus_deliver(&block, Decision::Refused);
                ctx.reject(Some(block.id), "unlinked");
            }
        }
    }

    fn vote(&mut self, ctx: &mut Ctx, target: NodeId, step: u64, reason: VoteReason) {
        if ctx.acting(AdversaryKind::Abstainer)
            || target == self.me()
            || !self.authorities.is_active(target)
            || !self.voted.insert(target)
        {
            return;
        }
        let t = ctx.now();
        ctx.record(TraceRecord::Vote { t, voter: self.me(), target, reason: reason.as_str().into() });
        ctx.broadcast(Message::Aura(AuraMsg::Vote { target, step, reason }));
    }

    fn on_proposal(&mut self, ctx: &mut Ctx, from: NodeId, block: Block) {
        let step = block.step_or_view;
        let reason = if from != block.author {
            Some("relayed")
        } else if step != self.step {
            Some("wrong_step")
        } else if self.leaders.get(&step) != Some(&block.author) {
            Some("not_leader")
        } else if !verify_block(&block, &self.ledger.view, &self.authorities, self.ledger.registry()) {
            Some("invalid_block")
        } else {
            None
        };
        if let Some(reason) = reason {
            ctx.reject(Some(block.id), reason);
            return;
        }
        let list = self.proposals.entry(step).or_default();
        if list.iter().any(|b| b.id == block.id) {
            return;
        }
        list.push(block.clone());
        if list.len() == 1 {
            let echo = AuraMsg::Echo { step, block: block.id };
            ctx.announce(Message::Aura(echo), Phase::Echo, step, Some(block.id));
        }
    }

    fn on_echo(&mut self, ctx: &mut Ctx, from: NodeId, step: u64, block: Digest) {
        if !self.authorities.is_active(from) {
            return;
        }
        if step < self.step {
            // late echo: the step is already decided here
            if let Some(acc) = self.accepted.get(&step).copied() {
                if acc != block {
                    if let Some(leader) = self.leaders.get(&step).copied() {
                        self.vote(ctx, leader, step, VoteReason::InconsistentBlocks);
                    }
                }
            }
            return;
        }
        self.echoes.entry(step).or_default().entry(from).or_insert(block);
    }

    fn on_vote(&mut self, ctx: &mut Ctx, from: NodeId, target: NodeId) {
        if self.authorities.cast_vote(from, target) == VoteOutcome::Removed {
            let t = ctx.now();
            ctx.record(TraceRecord::Removal { t, node: self.me(), target });
            let doomed: Vec<Block> =
                self.ledger.view.q_b.iter().filter(|b| b.author == target).cloned().collect();
            for b in doomed {
                self.ledger.on_consensus_deliver(&b, Decision::Refused);
                ctx.record(TraceRecord::Refuse { t, node: self.me(), block: b.id });
            }
            self.finalize(ctx);
        }
    }
}

impl Replica for AuraNode {
    fn start(&mut self, ctx: &mut Ctx) {
        let step = aura_step(ctx.local_time(), self.cfg.step_duration);
        self.begin_step(ctx, step);
    }

    fn on_message(&mut self, ctx: &mut Ctx, from: NodeId, msg: Message) {
        match msg {
            Message::ClientTx(tx) => ctx.intake(&mut self.ledger, from, tx),
            Message::Aura(AuraMsg::Proposal(b)) => self.on_proposal(ctx, from, b),
            Message::Aura(AuraMsg::Echo { step, block }) => self.on_echo(ctx, from, step, block),
            Message::Aura(AuraMsg::Vote { target, .. }) => self.on_vote(ctx, from, target),
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, timer: Timer) {
        if let Timer::Aura(AuraTimer::StepEnd(step)) = timer {
            if step != self.step {
                return;
            }
            self.end_step(ctx, step);
            let next = aura_step(ctx.local_time(), self.cfg.step_duration).max(step + 1);
            self.begin_step(ctx, next);
        }
    }

    fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    fn forged_block(&self, forger: &Signer, k: u64) -> Message {
        let active = self.authorities.active();
        let claimed = aura_leader(self.step, &active);
        let victim = adversary::impersonation_target(claimed, forger.node(), &active, k);
        let parent = self.ledger.view.tip();
        Message::Aura(AuraMsg::Proposal(adversary::forge_block(forger, victim, parent, self.step, Vec::new())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().copied().map(NodeId).collect()
    }

    #[test]
    fn step_is_floor_division() {
        assert_eq!(aura_step(0, 1000), 0);
        assert_eq!(aura_step(999, 1000), 0);
        assert_eq!(aura_step(1000, 1000), 1);
        assert_eq!(aura_step(12_345, 5000), 2);
    }

    #[test]
    fn leaders_rotate_over_active_set() {
        let active = ids(&[0, 1, 2, 3]);
        let order: Vec<u32> = (0..8).map(|s| aura_leader(s, &active).0).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 0, 1, 2, 3]);
        let reduced = ids(&[0, 2, 3]);
        assert_eq!(aura_leader(4, &reduced), NodeId(2));
    }

    #[test]
    fn finality_window_examples() {
        // N = 4, omega = 3
        assert_eq!(finalized_prefix(&ids(&[0, 1]), 3), 0);
        assert_eq!(finalized_prefix(&ids(&[0, 1, 2]), 3), 1);
        assert_eq!(finalized_prefix(&ids(&[0, 1, 2, 3]), 3), 2);
        assert_eq!(finalized_prefix(&ids(&[0, 0, 0, 1]), 2), 3);
        assert_eq!(finalized_prefix(&ids(&[0, 1, 1, 1]), 2), 1);
        assert_eq!(finalized_prefix(&[], 1), 0);
    }

    /// Direct transcription of the rule, position by position.
    fn oracle(authors: &[NodeId], omega: usize) -> usize {
        let mut n = 0;
        for i in 0..authors.len() {
            let distinct: BTreeSet<_> = authors[i..].iter().collect();
            if distinct.len() >= omega {
                n = i + 1;
            } else {
                break;
            }
        }
        n
    }

    #[test]
    fn finality_window_matches_brute_force_n5() {
        // every author sequence of length <= 6 over 5 authorities
        for len in 0..=6u32 {
            let total = 5u32.pow(len);
            for code in 0..total {
                let mut c = code;
                let seq: Vec<NodeId> = (0..len)
                    .map(|_| {
                        let a = c % 5;
                        c /= 5;
                        NodeId(a)
                    })
                    .collect();
                for omega in 1..=3 {
                    assert_eq!(finalized_prefix(&seq, omega), oracle(&seq, omega), "{seq:?} omega {omega}");
                }
            }
        }
    }
}
