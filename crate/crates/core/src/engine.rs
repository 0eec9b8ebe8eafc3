//! Glue between the network fabric and the per-node state machines.

use rand_chacha::ChaCha8Rng;

use crate::adversary::{AdversaryKind, Behavior};
use crate::analysis::trace::{Phase, TraceRecord};
use crate::aura::{AuraMsg, AuraTimer};
use crate::clique::{CliqueMsg, CliqueTimer};
use crate::codec::{block_bytes, Encoder};
use crate::crypto::Signer;
use crate::ledger::{Intake, Ledger};
use crate::pbft::{PbftMsg, PbftTimer};
use crate::simnet::{Fabric, SimTime};
use crate::types::{Block, Digest, NodeId, Transaction};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    ClientTx(Transaction),
    TxRefused(Digest),
    Aura(AuraMsg),
    Clique(CliqueMsg),
    Pbft(PbftMsg),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Timer {
    Aura(AuraTimer),
    Clique(CliqueTimer),
    Pbft(PbftTimer),
    Forge,
}

pub(crate) fn encode_block(e: &mut Encoder, b: &Block) {
    e.bytes(&block_bytes(b));
}

impl Message {
    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        match self {
            Message::ClientTx(tx) => {
                e.u8(0).transaction(tx);
            }
            Message::TxRefused(id) => {
                e.u8(1).digest(id);
            }
            Message::Aura(m) => {
                e.u8(2);
                m.encode(&mut e);
            }
            Message::Clique(m) => {
                e.u8(3);
                m.encode(&mut e);
            }
            Message::Pbft(m) => {
                e.u8(4);
                m.encode(&mut e);
            }
        }
        Digest::of(&e.finish())
    }
}

impl Timer {
    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        match self {
            Timer::Aura(AuraTimer::StepEnd(s)) => e.u8(0).u64(*s),
            Timer::Clique(CliqueTimer::Seal { parent, height }) => e.u8(1).digest(parent).u64(*height),
            Timer::Pbft(PbftTimer::Propose { view, seq }) => e.u8(2).u64(*view).u64(*seq),
            Timer::Pbft(PbftTimer::ViewTimeout { epoch }) => e.u8(3).u64(*epoch),
            Timer::Forge => e.u8(4),
        };
        Digest::of(&e.finish())
    }
}

/// Everything a state machine may touch while handling one event.
pub struct Ctx<'a> {
    pub me: NodeId,
    pub fabric: &'a mut Fabric<Message, Timer>,
    pub trace: &'a mut Vec<TraceRecord>,
    /// All authorities, sorted; broadcast recipients.
    pub miners: &'a [NodeId],
    pub rng: &'a mut ChaCha8Rng,
    pub cutoff: SimTime,
    pub behavior: &'a Behavior,
}

impl Ctx<'_> {
    pub fn now(&self) -> SimTime {
        self.fabric.now()
    }

    pub fn local_time(&self) -> SimTime {
        self.fabric.local_time(self.me)
    }

    /// New blocks may still be proposed.
    pub fn proposals_open(&self) -> bool {
        self.now() < self.cutoff
    }

    pub fn acting(&self, kind: AdversaryKind) -> bool {
        self.behavior.acting(kind, self.now())
    }

    pub fn send(&mut self, to: NodeId, msg: Message) {
        self.fabric.pl_send(self.me, to, msg);
    }

    pub fn send_many(&mut self, to: &[NodeId], msg: Message) {
        self.fabric.rb_broadcast(self.me, to, msg);
    }

    /// Broadcast to every authority, sender included.
    pub fn broadcast(&mut self, msg: Message) {
        let miners = self.miners;
        self.fabric.rb_broadcast(self.me, miners, msg);
    }

    /// Logs a consensus send under its round label.
    pub fn label(&mut self, phase: Phase, slot: u64, block: Option<Digest>) {
        let t = self.now();
        self.trace.push(TraceRecord::Send { t, from: self.me, phase, slot, block });
    }

    pub fn announce(&mut self, msg: Message, phase: Phase, slot: u64, block: Option<Digest>) {
        self.label(phase, slot, block);
        self.broadcast(msg);
    }

    pub fn record(&mut self, r: TraceRecord) {
        self.trace.push(r);
    }

    pub fn reject(&mut self, block: Option<Digest>, reason: &str) {
        let t = self.now();
        self.trace.push(TraceRecord::Reject { t, node: self.me, block, reason: reason.to_string() });
    }

    pub fn log_commit(&mut self, block: &Block) {
        let t = self.now();
        self.trace.push(TraceRecord::Commit {
            t,
            node: self.me,
            block: block.id,
            height: block.height,
            author: block.author,
            signing: block.signing_digest(),
            token: block.signature.token,
            txs: block.txs.iter().map(|tx| tx.id).collect(),
        });
    }

    pub fn log_revert(&mut self, block: &Block) {
        let t = self.now();
        self.trace.push(TraceRecord::Revert { t, node: self.me, block: block.id, height: block.height });
    }

    pub fn log_padding(&mut self, tx: &Transaction) {
        let t = self.now();
        self.trace.push(TraceRecord::Submit { t, client: self.me, tx: tx.id, byzantine: true });
    }

    pub fn set_local_timer(&mut self, local_due: SimTime, timer: Timer) {
        self.fabric.set_local_timer(self.me, local_due, timer);
    }

    pub fn set_timer_after(&mut self, after: u64, timer: Timer) {
        self.fabric.set_timer_after(self.me, after, timer);
    }

    /// Client transaction intake shared by all protocols.
    pub fn intake(&mut self, ledger: &mut Ledger, from: NodeId, tx: Transaction) {
        let id = tx.id;
        if ledger.on_client_tx(tx) == Intake::Refused {
            self.reject(None, "invalid_tx");
            if ledger.registry().is_client(from) && !self.miners.contains(&from) {
                self.send(from, Message::TxRefused(id));
            }
        }
    }
}

/// One authority's consensus state machine.
pub trait Replica {
    fn start(&mut self, ctx: &mut Ctx);
    fn on_message(&mut self, ctx: &mut Ctx, from: NodeId, msg: Message);
    fn on_timer(&mut self, ctx: &mut Ctx, timer: Timer);
    fn ledger(&self) -> &Ledger;
    /// A block claiming another authority as author, wrapped for this
    /// protocol. Used by the forger.
    fn forged_block(&self, forger: &Signer, k: u64) -> Message;
}
