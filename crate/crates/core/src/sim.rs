//! Runs one scenario to completion and returns its trace.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{self, AdversaryKind, Behavior, DEFAULT_FORGE_BUDGET, DEFAULT_FORGE_INTERVAL};
use crate::analysis::{self, compute_metrics, MetricsReport, RunHeader, RunVerdict, Trace, TraceRecord};
use crate::aura::{AuraConfig, AuraNode};
use crate::chain::{AuthoritySet, ChainView, Linkage};
use crate::clique::{CliqueConfig, CliqueNode};
use crate::codec::Encoder;
use crate::crypto::{KeyRegistry, Signer};
use crate::engine::{Ctx, Message, Replica, Timer};
use crate::ledger::{make_transaction, Ledger, LedgerConfig};
use crate::pbft::{PbftConfig, PbftNode};
use crate::scenario::{Protocol, Scenario};
use crate::simnet::{EventKind, Fabric, SimTime};
use crate::types::{Block, Digest, NodeId, Role};

struct Client {
    signer: Signer,
    nonce: u64,
    refused: u64,
}

struct Forger {
    node: NodeId,
    remaining: u32,
    interval: u64,
    issued: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub events: u64,
    pub messages_sent: u64,
    pub messages_held_forever: u64,
    pub refused_at_client: u64,
}

pub struct Simulation {
    scenario: Scenario,
    fabric: Fabric<Message, Timer>,
    replicas: Vec<Box<dyn Replica + Send>>,
    behaviors: Vec<Behavior>,
    rngs: Vec<ChaCha8Rng>,
    miners: Vec<NodeId>,
    clients: Vec<Client>,
    forgers: Vec<Forger>,
    trace: Vec<TraceRecord>,
    registry: std::sync::Arc<KeyRegistry>,
    cutoff: SimTime,
    stats: RunStats,
}

fn build_replica(s: &Scenario, signer: Signer, registry: &std::sync::Arc<KeyRegistry>, miners: &[NodeId]) -> Box<dyn Replica + Send> {
    let genesis = Block::genesis(miners);
    let authorities = AuthoritySet::new(miners.to_vec());
    let cfg = LedgerConfig::new(s.block_size);
    match s.protocol {
        Protocol::Aura => {
            let ledger = Ledger::new(cfg, ChainView::new(genesis, Linkage::KnownAncestor), registry.clone());
            Box::new(AuraNode::new(signer, ledger, authorities, AuraConfig { step_duration: s.aura.step_duration_ms }))
        }
        Protocol::Clique => {
            let ledger = Ledger::new(cfg, ChainView::new(genesis, Linkage::Strict), registry.clone());
            let c = CliqueConfig {
                epoch_length: s.clique.epoch_length,
                wiggle_max: s.clique.wiggle_max_ms,
                period: s.clique.period_ms,
            };
            Box::new(CliqueNode::new(signer, ledger, authorities, c))
        }
        Protocol::Pbft => {
            let ledger = Ledger::new(cfg, ChainView::new(genesis, Linkage::Strict), registry.clone());
            let c = PbftConfig { view_timeout: s.view_timeout(), block_interval: s.block_interval() };
            Box::new(PbftNode::new(signer, ledger, authorities, c))
        }
    }
}

impl Simulation {
    /// The scenario must already be validated.
    pub fn new(scenario: &Scenario) -> Self {
        let s = scenario.clone();
        let miners = s.miners();
        let mut roles = vec![Role::MinerClient; s.n];
        roles.extend(std::iter::repeat_n(Role::Client, s.clients));
        let registry = KeyRegistry::new(s.seed, roles);
        let fabric = Fabric::new(s.seed, s.network.delay_model(), s.network.partitions.clone(), s.network.skew_map());
        let replicas = miners.iter().map(|m| build_replica(&s, registry.signer(*m), &registry, &miners)).collect();
        let behaviors = miners.iter().map(|m| Behavior::for_node(*m, &s.adversaries)).collect();
        let rngs = (0..s.n as u64)
            .map(|i| {
                let mut r = ChaCha8Rng::seed_from_u64(s.seed);
                r.set_stream(i + 1);
                r
            })
            .collect();
        let clients = s.client_ids().into_iter().map(|c| Client { signer: registry.signer(c), nonce: 0, refused: 0 }).collect();
        let forgers = s
            .adversaries
            .iter()
            .filter(|a| a.kind == AdversaryKind::Forger)
            .map(|a| Forger {
                node: a.node,
                remaining: a.budget.unwrap_or(DEFAULT_FORGE_BUDGET),
                interval: a.interval.unwrap_or(DEFAULT_FORGE_INTERVAL).max(1),
                issued: 0,
            })
            .collect();
        let (adverse_start, adverse_end) = s.adverse_phase();
        let header = RunHeader {
            scenario: s.name.clone(),
            protocol: s.protocol,
            n: s.n,
            clients: s.clients,
            seed: s.seed,
            duration: s.duration_ticks,
            cutoff: s.cutoff(),
            settle: s.settle(),
            block_size: s.block_size,
            d_min: s.network.d_min,
            d_max: s.network.d_max,
            gst: s.network.gst,
            byzantine: s.byzantine(),
            expected_interval: s.expected_interval(),
            adverse_start,
            adverse_end,
        };
        Self {
            cutoff: s.cutoff(),
            scenario: s,
            fabric,
            replicas,
            behaviors,
            rngs,
            miners,
            clients,
            forgers,
            trace: vec![TraceRecord::Header(header)],
            registry,
            stats: RunStats::default(),
        }
    }

    fn with_ctx<R>(&mut self, node: NodeId, f: impl FnOnce(&mut dyn Replica, &mut Ctx) -> R) -> R {
        let i = node.index();
        let mut ctx = Ctx {
            me: node,
            fabric: &mut self.fabric,
            trace: &mut self.trace,
            miners: &self.miners,
            rng: &mut self.rngs[i],
            cutoff: self.cutoff,
            behavior: &self.behaviors[i],
        };
        f(self.replicas[i].as_mut(), &mut ctx)
    }

    fn submit(&mut self, client: NodeId) {
        let now = self.fabric.now();
        if now >= self.cutoff {
            return;
        }
        let c = &mut self.clients[client.index() - self.scenario.n];
        let payload = c.nonce.to_be_bytes().to_vec();
        let tx = make_transaction(&c.signer, c.nonce, payload, now);
        c.nonce += 1;
        self.trace.push(TraceRecord::Submit { t: now, client, tx: tx.id, byzantine: false });
        self.fabric.rb_broadcast(client, &self.miners, Message::ClientTx(tx));
        let next = now + self.scenario.workload.interval();
        if next < self.cutoff {
            self.fabric.schedule_submit(client, next);
        }
    }

    fn forge(&mut self, node: NodeId) {
        let now = self.fabric.now();
        let Some(fi) = self.forgers.iter().position(|f| f.node == node) else { return };
        if self.forgers[fi].remaining == 0 || now >= self.cutoff {
            return;
        }
        let interval = self.forgers[fi].interval;
        self.fabric.set_timer_after(node, interval, Timer::Forge);
        if !self.behaviors[node.index()].acting(AdversaryKind::Forger, now) {
            return;
        }
        let f = &mut self.forgers[fi];
        f.remaining -= 1;
        let k = f.issued;
        f.issued += 1;
        let signer = self.registry.signer(node);
        let targets: Vec<NodeId> = self.miners.iter().copied().filter(|m| *m != node).collect();
        let (what, id, msg) = if k.is_multiple_of(2) {
            let victim = NodeId(self.scenario.n as u32 + (k / 2 % self.scenario.clients as u64) as u32);
            let tx = adversary::forge_tx(&signer, victim, k, now);
            ("tx", tx.id, Message::ClientTx(tx))
        } else {
            let msg = self.replicas[node.index()].forged_block(&signer, k);
            let id = match &msg {
                Message::Aura(crate::aura::AuraMsg::Proposal(b))
                | Message::Clique(crate::clique::CliqueMsg::Block(b))
                | Message::Pbft(crate::pbft::PbftMsg::PrePrepare { block: b, .. }) => b.id,
                _ => Digest::ZERO,
            };
            ("block", id, msg)
        };
        self.trace.push(TraceRecord::Forged { t: now, node, what: what.into(), id });
        self.fabric.rb_broadcast(node, &targets, msg);
    }

    fn event_digest(kind: &EventKind<Message, Timer>) -> Digest {
        match kind {
            EventKind::MessageDelivery { msg, .. } => msg.digest(),
            EventKind::TimerFire { timer, .. } => timer.digest(),
            EventKind::ClientSubmit { client } => Digest::of(&client.0.to_be_bytes()),
            EventKind::PartitionChange { index, starting } => {
                let mut e = Encoder::new();
                e.u64(*index as u64).u8(*starting as u8);
                Digest::of(&e.finish())
            }
        }
    }

    pub fn run(mut self) -> (Trace, RunStats) {
        for m in self.miners.clone() {
            self.with_ctx(m, |r, ctx| r.start(ctx));
        }
        let interval = self.scenario.workload.interval();
        let nclients = self.clients.len() as u64;
        for (i, c) in self.scenario.client_ids().into_iter().enumerate() {
            self.fabric.schedule_submit(c, 1 + i as u64 * interval / nclients);
        }
        for f in &self.forgers {
            self.fabric.set_timer_after(f.node, f.interval, Timer::Forge);
        }
        let n = self.scenario.n;
        while let Some(ev) = self.fabric.pop() {
            if ev.due > self.scenario.duration_ticks {
                break;
            }
            self.stats.events += 1;
            let (from, to) = match &ev.kind {
                EventKind::MessageDelivery { from, to, .. } => (Some(*from), Some(*to)),
                EventKind::TimerFire { node, .. } => (Some(*node), Some(*node)),
                EventKind::ClientSubmit { client } => (Some(*client), None),
                EventKind::PartitionChange { .. } => (None, None),
            };
            self.trace.push(TraceRecord::Event {
                t: ev.due,
                seq: ev.seq,
                ev: ev.kind.label().to_string(),
                from,
                to,
                digest: Self::event_digest(&ev.kind),
            });
            match ev.kind {
                EventKind::MessageDelivery { from, to, msg } => {
                    if to.index() < n {
                        self.with_ctx(to, |r, ctx| r.on_message(ctx, from, msg));
                    } else if matches!(msg, Message::TxRefused(_)) {
                        self.clients[to.index() - n].refused += 1;
                        self.stats.refused_at_client += 1;
                    }
                }
                EventKind::TimerFire { node, timer: Timer::Forge } => self.forge(node),
                EventKind::TimerFire { node, timer } => self.with_ctx(node, |r, ctx| r.on_timer(ctx, timer)),
                EventKind::ClientSubmit { client } => self.submit(client),
                EventKind::PartitionChange { .. } => {}
            }
        }
        self.stats.messages_sent = self.fabric.messages_sent();
        self.stats.messages_held_forever = self.fabric.messages_held_forever();
        (Trace { records: self.trace }, self.stats)
    }
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: Trace,
    pub verdict: RunVerdict,
    pub metrics: MetricsReport,
    pub stats: RunStats,
}

pub fn simulate(scenario: &Scenario) -> (Trace, RunStats) {
    Simulation::new(scenario).run()
}

pub fn run(scenario: &Scenario) -> RunOutcome {
    let (trace, stats) = simulate(scenario);
    let verdict = analysis::evaluate(&trace);
    let metrics = compute_metrics(&trace);
    RunOutcome { trace, verdict, metrics, stats }
}
