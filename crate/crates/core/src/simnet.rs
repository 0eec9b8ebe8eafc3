//! Deterministic discrete-event network fabric.
//!
//! Time is integer ticks (1 tick = 1 ms). Events pop in `(due, seq)` order.
//! Links are perfect: a message is never dropped or duplicated. Before GST
//! and across partitions delivery is delayed, never lost; with `gst = None`
//! and the `hold` policy it is held past any horizon.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::NodeId;

pub type SimTime = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PreGstPolicy {
    /// Uniform delay in `[d_min, cap]`.
    Uniform { cap: u64 },
    /// Held until GST, then delivered under the post-GST bound.
    Hold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayModel {
    pub d_min: u64,
    /// Post-GST delay bound.
    pub d_max: u64,
    /// `None` means GST never arrives.
    pub gst: Option<u64>,
    pub pre_gst: PreGstPolicy,
}

impl DelayModel {
    pub fn synchronous(d_min: u64, d_max: u64) -> Self {
        Self { d_min, d_max, gst: Some(0), pre_gst: PreGstPolicy::Hold }
    }

    /// Delivery time for a message sent at `sent`, or `None` if it is held
    /// forever.
    pub fn delivery_time(&self, sent: SimTime, rng: &mut impl Rng) -> Option<SimTime> {
        let post = |rng: &mut dyn rand::RngCore, from: SimTime| {
            from + rng.gen_range(self.d_min..=self.d_max.max(self.d_min))
        };
        match self.gst {
            Some(gst) if sent >= gst => Some(post(rng, sent)),
            gst => match self.pre_gst {
                PreGstPolicy::Uniform { cap } => {
                    let due = sent + rng.gen_range(self.d_min..=cap.max(self.d_min));
                    // anything still in flight at GST lands within the bound
                    Some(match gst {
                        Some(g) => due.min(g + self.d_max.max(self.d_min)),
                        None => due,
                    })
                }
                PreGstPolicy::Hold => gst.map(|g| post(rng, g)),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionInterval {
    pub start: SimTime,
    pub end: SimTime,
    pub groups: Vec<Vec<NodeId>>,
}

impl PartitionInterval {
    fn group_of(&self, node: NodeId) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&node))
    }

    /// Nodes listed in different groups cannot talk. Unlisted nodes reach
    /// everyone.
    pub fn separates(&self, a: NodeId, b: NodeId) -> bool {
        match (self.group_of(a), self.group_of(b)) {
            (Some(x), Some(y)) => x != y,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartitionSchedule {
    pub intervals: Vec<PartitionInterval>,
}

impl PartitionSchedule {
    /// End of the latest interval active at `t` that separates `a` and `b`.
    pub fn held_until(&self, a: NodeId, b: NodeId, t: SimTime) -> Option<SimTime> {
        self.intervals
            .iter()
            .filter(|iv| iv.start <= t && t < iv.end && iv.separates(a, b))
            .map(|iv| iv.end)
            .max()
    }

    /// Groups must be pairwise disjoint within each interval.
    pub fn validate(&self) -> Result<(), String> {
        for (i, iv) in self.intervals.iter().enumerate() {
            if iv.end <= iv.start {
                return Err(format!("partition {i}: end must be after start"));
            }
            let mut seen = std::collections::BTreeSet::new();
            for n in iv.groups.iter().flatten() {
                if !seen.insert(*n) {
                    return Err(format!("partition {i}: {n} appears in two groups"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClockSkewMap {
    pub offset: BTreeMap<NodeId, i64>,
}

impl ClockSkewMap {
    pub fn offset(&self, node: NodeId) -> i64 {
        self.offset.get(&node).copied().unwrap_or(0)
    }

    /// Global time plus the node's offset, floored at zero.
    pub fn local_time(&self, node: NodeId, global: SimTime) -> SimTime {
        (global as i64 + self.offset(node)).max(0) as SimTime
    }

    /// Earliest global time at which the node's clock reads `local`.
    pub fn global_for_local(&self, node: NodeId, local: SimTime) -> SimTime {
        (local as i64 - self.offset(node)).max(0) as SimTime
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind<M, T> {
    MessageDelivery { from: NodeId, to: NodeId, msg: M },
    TimerFire { node: NodeId, timer: T },
    ClientSubmit { client: NodeId },
    PartitionChange { index: usize, starting: bool },
}

impl<M, T> EventKind<M, T> {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::MessageDelivery { .. } => "deliver",
            EventKind::TimerFire { .. } => "timer",
            EventKind::ClientSubmit { .. } => "submit",
            EventKind::PartitionChange { .. } => "partition",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent<M, T> {
    pub due: SimTime,
    pub seq: u64,
    pub kind: EventKind<M, T>,
}

impl<M, T> PartialEq for Keyed<M, T> {
    fn eq(&self, other: &Self) -> bool {
        self.0.due == other.0.due && self.0.seq == other.0.seq
    }
}
impl<M, T> Eq for Keyed<M, T> {}
impl<M, T> PartialOrd for Keyed<M, T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M, T> Ord for Keyed<M, T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (due, seq)
        (other.0.due, other.0.seq).cmp(&(self.0.due, self.0.seq))
    }
}

struct Keyed<M, T>(SimEvent<M, T>);

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("event scheduled at {due} but the clock is already at {now}")]
pub struct ScheduleInPast {
    pub due: SimTime,
    pub now: SimTime,
}

/// Priority queue of events with a deterministic tie-break.
pub struct EventQueue<M, T> {
    heap: BinaryHeap<Keyed<M, T>>,
    next_seq: u64,
    now: SimTime,
}

impl<M, T> Default for EventQueue<M, T> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), next_seq: 0, now: 0 }
    }
}

impl<M, T> EventQueue<M, T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, due: SimTime, kind: EventKind<M, T>) -> Result<u64, ScheduleInPast> {
        if due < self.now {
            return Err(ScheduleInPast { due, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Keyed(SimEvent { due, seq, kind }));
        Ok(seq)
    }

    pub fn peek_due(&self) -> Option<SimTime> {
        self.heap.peek().map(|k| k.0.due)
    }

    pub fn pop(&mut self) -> Option<SimEvent<M, T>> {
        let ev = self.heap.pop()?.0;
        self.now = ev.due;
        Some(ev)
    }
}

/// Links, timers and clocks for one run.
pub struct Fabric<M, T> {
    pub queue: EventQueue<M, T>,
    pub delay: DelayModel,
    pub partitions: PartitionSchedule,
    pub skew: ClockSkewMap,
    rng: ChaCha8Rng,
    sent: u64,
    held_forever: u64,
}

impl<M: Clone, T> Fabric<M, T> {
    pub fn new(seed: u64, delay: DelayModel, partitions: PartitionSchedule, skew: ClockSkewMap) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let mut queue = EventQueue::new();
        for (index, iv) in partitions.intervals.iter().enumerate() {
            queue
                .schedule(iv.start, EventKind::PartitionChange { index, starting: true })
                .expect("queue starts at zero");
            queue
                .schedule(iv.end, EventKind::PartitionChange { index, starting: false })
                .expect("queue starts at zero");
        }
        Self { queue, delay, partitions, skew, rng, sent: 0, held_forever: 0 }
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn local_time(&self, node: NodeId) -> SimTime {
        self.skew.local_time(node, self.now())
    }

    pub fn messages_sent(&self) -> u64 {
        self.sent
    }

    pub fn messages_held_forever(&self) -> u64 {
        self.held_forever
    }

    fn route(&mut self, from: NodeId, to: NodeId) -> Option<SimTime> {
        let now = self.now();
        if from == to {
            return Some(now);
        }
        let due = self.delay.delivery_time(now, &mut self.rng)?;
        match self.partitions.held_until(from, to, now) {
            Some(end) => {
                let healed = self.delay.delivery_time(end, &mut self.rng)?;
                Some(due.max(healed))
            }
            None => Some(due),
        }
    }

    /// Perfect point-to-point link.
    pub fn pl_send(&mut self, from: NodeId, to: NodeId, msg: M) {
        self.sent += 1;
        match self.route(from, to) {
            Some(due) => {
                self.queue
                    .schedule(due, EventKind::MessageDelivery { from, to, msg })
                    .expect("delivery is never in the past");
            }
            None => self.held_forever += 1,
        }
    }

    /// Reliable broadcast to `recipients` (the sender included if listed).
    pub fn rb_broadcast(&mut self, from: NodeId, recipients: &[NodeId], msg: M) {
        for to in recipients {
            self.pl_send(from, *to, msg.clone());
        }
    }

    /// Timer that fires when the node's local clock reads `local_due`.
    pub fn set_local_timer(&mut self, node: NodeId, local_due: SimTime, timer: T) {
        let due = self.skew.global_for_local(node, local_due).max(self.now());
        self.queue
            .schedule(due, EventKind::TimerFire { node, timer })
            .expect("clamped to now");
    }

    pub fn set_timer_after(&mut self, node: NodeId, after: u64, timer: T) {
        let due = self.now() + after;
        self.queue
            .schedule(due, EventKind::TimerFire { node, timer })
            .expect("future");
    }

    pub fn schedule_submit(&mut self, client: NodeId, at: SimTime) {
        let due = at.max(self.now());
        self.queue
            .schedule(due, EventKind::ClientSubmit { client })
            .expect("clamped to now");
    }

    pub fn pop(&mut self) -> Option<SimEvent<M, T>> {
        self.queue.pop()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Q = EventQueue<u32, ()>;

    fn submit(n: u32) -> EventKind<u32, ()> {
        EventKind::ClientSubmit { client: NodeId(n) }
    }

    #[test]
    fn ties_break_by_seq() {
        let mut q = Q::new();
        q.schedule(10, submit(0)).unwrap();
        q.schedule(5, submit(1)).unwrap();
        q.schedule(10, submit(2)).unwrap();
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| (e.due, e.seq)).collect();
        assert_eq!(order, vec![(5, 1), (10, 0), (10, 2)]);
        assert!(q.pop().is_none());
    }

    #[test]
    fn scheduling_in_past_is_refused() {
        let mut q = Q::new();
        q.schedule(10, submit(0)).unwrap();
        q.pop();
        assert_eq!(q.schedule(3, submit(0)), Err(ScheduleInPast { due: 3, now: 10 }));
    }

    fn fabric(delay: DelayModel, partitions: PartitionSchedule) -> Fabric<u32, ()> {
        Fabric::new(1, delay, partitions, ClockSkewMap::default())
    }

    #[test]
    fn fixed_delay_delivery() {
        let mut f = fabric(DelayModel::synchronous(5, 5), PartitionSchedule::default());
        f.pl_send(NodeId(0), NodeId(1), 42);
        let ev = f.pop().unwrap();
        assert_eq!(ev.due, 5);
        assert_eq!(ev.kind, EventKind::MessageDelivery { from: NodeId(0), to: NodeId(1), msg: 42 });
    }

    #[test]
    fn partition_holds_until_end() {
        let parts = PartitionSchedule {
            intervals: vec![PartitionInterval {
                start: 0,
                end: 100,
                groups: vec![vec![NodeId(0)], vec![NodeId(1)]],
            }],
        };
        let mut f = fabric(DelayModel::synchronous(1, 3), parts);
        while f.queue.peek_due() == Some(0) {
            f.pop();
        }
        f.set_timer_after(NodeId(0), 10, ());
        f.pop();
        f.pl_send(NodeId(0), NodeId(1), 7);
        let delivered = std::iter::from_fn(|| f.pop())
            .find(|e| matches!(e.kind, EventKind::MessageDelivery { .. }))
            .unwrap();
        assert!(delivered.due >= 100);
    }

    #[test]
    fn hold_without_gst_never_delivers() {
        let delay = DelayModel { d_min: 1, d_max: 5, gst: None, pre_gst: PreGstPolicy::Hold };
        let mut f = fabric(delay, PartitionSchedule::default());
        f.rb_broadcast(NodeId(0), &[NodeId(1), NodeId(2)], 1);
        assert!(f.pop().is_none());
        assert_eq!(f.messages_held_forever(), 2);
    }

    #[test]
    fn self_delivery_is_immediate() {
        let mut f = fabric(DelayModel::synchronous(5, 9), PartitionSchedule::default());
        f.rb_broadcast(NodeId(2), &[NodeId(2)], 1);
        assert_eq!(f.pop().unwrap().due, 0);
    }

    #[test]
    fn local_time_applies_offset() {
        let mut skew = ClockSkewMap::default();
        skew.offset.insert(NodeId(1), 400);
        skew.offset.insert(NodeId(2), -50);
        assert_eq!(skew.local_time(NodeId(0), 1000), 1000);
        assert_eq!(skew.local_time(NodeId(1), 1000), 1400);
        assert_eq!(skew.local_time(NodeId(2), 10), 0);
        assert_eq!(skew.global_for_local(NodeId(1), 2000), 1600);
    }

    #[test]
    fn replay_gives_identical_pop_order() {
        fn run(seed: u64) -> Vec<(SimTime, u64, u32)> {
            let delay = DelayModel {
                d_min: 1,
                d_max: 50,
                gst: Some(2_000),
                pre_gst: PreGstPolicy::Uniform { cap: 500 },
            };
            let mut f: Fabric<u32, ()> = Fabric::new(seed, delay, PartitionSchedule::default(), ClockSkewMap::default());
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead);
            for i in 0..10_000u32 {
                let from = NodeId(rng.gen_range(0..8));
                let to = NodeId(rng.gen_range(0..8));
                f.pl_send(from, to, i);
                if i % 97 == 0 {
                    f.pop();
                }
            }
            std::iter::from_fn(|| f.pop())
                .map(|e| match e.kind {
                    EventKind::MessageDelivery { msg, .. } => (e.due, e.seq, msg),
                    _ => unreachable!(),
                })
                .collect()
        }
        assert_eq!(run(99), run(99));
        assert_ne!(run(99), run(100));
    }
}
