//! NDJSON run trace: one header, one record per processed event, plus the
//! protocol observations the checkers consume.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::scenario::Protocol;
use crate::simnet::SimTime;
use crate::types::{Digest, NodeId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunHeader {
    pub scenario: String,
    pub protocol: Protocol,
    pub n: usize,
    pub clients: usize,
    pub seed: u64,
    pub duration: SimTime,
    /// No proposals or client submissions at or after this time.
    pub cutoff: SimTime,
    pub settle: SimTime,
    pub block_size: usize,
    pub d_min: u64,
    pub d_max: u64,
    pub gst: Option<SimTime>,
    pub byzantine: Vec<NodeId>,
    pub expected_interval: u64,
    pub adverse_start: SimTime,
    pub adverse_end: SimTime,
}

impl RunHeader {
    pub fn miners(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n as u32).map(NodeId)
    }

    pub fn correct_miners(&self) -> Vec<NodeId> {
        self.miners().filter(|m| !self.byzantine.contains(m)).collect()
    }

    /// `floor(N / 2)` over the initial authority set.
    pub fn k(&self) -> usize {
        self.n / 2
    }
}

/// Consensus message round labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Propose,
    Echo,
    Preprepare,
    Prepare,
    Commit,
    ViewChange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(RunHeader),
    Event {
        t: SimTime,
        seq: u64,
        ev: String,
        from: Option<NodeId>,
        to: Option<NodeId>,
        digest: Digest,
    },
    Send {
        t: SimTime,
        from: NodeId,
        phase: Phase,
        slot: u64,
        block: Option<Digest>,
    },
    Submit {
        t: SimTime,
        client: NodeId,
        tx: Digest,
        byzantine: bool,
    },
    Forged {
        t: SimTime,
        node: NodeId,
        what: String,
        id: Digest,
    },
    Commit {
        t: SimTime,
        node: NodeId,
        block: Digest,
        height: u64,
        author: NodeId,
        signing: Digest,
        token: Digest,
        txs: Vec<Digest>,
    },
    Revert {
        t: SimTime,
        node: NodeId,
        block: Digest,
        height: u64,
    },
    Vote {
        t: SimTime,
        voter: NodeId,
        target: NodeId,
        reason: String,
    },
    Removal {
        t: SimTime,
        node: NodeId,
        target: NodeId,
    },
    Refuse {
        t: SimTime,
        node: NodeId,
        block: Digest,
    },
    Reject {
        t: SimTime,
        node: NodeId,
        block: Option<Digest>,
        reason: String,
    },
    ViewChange {
        t: SimTime,
        node: NodeId,
        view: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("trace has no header record")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Block appended to or removed from one node's committed chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainOp {
    Append,
    Revert,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub t: SimTime,
    pub block: Digest,
    pub op: ChainOp,
}

impl Trace {
    pub fn header(&self) -> &RunHeader {
        match self.records.first() {
            Some(TraceRecord::Header(h)) => h,
            _ => panic!("trace must start with a header"),
        }
    }

    pub fn write_ndjson(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_ndjson(input: impl BufRead) -> Result<Trace, TraceError> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?;
            records.push(r);
        }
        if !matches!(records.first(), Some(TraceRecord::Header(_))) {
            return Err(TraceError::MissingHeader);
        }
        Ok(Trace { records })
    }

    /// SHA-256 over the NDJSON encoding.
    pub fn digest(&self) -> Digest {
        struct HashWriter(Sha256);
        impl Write for HashWriter {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.update(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let mut w = HashWriter(Sha256::new());
        self.write_ndjson(&mut w).expect("hashing cannot fail");
        Digest(w.0.finalize().into())
    }

    /// Append/revert log per correct miner.
    pub fn histories(&self) -> BTreeMap<NodeId, Vec<HistoryEntry>> {
        let correct: BTreeSet<NodeId> = self.header().correct_miners().into_iter().collect();
        let mut out: BTreeMap<NodeId, Vec<HistoryEntry>> =
            correct.iter().map(|n| (*n, Vec::new())).collect();
        for r in &self.records {
            match r {
                TraceRecord::Commit { t, node, block, .. } if correct.contains(node) => {
                    out.get_mut(node).unwrap().push(HistoryEntry { t: *t, block: *block, op: ChainOp::Append });
                }
                TraceRecord::Revert { t, node, block, .. } if correct.contains(node) => {
                    out.get_mut(node).unwrap().push(HistoryEntry { t: *t, block: *block, op: ChainOp::Revert });
                }
                _ => {}
            }
        }
        out
    }

    /// Per correct miner, blocks in first-append order (reverts ignored).
    pub fn append_orders(&self) -> BTreeMap<NodeId, Vec<Digest>> {
        self.histories()
            .into_iter()
            .map(|(node, h)| {
                let mut seen = BTreeSet::new();
                let order = h
                    .into_iter()
                    .filter(|e| e.op == ChainOp::Append)
                    .filter(|e| seen.insert(e.block))
                    .map(|e| e.block)
                    .collect();
                (node, order)
            })
            .collect()
    }

    /// Committed chain of every correct miner at the end of the run.
    pub fn final_chains(&self) -> BTreeMap<NodeId, Vec<Digest>> {
        self.histories()
            .into_iter()
            .map(|(node, h)| {
                let mut chain: Vec<Digest> = Vec::new();
                for e in h {
                    match e.op {
                        ChainOp::Append => chain.push(e.block),
                        ChainOp::Revert => {
                            if let Some(pos) = chain.iter().rposition(|b| *b == e.block) {
                                chain.remove(pos);
                            }
                        }
                    }
                }
                (node, chain)
            })
            .collect()
    }

    pub fn commits(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| matches!(r, TraceRecord::Commit { .. }))
    }

    pub fn count_reverts(&self) -> usize {
        let correct = self.header().correct_miners();
        self.records
            .iter()
            .filter(|r| matches!(r, TraceRecord::Revert { node, .. } if correct.contains(node)))
            .count()
    }
}
