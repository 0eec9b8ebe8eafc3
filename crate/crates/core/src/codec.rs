//! Canonical byte encoding: fields in declaration order, big-endian
//! fixed-width integers, `u32` length prefixes on sequences, a `0`/`1` tag
//! byte in front of optional values.

use crate::types::{Block, Digest, NodeId, Signature, Transaction, Vote, VoteKind};

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn len(&mut self, n: usize) -> &mut Self {
        let n = u32::try_from(n).expect("sequence longer than u32::MAX");
        self.u32(n)
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.len(b.len());
        self.buf.extend_from_slice(b);
        self
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(&d.0);
        self
    }

    pub fn node(&mut self, n: NodeId) -> &mut Self {
        self.u32(n.0)
    }

    pub fn signature(&mut self, s: &Signature) -> &mut Self {
        self.node(s.author).digest(&s.token)
    }

    pub fn transaction(&mut self, tx: &Transaction) -> &mut Self {
        self.digest(&tx.id)
            .node(tx.client)
            .bytes(&tx.payload)
            .u64(tx.nonce)
            .signature(&tx.signature)
            .u64(tx.submit_time)
    }

    pub fn vote(&mut self, vote: &Option<Vote>) -> &mut Self {
        match vote {
            None => self.u8(0),
            Some(v) => {
                let kind = match v.kind {
                    VoteKind::Remove => 0u8,
                };
                self.u8(1).node(v.target).u8(kind)
            }
        }
    }

    fn block_header(&mut self, b: &Block) -> &mut Self {
        self.u64(b.height).digest(&b.parent).node(b.author).u64(b.step_or_view);
        self.len(b.txs.len());
        for tx in &b.txs {
            self.transaction(tx);
        }
        self.vote(&b.vote);
        match &b.epoch_snapshot {
            None => self.u8(0),
            Some(list) => {
                self.u8(1).len(list.len());
                for n in list {
                    self.node(*n);
                }
                self
            }
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Either value the canonical encoding is defined for.
pub enum Canonical<'a> {
    Transaction(&'a Transaction),
    Block(&'a Block),
}

pub fn canonical_serialize(value: Canonical<'_>) -> Vec<u8> {
    match value {
        Canonical::Transaction(tx) => transaction_bytes(tx),
        Canonical::Block(b) => block_bytes(b),
    }
}

pub fn transaction_bytes(tx: &Transaction) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.transaction(tx);
    enc.finish()
}

pub fn block_bytes(b: &Block) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.block_header(b).signature(&b.signature).digest(&b.id);
    enc.finish()
}

pub(crate) fn block_unsigned_bytes(b: &Block) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.block_header(b);
    enc.finish()
}

pub(crate) fn block_id_bytes(b: &Block) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.block_header(b).signature(&b.signature);
    enc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn genesis_prefix_is_zero_height_and_parent() {
        let g = Block::genesis(&[NodeId(0), NodeId(1)]);
        let bytes = block_bytes(&g);
        assert!(bytes[..40].iter().all(|b| *b == 0));
        // author 0, step 0, zero txs, no vote, snapshot of two
        assert_eq!(&bytes[40..44], &[0, 0, 0, 0]);
        assert_eq!(&bytes[52..56], &[0, 0, 0, 0]);
        assert_eq!(bytes[56], 0);
        assert_eq!(&bytes[57..62], &[1, 0, 0, 0, 2]);
    }

    #[test]
    fn serialization_is_deterministic() {
        let g = Block::genesis(&[NodeId(0), NodeId(1), NodeId(2)]);
        assert_eq!(block_bytes(&g), block_bytes(&g.clone()));
        assert_eq!(
            canonical_serialize(Canonical::Block(&g)),
            block_bytes(&g)
        );
    }
}
