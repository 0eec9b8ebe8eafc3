//! Identities, digests, simulated signatures, transactions and blocks.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::codec;

/// Position of a node in the sorted node list. Authorities occupy `0..N`,
/// clients follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Miner,
    Client,
    MinerClient,
}

impl Role {
    pub fn is_miner(self) -> bool {
        matches!(self, Role::Miner | Role::MinerClient)
    }

    pub fn is_client(self) -> bool {
        matches!(self, Role::Client | Role::MinerClient)
    }
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn of(bytes: &[u8]) -> Digest {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn of_parts(parts: &[&[u8]]) -> Digest {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update(part);
        }
        Digest(hasher.finalize().into())
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(Digest(out))
    }
}

/// Keyed-digest signature: `token = H(secret || payload_digest)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub author: NodeId,
    pub token: Digest,
}

impl Signature {
    pub const EMPTY: Signature = Signature { author: NodeId(0), token: Digest::ZERO };
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub id: Digest,
    pub client: NodeId,
    pub payload: Vec<u8>,
    pub nonce: u64,
    pub signature: Signature,
    pub submit_time: u64,
}

impl Transaction {
    /// `H(client || nonce || payload)`.
    pub fn compute_id(client: NodeId, nonce: u64, payload: &[u8]) -> Digest {
        Digest::of_parts(&[&client.0.to_be_bytes(), &nonce.to_be_bytes(), payload])
    }

    pub fn id_matches(&self) -> bool {
        self.id == Self::compute_id(self.client, self.nonce, &self.payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteKind {
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vote {
    pub target: NodeId,
    pub kind: VoteKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub parent: Digest,
    pub author: NodeId,
    pub step_or_view: u64,
    pub txs: Vec<Transaction>,
    pub vote: Option<Vote>,
    pub epoch_snapshot: Option<Vec<NodeId>>,
    pub signature: Signature,
    pub id: Digest,
}

impl Block {
    /// Height 0, all-zero parent, empty body. The authority list is carried
    /// as the first epoch snapshot.
    pub fn genesis(authorities: &[NodeId]) -> Block {
        let mut block = Block {
            height: 0,
            parent: Digest::ZERO,
            author: NodeId(0),
            step_or_view: 0,
            txs: Vec::new(),
            vote: None,
            epoch_snapshot: Some(authorities.to_vec()),
            signature: Signature::EMPTY,
            id: Digest::ZERO,
        };
        block.id = block.compute_id();
        block
    }

    pub fn is_genesis(&self) -> bool {
        self.height == 0 && self.parent == Digest::ZERO
    }

    /// Digest of every field that precedes the signature; this is what the
    /// author signs.
    pub fn signing_digest(&self) -> Digest {
        Digest::of(&codec::block_unsigned_bytes(self))
    }

    /// Digest over all fields that precede `id`, signature included.
    pub fn compute_id(&self) -> Digest {
        Digest::of(&codec::block_id_bytes(self))
    }

    pub fn id_matches(&self) -> bool {
        self.id == self.compute_id()
    }

    pub fn contains_tx(&self, id: &Digest) -> bool {
        self.txs.iter().any(|tx| &tx.id == id)
    }
}
