//! Simulated authentication. Every node owns a secret derived from the run
//! seed; a signature token is `H(secret || payload_digest)`.
//!
//! Protocol machines only ever hold their own [`Signer`]. Verification goes
//! through [`KeyRegistry`], which never hands out secrets.

use std::sync::Arc;

use crate::types::{Digest, NodeId, Role, Signature};

pub fn derive_secret(seed: u64, node: NodeId) -> [u8; 32] {
    Digest::of_parts(&[b"poasim-secret", &seed.to_be_bytes(), &node.0.to_be_bytes()]).0
}

pub fn sign(secret: &[u8; 32], payload_digest: &Digest, author: NodeId) -> Signature {
    Signature { author, token: Digest::of_parts(&[secret, &payload_digest.0]) }
}

#[derive(Clone)]
pub struct Signer {
    node: NodeId,
    secret: [u8; 32],
}

impl Signer {
    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn sign(&self, payload_digest: &Digest) -> Signature {
        sign(&self.secret, payload_digest, self.node)
    }

    /// A token computed with this signer's secret but claiming `claimed`
    /// as author. Fails verification unless `claimed` is the signer.
    pub fn forge_as(&self, claimed: NodeId, payload_digest: &Digest) -> Signature {
        sign(&self.secret, payload_digest, claimed)
    }
}

impl std::fmt::Debug for Signer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Signer").field("node", &self.node).finish_non_exhaustive()
    }
}

/// Public verification state for a run: node roles plus secrets.
#[derive(Debug)]
pub struct KeyRegistry {
    roles: Vec<Role>,
    secrets: Vec<[u8; 32]>,
}

impl KeyRegistry {
    pub fn new(seed: u64, roles: Vec<Role>) -> Arc<Self> {
        let secrets = (0..roles.len() as u32).map(|i| derive_secret(seed, NodeId(i))).collect();
        Arc::new(Self { roles, secrets })
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn role(&self, node: NodeId) -> Option<Role> {
        self.roles.get(node.index()).copied()
    }

    pub fn is_client(&self, node: NodeId) -> bool {
        self.role(node).is_some_and(Role::is_client)
    }

    pub fn signer(&self, node: NodeId) -> Signer {
        Signer { node, secret: self.secrets[node.index()] }
    }

    pub fn verify(&self, signature: &Signature, payload_digest: &Digest) -> bool {
        match self.secrets.get(signature.author.index()) {
            Some(secret) => sign(secret, payload_digest, signature.author).token == signature.token,
            None => false,
        }
    }
}
