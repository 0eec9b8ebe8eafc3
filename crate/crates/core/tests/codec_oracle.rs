//! Canonical encoding checked against a byte-by-byte reference writer.

use poasim_core::codec::{canonical_serialize, transaction_bytes, Canonical};
use poasim_core::types::{Block, Digest, NodeId, Signature, Transaction, Vote, VoteKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    for shift in [24, 16, 8, 0] {
        out.push((v >> shift) as u8);
    }
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    for shift in (0..8).rev() {
        out.push((v >> (shift * 8)) as u8);
    }
}

fn reference_tx(out: &mut Vec<u8>, tx: &Transaction) {
    out.extend(tx.id.0);
    push_u32(out, tx.client.0);
    push_u32(out, tx.payload.len() as u32);
    out.extend(&tx.payload);
    push_u64(out, tx.nonce);
    push_u32(out, tx.signature.author.0);
    out.extend(tx.signature.token.0);
    push_u64(out, tx.submit_time);
}

fn reference_block(b: &Block) -> Vec<u8> {
    let mut out = Vec::new();
    push_u64(&mut out, b.height);
    out.extend(b.parent.0);
    push_u32(&mut out, b.author.0);
    push_u64(&mut out, b.step_or_view);
    push_u32(&mut out, b.txs.len() as u32);
    for tx in &b.txs {
        reference_tx(&mut out, tx);
    }
    match &b.vote {
        None => out.push(0),
        Some(v) => {
            out.push(1);
            push_u32(&mut out, v.target.0);
            out.push(0);
        }
    }
    match &b.epoch_snapshot {
        None => out.push(0),
        Some(list) => {
            out.push(1);
            push_u32(&mut out, list.len() as u32);
            for n in list {
                push_u32(&mut out, n.0);
            }
        }
    }
    push_u32(&mut out, b.signature.author.0);
    out.extend(b.signature.token.0);
    out.extend(b.id.0);
    out
}

fn digest(rng: &mut ChaCha8Rng) -> Digest {
    Digest(rng.gen())
}

fn random_tx(rng: &mut ChaCha8Rng) -> Transaction {
    let len = rng.gen_range(0..40);
    Transaction {
        id: digest(rng),
        client: NodeId(rng.gen()),
        payload: (0..len).map(|_| rng.gen()).collect(),
        nonce: rng.gen(),
        signature: Signature { author: NodeId(rng.gen()), token: digest(rng) },
        submit_time: rng.gen(),
    }
}

fn random_block(rng: &mut ChaCha8Rng) -> Block {
    let ntx = rng.gen_range(0..6);
    Block {
        height: rng.gen(),
        parent: digest(rng),
        author: NodeId(rng.gen()),
        step_or_view: rng.gen(),
        txs: (0..ntx).map(|_| random_tx(rng)).collect(),
        vote: rng.gen_bool(0.3).then(|| Vote { target: NodeId(rng.gen()), kind: VoteKind::Remove }),
        epoch_snapshot: rng.gen_bool(0.3).then(|| (0..rng.gen_range(0..8)).map(|_| NodeId(rng.gen())).collect()),
        signature: Signature { author: NodeId(rng.gen()), token: digest(rng) },
        id: digest(rng),
    }
}

#[test]
fn hundred_random_blocks_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB10C);
    for i in 0..100 {
        let b = random_block(&mut rng);
        assert_eq!(canonical_serialize(Canonical::Block(&b)), reference_block(&b), "block {i}");
        for tx in &b.txs {
            let mut want = Vec::new();
            reference_tx(&mut want, tx);
            assert_eq!(transaction_bytes(tx), want);
            assert_eq!(canonical_serialize(Canonical::Transaction(tx)), want);
        }
    }
}

#[test]
fn block_id_is_hash_of_everything_before_it() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let b = random_block(&mut rng);
        let full = reference_block(&b);
        let prefix = &full[..full.len() - 32];
        assert_eq!(b.compute_id(), Digest::of(prefix));
    }
}
