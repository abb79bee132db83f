//! Golden fixtures: key schedule, block keys, bundle encodings and a seeded
//! group run. Every file is regenerated from code and compared byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ckalab_core::bpsec::{self, keys_from_secret, Purpose, SecurityParameters, StaticPsk};
use ckalab_core::bundle::{self, create_bundle, Bundle, EndpointId};
use ckalab_core::cka::{key_schedule, GroupState, LeafIndex, PreKeyBundle, SigningIdentity};
use ckalab_core::crypto::{CipherSuiteProfile, Secret};
use ckalab_core::SimTime;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("fixture directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mismatch {
    Missing(String),
    Differs(String),
}

impl Mismatch {
    pub fn file(&self) -> &str {
        match self {
            Mismatch::Missing(f) | Mismatch::Differs(f) => f,
        }
    }
}

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mismatch::Missing(p) => write!(f, "{p}: missing"),
            Mismatch::Differs(p) => write!(f, "{p}: contents differ"),
        }
    }
}

fn pretty(v: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("fixture serialises");
    s.push('\n');
    s.into_bytes()
}

fn pattern(f: impl Fn(u8) -> u8) -> Secret {
    std::array::from_fn(|i| f(i as u8))
}

fn key_schedule_cases() -> Value {
    let inputs: [(&str, Secret, Secret, Secret); 3] = [
        ("all_zero", [0; 32], [0; 32], [0; 32]),
        ("all_ones", [1; 32], [1; 32], [1; 32]),
        ("counting", pattern(|i| i), pattern(|i| i + 32), pattern(|i| i + 64)),
    ];
    let cases: Vec<Value> = inputs
        .iter()
        .map(|(id, init, commit, gc)| {
            let joiner = key_schedule::joiner_secret(init, commit).expect("32-byte inputs");
            let k = key_schedule::derive_epoch(init, commit, gc).expect("32-byte inputs");
            let exports: Vec<Value> = [("bpsec", &b""[..], 32usize), ("quic", &b"client"[..], 48)]
                .iter()
                .map(|(label, ctx, len)| {
                    let out = key_schedule::export(&k.exporter_secret, label, ctx, *len).expect("valid length");
                    json!({"label": label, "context": hex::encode(ctx), "length": len, "output": hex::encode(out)})
                })
                .collect();
            json!({
                "id": id,
                "prev_init_secret": hex::encode(init),
                "commit_secret": hex::encode(commit),
                "group_context_hash": hex::encode(gc),
                "joiner_secret": hex::encode(joiner),
                "epoch_secret": hex::encode(k.epoch_secret),
                "init_secret": hex::encode(k.init_secret),
                "exporter_secret": hex::encode(k.exporter_secret),
                "confirmation_key": hex::encode(k.confirmation_key),
                "exports": exports,
            })
        })
        .collect();
    json!({ "cases": cases })
}

fn params(group_id: &[u8], epoch: u64, leaf: u32, seed: [u8; 8]) -> SecurityParameters {
    SecurityParameters {
        group_id: group_id.to_vec(),
        epoch,
        sender_leaf: LeafIndex(leaf),
        nonce_seed: seed,
    }
}

fn block_key_cases() -> Value {
    let inputs = [
        ("zero", [0u8; 32], params(b"g", 0, 0, [0; 8])),
        (
            "group",
            pattern(|i| 0xa0 ^ i),
            params(b"dtn-group", 7, 3, *b"\x00\x00\x00\x00\x00\x00\x00\x2a"),
        ),
    ];
    let cases: Vec<Value> = inputs
        .iter()
        .map(|(id, secret, p)| {
            let bcb = keys_from_secret(secret, p, Purpose::Bcb);
            let bib = keys_from_secret(secret, p, Purpose::Bib);
            json!({
                "id": id,
                "secret": hex::encode(secret),
                "group_id": hex::encode(&p.group_id),
                "epoch": p.epoch,
                "sender_leaf": p.sender_leaf.0,
                "nonce_seed": hex::encode(p.nonce_seed),
                "encoded_parameters": hex::encode(p.encode()),
                "bcb_key": hex::encode(bcb.key),
                "bcb_iv_base": hex::encode(bcb.iv_base),
                "bcb_payload_nonce": hex::encode(bcb.nonce(bundle::PAYLOAD_BLOCK_NUMBER)),
                "bib_key": hex::encode(bib.key),
            })
        })
        .collect();
    json!({ "cases": cases })
}

fn sample_bundles() -> Vec<(&'static str, Bundle)> {
    let node = |n: &str| EndpointId::node(n).expect("valid name");
    let plain = create_bundle(
        node("earth"),
        node("mars"),
        b"hello, dtn",
        SimTime::from_secs(3600),
        SimTime::ZERO,
        0,
    )
    .expect("valid bundle");
    let aged = bundle::process_at_hop(plain.clone(), SimTime::from_millis(1500)).expect("within lifetime");
    let psk = StaticPsk {
        key_id: b"vectors".to_vec(),
        secret: [0x42; 32],
    };
    let p = params(b"vectors", 0, 0, [0, 0, 0, 0, 0, 0, 0, 1]);
    let bcb = bpsec::apply_bcb(plain.clone(), &psk, bundle::PAYLOAD_BLOCK_NUMBER, &p).expect("payload is a target");
    let bib = bpsec::apply_bib(plain.clone(), &psk, bundle::PAYLOAD_BLOCK_NUMBER, &p).expect("payload is a target");
    let empty = create_bundle(
        node("a"),
        node("b"),
        b"",
        SimTime::from_micros(1),
        SimTime::from_secs(42),
        9,
    )
    .expect("valid bundle");
    vec![
        ("plain", plain),
        ("aged", aged),
        ("bcb_psk", bcb),
        ("bib_psk", bib),
        ("empty_payload", empty),
    ]
}

/// Creator adds two members, one of them updates, creator commits empty.
fn group_run() -> Value {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let suite = CipherSuiteProfile::X25519_CHACHA20POLY1305_SHA256_ED25519;
    let signer = |name: &str, rng: &mut ChaCha20Rng| SigningIdentity::generate(name, rng).expect("valid name");
    let creator = signer("alice", &mut rng);
    let mut alice = GroupState::create(creator, suite, b"vectors", &mut rng).expect("valid group");
    let (bb, bp) = PreKeyBundle::generate(&signer("bob", &mut rng), suite, &mut rng);
    let (cb, cp) = PreKeyBundle::generate(&signer("carol", &mut rng), suite, &mut rng);
    let mut epochs = vec![json!({"epoch": 0, "committer": "alice", "path_ciphertexts": 0,
        "exporter_secret": hex::encode(*alice.exporter_for_epoch(0).expect("current epoch"))})];
    let out = alice
        .commit(&[alice.propose_add(bb), alice.propose_add(cb)], &mut rng)
        .expect("valid commit");
    let welcome = out.welcome.expect("adds produce a welcome");
    alice = out.state.expect("creator stays");
    let mut bob = GroupState::join(&bp, &welcome).expect("bob joins");
    let mut carol = GroupState::join(&cp, &welcome).expect("carol joins");
    let mut record = |s: &GroupState, who: &str, cts: usize| {
        epochs.push(json!({"epoch": s.epoch(), "committer": who, "path_ciphertexts": cts,
            "exporter_secret": hex::encode(*s.exporter_for_epoch(s.epoch()).expect("current epoch"))}));
    };
    record(&alice, "alice", out.commit.path_ciphertext_count());
    let out = bob.commit(&[], &mut rng).expect("valid commit");
    bob = out.state.expect("bob stays");
    alice = alice.process_commit(&out.commit).expect("alice follows");
    carol = carol.process_commit(&out.commit).expect("carol follows");
    record(&bob, "bob", out.commit.path_ciphertext_count());
    let out = alice.commit(&[], &mut rng).expect("valid commit");
    alice = out.state.expect("alice stays");
    bob = bob.process_commit(&out.commit).expect("bob follows");
    carol = carol.process_commit(&out.commit).expect("carol follows");
    record(&alice, "alice", out.commit.path_ciphertext_count());
    for s in [&bob, &carol] {
        assert_eq!(
            s.exporter_for_epoch(s.epoch()).ok(),
            alice.exporter_for_epoch(alice.epoch()).ok()
        );
    }
    json!({"rng": "chacha20", "seed": 0, "group_id": hex::encode(b"vectors"), "epochs": epochs})
}

/// Every fixture keyed by its path relative to the fixture directory.
pub fn fixtures() -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    out.insert("key_schedule.json".into(), pretty(&key_schedule_cases()));
    out.insert("block_keys.json".into(), pretty(&block_key_cases()));
    out.insert("group_run.json".into(), pretty(&group_run()));
    for (id, b) in sample_bundles() {
        out.insert(format!("bundles/{id}.bin"), b.encode());
        out.insert(format!("bundles/{id}.json"), pretty(&b));
    }
    out
}

/// Compares `dir` against freshly derived fixtures.
pub fn check(dir: &Path) -> Result<Vec<Mismatch>, VectorError> {
    if !dir.is_dir() {
        return Err(VectorError::MissingDir(dir.to_owned()));
    }
    let mut bad = Vec::new();
    for (name, expected) in fixtures() {
        let path = dir.join(&name);
        match fs::read(&path) {
            Ok(got) if got == expected => {}
            Ok(_) => bad.push(Mismatch::Differs(name)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => bad.push(Mismatch::Missing(name)),
            Err(source) => return Err(VectorError::Io { path, source }),
        }
    }
    Ok(bad)
}

pub fn write(dir: &Path) -> Result<usize, VectorError> {
    let all = fixtures();
    for (name, bytes) in &all {
        let path = dir.join(name);
        let io_err = |source| VectorError::Io {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
        fs::write(&path, bytes).map_err(io_err)?;
    }
    Ok(all.len())
}
