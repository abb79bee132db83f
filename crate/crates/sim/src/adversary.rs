//! A global passive eavesdropper that can also seize a node's key state.
//!
//! It records every protected bundle and every commit the first time each
//! leaves a node. At the end of a run it tries to open the recorded bundles
//! with whatever it captured.

use std::collections::BTreeSet;

use ckalab_core::bpsec::{keys_from_secret, Purpose, SecurityBlock};
use ckalab_core::bundle::{BlockType, Bundle};
use ckalab_core::cka::{CommitMessage, GroupState};
use ckalab_core::crypto::{self, Secret, SECRET_LEN};
use ckalab_core::SimTime;

/// Leading payload byte of a commit bundle.
pub const COMMIT_PAYLOAD: u8 = 0x20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaptureKind {
    /// An encoded CKA group state.
    CkaState,
    /// Traffic secrets and tickets of every session the node holds.
    Sessions,
    /// A static pre-shared key.
    Psk,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Capture {
    pub node: String,
    pub at: SimTime,
    pub kind: CaptureKind,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug)]
struct Observed {
    at: SimTime,
    bundle: Bundle,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SweepResult {
    pub past_bundles: u64,
    pub past_decrypted: u64,
    pub future_bundles: u64,
    pub future_decrypted: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Adversary {
    protected: Vec<Observed>,
    commits: Vec<(SimTime, Vec<u8>)>,
    seen_commits: BTreeSet<Vec<u8>>,
    captures: Vec<Capture>,
}

impl Adversary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a bundle seen on a link at `at`.
    pub fn observe(&mut self, at: SimTime, bundle: &Bundle) {
        if bundle.blocks.iter().any(|b| b.block_type == BlockType::Bcb) {
            self.protected.push(Observed {
                at,
                bundle: bundle.clone(),
            });
        } else if bundle.payload().first() == Some(&COMMIT_PAYLOAD) {
            let body = bundle.payload()[1..].to_vec();
            if self.seen_commits.insert(body.clone()) {
                self.commits.push((at, body));
            }
        }
    }

    pub fn capture(&mut self, capture: Capture) {
        self.captures.push(capture);
    }

    pub fn captures(&self) -> &[Capture] {
        &self.captures
    }

    pub fn protected_seen(&self) -> usize {
        self.protected.len()
    }

    /// Every secret the adversary can try: exporter secrets of captured
    /// states (rolled forward through commits seen after the capture) and
    /// every 32-byte window of the raw capture.
    pub fn candidate_secrets(&self) -> BTreeSet<Secret> {
        let mut out = BTreeSet::new();
        for cap in &self.captures {
            if cap.kind == CaptureKind::CkaState {
                if let Ok(state) = GroupState::decode(&cap.bytes) {
                    for s in self.roll_forward(state, cap.at) {
                        for e in 0..=s.epoch() {
                            if let Ok(x) = s.exporter_for_epoch(e) {
                                out.insert(*x);
                            }
                        }
                    }
                }
            }
            for w in cap.bytes.windows(SECRET_LEN) {
                out.insert(w.try_into().expect("window length"));
            }
        }
        out
    }

    fn roll_forward(&self, state: GroupState, from: SimTime) -> Vec<GroupState> {
        let commits: Vec<CommitMessage> = self
            .commits
            .iter()
            .filter(|(t, _)| *t >= from)
            .filter_map(|(_, b)| CommitMessage::decode(b).ok())
            .collect();
        let mut states = vec![state];
        loop {
            let cur = states.last().expect("non-empty");
            let next = commits
                .iter()
                .filter(|c| c.epoch == cur.epoch())
                .find_map(|c| cur.process_commit(c).ok());
            match next {
                Some(s) => states.push(s),
                None => return states,
            }
        }
    }

    /// Tries every candidate secret on every recorded bundle. Bundles seen
    /// before the first capture count as past, the rest as future.
    pub fn sweep(&self) -> SweepResult {
        let mut r = SweepResult::default();
        let Some(cut) = self.captures.iter().map(|c| c.at).min() else {
            return r;
        };
        let secrets = self.candidate_secrets();
        for obs in &self.protected {
            let opened = try_open(&obs.bundle, &secrets);
            if obs.at < cut {
                r.past_bundles += 1;
                r.past_decrypted += opened as u64;
            } else {
                r.future_bundles += 1;
                r.future_decrypted += opened as u64;
            }
        }
        r
    }
}

/// True if any secret opens the first BCB of `bundle`. Context ids are
/// ignored, so a secret is tried as both a group exporter and a static key.
pub fn try_open(bundle: &Bundle, secrets: &BTreeSet<Secret>) -> bool {
    let Some(bcb) = bundle.blocks.iter().find(|b| b.block_type == BlockType::Bcb) else {
        return false;
    };
    let Ok(sb) = SecurityBlock::decode(&bcb.body) else {
        return false;
    };
    let Some(target) = bundle.block(sb.target) else {
        return false;
    };
    let mut aad = bundle.primary.to_bytes();
    aad.extend_from_slice(&sb.parameters.encode());
    secrets.iter().any(|s| {
        let keys = keys_from_secret(s, &sb.parameters, Purpose::Bcb);
        let mut body = target.body.clone();
        crypto::aead_open_detached(&keys.key, &keys.nonce(sb.target), &aad, &mut body, &sb.result).is_ok()
    })
}
