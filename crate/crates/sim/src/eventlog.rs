//! Ordered record of everything a run did, exported as NDJSON.

use ckalab_core::baseline::{MsgKind, TraceFlag};
use ckalab_core::SimTime;
use serde::Serialize;

pub const EVENTLOG_SCHEMA: &str = "ckalab-eventlog/v1";

/// What a bundle carries, by leading payload byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Data,
    Commit,
    Welcome,
    Directory,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    ContactOpen {
        from: String,
        to: String,
    },
    ContactClose {
        from: String,
        to: String,
    },
    Created {
        bundle: u64,
        src: String,
        dst: String,
        kind: PayloadKind,
        bytes: u64,
    },
    Depart {
        bundle: u64,
        from: String,
        to: String,
        bytes: u64,
    },
    Lost {
        bundle: u64,
        from: String,
        to: String,
    },
    Arrive {
        bundle: u64,
        node: String,
    },
    Delivered {
        bundle: u64,
        node: String,
    },
    Expired {
        bundle: u64,
        node: String,
    },
    DroppedNoRoute {
        bundle: u64,
        node: String,
    },
    DroppedCapacity {
        bundle: u64,
        node: String,
    },
    Commit {
        node: String,
        epoch: u64,
        path_ciphertexts: u64,
        joiners: u64,
        bytes: u64,
    },
    CommitApplied {
        node: String,
        epoch: u64,
    },
    CommitDiscarded {
        node: String,
        commit_epoch: u64,
        local_epoch: u64,
        reason: String,
    },
    Joined {
        node: String,
        epoch: u64,
    },
    RemovedFromGroup {
        node: String,
    },
    OpSkipped {
        node: String,
        reason: String,
    },
    DirectoryFetch {
        node: String,
        name: String,
    },
    DirectoryResponse {
        node: String,
        name: String,
        found: bool,
    },
    ReEncrypted {
        bundle: u64,
        node: String,
        epoch: u64,
    },
    Decrypted {
        bundle: u64,
        node: String,
        flow: u32,
        seq: u32,
        epoch: u64,
    },
    Undecryptable {
        bundle: u64,
        node: String,
        reason: String,
    },
    Handshake {
        from: String,
        to: String,
        msg: MsgKind,
        bytes: u64,
        flag: TraceFlag,
    },
    HandshakeDone {
        client: String,
        server: String,
        round_trips: u32,
    },
    HandshakeIncomplete {
        client: String,
        server: String,
        wasted_bytes: u64,
    },
    Compromise {
        node: String,
        captured_bytes: u64,
    },
}

#[derive(Serialize)]
struct Header<'a> {
    scenario: &'a str,
    rng_seed: u64,
    schema: &'a str,
}

#[derive(Serialize)]
struct Row<'a> {
    t_us: u64,
    #[serde(flatten)]
    event: &'a Event,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    pub scenario: String,
    pub rng_seed: u64,
    rows: Vec<(SimTime, Event)>,
}

impl EventLog {
    pub fn new(scenario: &str, rng_seed: u64) -> Self {
        EventLog {
            scenario: scenario.to_owned(),
            rng_seed,
            rows: Vec::new(),
        }
    }

    /// Appends a row. Times must not decrease.
    pub fn push(&mut self, t: SimTime, event: Event) {
        debug_assert!(self.rows.last().is_none_or(|(last, _)| *last <= t));
        self.rows.push((t, event));
    }

    pub fn rows(&self) -> &[(SimTime, Event)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Header line then one JSON object per row.
    pub fn to_ndjson(&self) -> String {
        let mut out = serde_json::to_string(&Header {
            scenario: &self.scenario,
            rng_seed: self.rng_seed,
            schema: EVENTLOG_SCHEMA,
        })
        .expect("header serialises");
        out.push('\n');
        for (t, event) in &self.rows {
            out.push_str(&serde_json::to_string(&Row { t_us: t.0, event }).expect("row serialises"));
            out.push('\n');
        }
        out
    }
}
