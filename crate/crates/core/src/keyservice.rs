//! A single trusted directory of pre-key bundles.
//!
//! Requests and responses travel as bundle payloads starting with a 1-byte
//! opcode: `0x01` publish, `0x02` fetch, `0x03` response.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cka::PreKeyBundle;
use crate::codec::{DecodeError, DecodeErrorKind, Reader, Writer};
use crate::time::SimTime;

pub const OP_PUBLISH: u8 = 0x01;
pub const OP_FETCH: u8 = 0x02;
pub const OP_RESPONSE: u8 = 0x03;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyServiceError {
    #[error("pre-key bundle rejected: {0}")]
    RejectedBundle(&'static str),
    #[error("no record for {0:?}")]
    NotFound(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectoryRecord {
    pub identity_name: String,
    pub bundle: PreKeyBundle,
    pub published_at: SimTime,
}

impl DirectoryRecord {
    pub fn new(bundle: PreKeyBundle, published_at: SimTime) -> Self {
        DirectoryRecord {
            identity_name: bundle.identity.name.clone(),
            bundle,
            published_at,
        }
    }

    fn encode_into(&self, w: &mut Writer) {
        w.str(&self.identity_name).u64(self.published_at.as_micros());
        self.bundle.encode_into(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(DirectoryRecord {
            identity_name: r.string()?,
            published_at: SimTime(r.u64()?),
            bundle: PreKeyBundle::decode_from(r)?,
        })
    }
}

/// Outcome of a successful publish.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ack {
    Stored,
    /// A record with a later `published_at` is already held.
    Stale,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Directory {
    records: BTreeMap<String, DirectoryRecord>,
}

impl Directory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `record` unless a newer one exists. Ties go to the later call.
    pub fn publish(&mut self, record: DirectoryRecord) -> Result<Ack, KeyServiceError> {
        if record.identity_name != record.bundle.identity.name {
            return Err(KeyServiceError::RejectedBundle("name does not match bundle identity"));
        }
        record
            .bundle
            .verify()
            .map_err(|_| KeyServiceError::RejectedBundle("bad signature"))?;
        match self.records.get(&record.identity_name) {
            Some(held) if held.published_at > record.published_at => Ok(Ack::Stale),
            _ => {
                self.records.insert(record.identity_name.clone(), record);
                Ok(Ack::Stored)
            }
        }
    }

    pub fn fetch(&self, name: &str) -> Result<&PreKeyBundle, KeyServiceError> {
        self.records
            .get(name)
            .map(|r| &r.bundle)
            .filter(|b| b.verify().is_ok())
            .ok_or_else(|| KeyServiceError::NotFound(name.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Canonical encoding of every record, in name order.
    pub fn encode(&self) -> Vec<u8> {
        let records: Vec<_> = self.records.values().collect();
        let mut w = Writer::new();
        w.list(&records, |w, r| r.encode_into(w));
        w.finish()
    }

    /// Handles one request payload, returning the response payload if the
    /// request calls for one.
    pub fn handle(&mut self, request: &DirectoryMessage) -> Result<Option<DirectoryMessage>, KeyServiceError> {
        match request {
            DirectoryMessage::Publish(record) => self.publish(record.clone()).map(|_| None),
            DirectoryMessage::Fetch { name } => Ok(Some(DirectoryMessage::Response {
                name: name.clone(),
                bundle: self.fetch(name).ok().cloned(),
            })),
            DirectoryMessage::Response { .. } => Ok(None),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DirectoryMessage {
    Publish(DirectoryRecord),
    Fetch {
        name: String,
    },
    /// `bundle` is `None` when the name is unknown.
    Response {
        name: String,
        bundle: Option<PreKeyBundle>,
    },
}

impl DirectoryMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            DirectoryMessage::Publish(record) => {
                w.u8(OP_PUBLISH);
                record.encode_into(&mut w);
            }
            DirectoryMessage::Fetch { name } => {
                w.u8(OP_FETCH).str(name);
            }
            DirectoryMessage::Response { name, bundle } => {
                w.u8(OP_RESPONSE).str(name);
                w.optional(bundle.as_ref(), |w, b| b.encode_into(w));
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            OP_PUBLISH => DirectoryMessage::Publish(DirectoryRecord::decode_from(&mut r)?),
            OP_FETCH => DirectoryMessage::Fetch { name: r.string()? },
            OP_RESPONSE => DirectoryMessage::Response {
                name: r.string()?,
                bundle: r.optional(PreKeyBundle::decode_from)?,
            },
            op => return Err(r.err_at(0, DecodeErrorKind::BadTag(op))),
        };
        r.finish()?;
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::cka::SigningIdentity;
    use crate::crypto::CipherSuiteProfile;

    fn bundle(name: &str, seed: u64) -> PreKeyBundle {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let signer = SigningIdentity::generate(name, &mut rng).unwrap();
        PreKeyBundle::generate(&signer, CipherSuiteProfile::default(), &mut rng).0
    }

    #[test]
    fn publish_then_fetch_returns_same_bytes() {
        let mut d = Directory::new();
        let b = bundle("alice", 1);
        assert_eq!(
            d.publish(DirectoryRecord::new(b.clone(), SimTime::ZERO)).unwrap(),
            Ack::Stored
        );
        assert_eq!(d.fetch("alice").unwrap().encode(), b.encode());
    }

    #[test]
    fn corrupted_signature_is_rejected() {
        let mut d = Directory::new();
        let mut b = bundle("alice", 1);
        b.signature[5] ^= 1;
        let err = d.publish(DirectoryRecord::new(b, SimTime::ZERO)).unwrap_err();
        assert!(matches!(err, KeyServiceError::RejectedBundle(_)));
        assert!(d.is_empty());
    }

    #[test]
    fn renamed_record_is_rejected() {
        let mut d = Directory::new();
        let mut r = DirectoryRecord::new(bundle("alice", 1), SimTime::ZERO);
        r.identity_name = "mallory".into();
        assert!(d.publish(r).is_err());
    }

    #[test]
    fn last_writer_wins_by_time() {
        let mut d = Directory::new();
        let v1 = bundle("alice", 1);
        let v2 = bundle("alice", 2);
        d.publish(DirectoryRecord::new(v1.clone(), SimTime::from_secs(1)))
            .unwrap();
        d.publish(DirectoryRecord::new(v2.clone(), SimTime::from_secs(2)))
            .unwrap();
        assert_eq!(d.fetch("alice").unwrap(), &v2);
        let late = d.publish(DirectoryRecord::new(v1, SimTime::from_secs(1))).unwrap();
        assert_eq!(late, Ack::Stale);
        assert_eq!(d.fetch("alice").unwrap(), &v2);
    }

    #[test]
    fn unknown_name_is_not_found() {
        let d = Directory::new();
        assert_eq!(d.fetch("bob").unwrap_err(), KeyServiceError::NotFound("bob".into()));
    }

    #[test]
    fn state_is_a_function_of_the_publish_sequence() {
        let log: Vec<_> = (0..6)
            .map(|i| DirectoryRecord::new(bundle(["a", "b", "c"][i % 3], i as u64), SimTime::from_secs(i as u64)))
            .collect();
        let replay = |log: &[DirectoryRecord]| {
            let mut d = Directory::new();
            for r in log {
                d.publish(r.clone()).unwrap();
            }
            d.encode()
        };
        assert_eq!(replay(&log), replay(&log));
        assert_eq!(Directory::new().encode(), [0, 0, 0, 0]);
    }

    #[test]
    fn messages_round_trip_and_handle() {
        let mut d = Directory::new();
        let b = bundle("alice", 3);
        let publish = DirectoryMessage::Publish(DirectoryRecord::new(b.clone(), SimTime::from_secs(4)));
        let fetch = DirectoryMessage::Fetch { name: "alice".into() };
        for m in [&publish, &fetch] {
            let bytes = m.encode();
            assert_eq!(&DirectoryMessage::decode(&bytes).unwrap(), m);
        }
        assert_eq!(publish.encode()[0], OP_PUBLISH);
        assert_eq!(d.handle(&publish).unwrap(), None);
        let resp = d.handle(&fetch).unwrap().unwrap();
        assert_eq!(resp.encode()[0], OP_RESPONSE);
        assert_eq!(
            DirectoryMessage::decode(&resp.encode()).unwrap(),
            DirectoryMessage::Response {
                name: "alice".into(),
                bundle: Some(b)
            }
        );
        let miss = d
            .handle(&DirectoryMessage::Fetch { name: "zed".into() })
            .unwrap()
            .unwrap();
        assert!(matches!(miss, DirectoryMessage::Response { bundle: None, .. }));
        assert!(DirectoryMessage::decode(&[0x7f]).is_err());
    }
}
