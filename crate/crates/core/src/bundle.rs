//! Bundle model with a deterministic binary codec.
//!
//! Layout: tag `0xB7`, primary block, then a counted list of blocks. Each
//! block is `type (u8) | number (u64) | flags (u8) | body (len-prefixed)`.
//! Times are simulation microseconds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, DecodeErrorKind, Reader, Writer};
use crate::time::SimTime;

pub const BUNDLE_VERSION: u8 = 7;
pub const MAX_PAYLOAD_LEN: usize = 16 * 1024 * 1024;
pub const MAX_ENDPOINT_NAME_LEN: usize = 64;
pub const PAYLOAD_BLOCK_NUMBER: u64 = 1;
/// Number given to the Age block by [`create_bundle`].
pub const AGE_BLOCK_NUMBER: u64 = 2;

const TAG_BUNDLE: u8 = 0xB7;
const SCHEME_NODE: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BundleError {
    #[error("endpoint name must not be empty")]
    EmptyEndpointName,
    #[error("endpoint name is {0} bytes, limit is 64")]
    EndpointNameTooLong(usize),
    #[error("endpoint id must look like node:<name>")]
    BadEndpointId,
    #[error("lifetime must be positive")]
    ZeroLifetime,
    #[error("payload of {0} bytes exceeds the 16 MiB limit")]
    PayloadTooLarge(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Node,
}

/// `node:<name>` endpoint.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EndpointId {
    scheme: Scheme,
    name: String,
}

impl EndpointId {
    pub fn node(name: &str) -> Result<Self, BundleError> {
        if name.is_empty() {
            return Err(BundleError::EmptyEndpointName);
        }
        if name.len() > MAX_ENDPOINT_NAME_LEN {
            return Err(BundleError::EndpointNameTooLong(name.len()));
        }
        Ok(EndpointId {
            scheme: Scheme::Node,
            name: name.to_owned(),
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn encode(&self, w: &mut Writer) {
        w.u8(SCHEME_NODE).str(&self.name);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.offset();
        if r.u8()? != SCHEME_NODE {
            return Err(r.err_at(at, DecodeErrorKind::Invalid("endpoint scheme")));
        }
        let name_at = r.offset();
        let name = r.string()?;
        EndpointId::node(&name).map_err(|_| r.err_at(name_at, DecodeErrorKind::Invalid("endpoint name")))
    }
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node:{}", self.name)
    }
}

impl FromStr for EndpointId {
    type Err = BundleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let name = s.strip_prefix("node:").ok_or(BundleError::BadEndpointId)?;
        EndpointId::node(name)
    }
}

impl TryFrom<String> for EndpointId {
    type Error = BundleError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<EndpointId> for String {
    fn from(e: EndpointId) -> String {
        e.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimaryBlock {
    pub version: u8,
    pub source: EndpointId,
    pub destination: EndpointId,
    pub creation_time: SimTime,
    pub sequence: u64,
    pub lifetime: SimTime,
}

impl PrimaryBlock {
    pub fn encode(&self, w: &mut Writer) {
        w.u8(self.version);
        self.source.encode(w);
        self.destination.encode(w);
        w.u64(self.creation_time.as_micros())
            .u64(self.sequence)
            .u64(self.lifetime.as_micros());
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.finish()
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.offset();
        let version = r.u8()?;
        if version != BUNDLE_VERSION {
            return Err(r.err_at(at, DecodeErrorKind::Invalid("bundle version")));
        }
        let source = EndpointId::decode(r)?;
        let destination = EndpointId::decode(r)?;
        let creation_time = SimTime(r.u64()?);
        let sequence = r.u64()?;
        let at = r.offset();
        let lifetime = SimTime(r.u64()?);
        if lifetime == SimTime::ZERO {
            return Err(r.err_at(at, DecodeErrorKind::Invalid("zero lifetime")));
        }
        Ok(PrimaryBlock {
            version,
            source,
            destination,
            creation_time,
            sequence,
            lifetime,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockType {
    Payload,
    Age,
    Bib,
    Bcb,
}

impl BlockType {
    pub fn code(self) -> u8 {
        match self {
            BlockType::Payload => 1,
            BlockType::Age => 7,
            BlockType::Bib => 11,
            BlockType::Bcb => 12,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BlockType::Payload),
            7 => Some(BlockType::Age),
            11 => Some(BlockType::Bib),
            12 => Some(BlockType::Bcb),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub block_type: BlockType,
    pub block_number: u64,
    pub flags: u8,
    #[serde(with = "hex_body")]
    pub body: Vec<u8>,
}

mod hex_body {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bundle {
    pub primary: PrimaryBlock,
    pub blocks: Vec<Block>,
}

/// The bundle outlived its lifetime and must not be forwarded.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bundle expired: age {age} exceeds lifetime {lifetime}")]
pub struct Expired {
    pub age: SimTime,
    pub lifetime: SimTime,
}

/// Builds a bundle holding `payload` (block 1) and a zero Age block.
pub fn create_bundle(
    source: EndpointId,
    destination: EndpointId,
    payload: &[u8],
    lifetime: SimTime,
    now: SimTime,
    sequence: u64,
) -> Result<Bundle, BundleError> {
    if lifetime == SimTime::ZERO {
        return Err(BundleError::ZeroLifetime);
    }
    if payload.len() > MAX_PAYLOAD_LEN {
        return Err(BundleError::PayloadTooLarge(payload.len()));
    }
    Ok(Bundle {
        primary: PrimaryBlock {
            version: BUNDLE_VERSION,
            source,
            destination,
            creation_time: now,
            sequence,
            lifetime,
        },
        blocks: vec![
            Block {
                block_type: BlockType::Payload,
                block_number: PAYLOAD_BLOCK_NUMBER,
                flags: 0,
                body: payload.to_vec(),
            },
            Block {
                block_type: BlockType::Age,
                block_number: AGE_BLOCK_NUMBER,
                flags: 0,
                body: 0u64.to_be_bytes().to_vec(),
            },
        ],
    })
}

impl Bundle {
    pub fn block(&self, number: u64) -> Option<&Block> {
        self.blocks.iter().find(|b| b.block_number == number)
    }

    pub fn block_mut(&mut self, number: u64) -> Option<&mut Block> {
        self.blocks.iter_mut().find(|b| b.block_number == number)
    }

    pub fn payload(&self) -> &[u8] {
        &self
            .block(PAYLOAD_BLOCK_NUMBER)
            .expect("bundle has a payload block")
            .body
    }

    /// Smallest block number above every number in use.
    pub fn next_block_number(&self) -> u64 {
        self.blocks.iter().map(|b| b.block_number).max().unwrap_or(0) + 1
    }

    /// Accumulated age, zero without an Age block.
    pub fn age(&self) -> SimTime {
        self.blocks
            .iter()
            .find(|b| b.block_type == BlockType::Age)
            .and_then(|b| b.body.as_slice().try_into().ok())
            .map(|raw| SimTime(u64::from_be_bytes(raw)))
            .unwrap_or(SimTime::ZERO)
    }

    fn set_age(&mut self, age: SimTime) {
        let body = age.as_micros().to_be_bytes().to_vec();
        match self.blocks.iter_mut().find(|b| b.block_type == BlockType::Age) {
            Some(b) => b.body = body,
            None => {
                let block_number = self.next_block_number();
                self.blocks.push(Block {
                    block_type: BlockType::Age,
                    block_number,
                    flags: 0,
                    body,
                });
            }
        }
    }

    pub fn encoded_len(&self) -> usize {
        self.encode().len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(TAG_BUNDLE);
        self.primary.encode(&mut w);
        w.list(&self.blocks, |w, b| {
            w.u8(b.block_type.code()).u64(b.block_number).u8(b.flags).bytes(&b.body);
        });
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.tag(TAG_BUNDLE)?;
        let primary = PrimaryBlock::decode(&mut r)?;
        let mut numbers = std::collections::BTreeSet::new();
        let mut payloads = 0;
        let mut ages = 0;
        let blocks = r.list(|r| {
            let at = r.offset();
            let code = r.u8()?;
            let block_type =
                BlockType::from_code(code).ok_or_else(|| r.err_at(at, DecodeErrorKind::Invalid("block type")))?;
            let number_at = r.offset();
            let block_number = r.u64()?;
            if !numbers.insert(block_number) {
                return Err(r.err_at(number_at, DecodeErrorKind::Invalid("duplicate block number")));
            }
            let flags = r.u8()?;
            let body_at = r.offset();
            let body = r.bytes_vec()?;
            match block_type {
                BlockType::Payload => {
                    payloads += 1;
                    if block_number != PAYLOAD_BLOCK_NUMBER {
                        return Err(r.err_at(number_at, DecodeErrorKind::Invalid("payload block number")));
                    }
                    if body.len() > MAX_PAYLOAD_LEN {
                        return Err(r.err_at(body_at, DecodeErrorKind::LengthOverflow(body.len())));
                    }
                }
                BlockType::Age => {
                    ages += 1;
                    if ages > 1 || body.len() != 8 {
                        return Err(r.err_at(body_at, DecodeErrorKind::Invalid("age block")));
                    }
                }
                BlockType::Bib | BlockType::Bcb => {}
            }
            if block_type != BlockType::Payload && block_number == PAYLOAD_BLOCK_NUMBER {
                return Err(r.err_at(number_at, DecodeErrorKind::Invalid("block number 1 is reserved")));
            }
            Ok(Block {
                block_type,
                block_number,
                flags,
                body,
            })
        })?;
        if payloads != 1 {
            return Err(r.err(DecodeErrorKind::Invalid("bundle needs exactly one payload block")));
        }
        r.finish()?;
        Ok(Bundle { primary, blocks })
    }
}

/// Adds `elapsed` (time held at the previous hop plus link delay) to the
/// Age block. An age above the lifetime expires the bundle.
pub fn process_at_hop(mut bundle: Bundle, elapsed: SimTime) -> Result<Bundle, Expired> {
    let age = bundle.age().saturating_add(elapsed);
    if age > bundle.primary.lifetime {
        return Err(Expired {
            age,
            lifetime: bundle.primary.lifetime,
        });
    }
    bundle.set_age(age);
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(n: &str) -> EndpointId {
        EndpointId::node(n).unwrap()
    }

    fn hi() -> Bundle {
        create_bundle(ep("A"), ep("B"), b"hi", SimTime::from_secs(3600), SimTime::ZERO, 0).unwrap()
    }

    #[test]
    fn create_has_payload_and_age() {
        let b = hi();
        assert_eq!(b.blocks.len(), 2);
        assert_eq!(b.blocks[0].block_type, BlockType::Payload);
        assert_eq!(b.blocks[0].block_number, 1);
        assert_eq!(b.blocks[1].block_type, BlockType::Age);
        assert_eq!(b.age(), SimTime::ZERO);
        assert_eq!(b.payload(), b"hi");
    }

    #[test]
    fn create_rejects_bad_inputs() {
        let zero = create_bundle(ep("A"), ep("B"), b"", SimTime::ZERO, SimTime::ZERO, 0);
        assert_eq!(zero.unwrap_err(), BundleError::ZeroLifetime);
        let max = vec![0u8; MAX_PAYLOAD_LEN];
        assert!(create_bundle(ep("A"), ep("B"), &max, SimTime::TICK, SimTime::ZERO, 0).is_ok());
        let over = vec![0u8; MAX_PAYLOAD_LEN + 1];
        assert_eq!(
            create_bundle(ep("A"), ep("B"), &over, SimTime::TICK, SimTime::ZERO, 0).unwrap_err(),
            BundleError::PayloadTooLarge(MAX_PAYLOAD_LEN + 1)
        );
    }

    #[test]
    fn endpoint_rules() {
        assert_eq!(EndpointId::node("").unwrap_err(), BundleError::EmptyEndpointName);
        assert!(EndpointId::node(&"x".repeat(64)).is_ok());
        assert_eq!(
            EndpointId::node(&"x".repeat(65)).unwrap_err(),
            BundleError::EndpointNameTooLong(65)
        );
        assert_eq!("node:earth".parse::<EndpointId>().unwrap(), ep("earth"));
        assert_eq!(
            "dtn://earth".parse::<EndpointId>().unwrap_err(),
            BundleError::BadEndpointId
        );
    }

    #[test]
    fn empty_input_fails_at_zero() {
        let err = Bundle::decode(&[]).unwrap_err();
        assert_eq!(err.offset, 0);
        assert_eq!(err.kind, DecodeErrorKind::UnexpectedEof);
    }

    #[test]
    fn decode_rejects_duplicate_numbers_and_trailing_bytes() {
        let mut b = hi();
        b.blocks[1].block_type = BlockType::Bib;
        b.blocks[1].block_number = 1;
        let err = Bundle::decode(&b.encode()).unwrap_err();
        assert_eq!(err.kind, DecodeErrorKind::Invalid("duplicate block number"));

        let mut bytes = hi().encode();
        bytes.push(0);
        assert_eq!(
            Bundle::decode(&bytes).unwrap_err().kind,
            DecodeErrorKind::TrailingBytes(1)
        );
    }

    #[test]
    fn decode_requires_one_payload() {
        let mut b = hi();
        b.blocks.remove(0);
        assert!(Bundle::decode(&b.encode()).is_err());
    }

    #[test]
    fn hop_ages_and_expires() {
        let b = process_at_hop(hi(), SimTime::from_secs(10)).unwrap();
        assert_eq!(b.age(), SimTime::from_secs(10));

        let mut short = hi();
        short.primary.lifetime = SimTime::from_secs(100);
        let short = process_at_hop(short, SimTime::from_secs(99)).unwrap();
        let err = process_at_hop(short, SimTime::from_secs(2)).unwrap_err();
        assert_eq!(err.age, SimTime::from_secs(101));
    }

    #[test]
    fn three_hops_sum_their_delays() {
        let mut b = hi();
        for _ in 0..3 {
            b = process_at_hop(b, SimTime::from_secs(5)).unwrap();
        }
        assert_eq!(b.age(), SimTime::from_secs(15));
    }

    #[test]
    fn age_equal_to_lifetime_still_forwards() {
        let mut b = hi();
        b.primary.lifetime = SimTime::from_secs(10);
        assert!(process_at_hop(b, SimTime::from_secs(10)).is_ok());
    }

    #[test]
    fn hop_adds_missing_age_block() {
        let mut b = hi();
        b.blocks.retain(|blk| blk.block_type != BlockType::Age);
        let b = process_at_hop(b, SimTime::from_secs(1)).unwrap();
        assert_eq!(b.age(), SimTime::from_secs(1));
        assert_eq!(Bundle::decode(&b.encode()).unwrap(), b);
    }

    #[test]
    fn json_form_round_trips() {
        let b = hi();
        let json = serde_json::to_string(&b).unwrap();
        assert!(json.contains("\"node:A\""));
        assert!(json.contains("\"6869\""));
        assert_eq!(serde_json::from_str::<Bundle>(&json).unwrap(), b);
    }
}
