//! Integrity (BIB) and confidentiality (BCB) blocks keyed from the group
//! exporter, and direction-separated record-channel keys.
//!
//! A security block body is
//! `context (u16) | target (u64) | parameters | result (len-prefixed)`,
//! where parameters are `group_id (len-prefixed) | epoch (u64) |
//! sender_leaf (u32) | nonce_seed (8 bytes)`.

use thiserror::Error;

use crate::bundle::{Block, BlockType, Bundle};
use crate::cka::{key_schedule, CkaError, GroupState, LeafIndex};
use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{self, Secret, AEAD_KEY_LEN, AEAD_NONCE_LEN, AEAD_TAG_LEN, MAC_LEN};

const IV_EXPORT_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SecurityContextId {
    /// Static pre-shared key, integrity. Used only as the comparison control.
    PskBib,
    /// Static pre-shared key, confidentiality.
    PskBcb,
    CkaBib,
    CkaBcb,
}

impl SecurityContextId {
    pub fn code(self) -> u16 {
        match self {
            SecurityContextId::PskBib => 1,
            SecurityContextId::PskBcb => 2,
            SecurityContextId::CkaBib => 100,
            SecurityContextId::CkaBcb => 101,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            1 => Some(SecurityContextId::PskBib),
            2 => Some(SecurityContextId::PskBcb),
            100 => Some(SecurityContextId::CkaBib),
            101 => Some(SecurityContextId::CkaBcb),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Bib,
    Bcb,
}

impl Purpose {
    fn label(self) -> &'static str {
        match self {
            Purpose::Bib => "bpsec/bib",
            Purpose::Bcb => "bpsec/bcb",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SecurityParameters {
    pub group_id: Vec<u8>,
    pub epoch: u64,
    pub sender_leaf: LeafIndex,
    pub nonce_seed: [u8; 8],
}

impl SecurityParameters {
    pub fn encode_into(&self, w: &mut Writer) {
        w.bytes(&self.group_id)
            .u64(self.epoch)
            .u32(self.sender_leaf.0)
            .raw(&self.nonce_seed);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.finish()
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(SecurityParameters {
            group_id: r.bytes_vec()?,
            epoch: r.u64()?,
            sender_leaf: LeafIndex(r.u32()?),
            nonce_seed: r.array()?,
        })
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct BlockKeys {
    pub key: [u8; AEAD_KEY_LEN],
    pub iv_base: [u8; AEAD_NONCE_LEN],
}

impl std::fmt::Debug for BlockKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BlockKeys(..)")
    }
}

impl BlockKeys {
    /// Per-block nonce: `iv_base` XOR the big-endian target block number.
    pub fn nonce(&self, target: u64) -> [u8; AEAD_NONCE_LEN] {
        let mut n = self.iv_base;
        for (b, t) in n[4..].iter_mut().zip(target.to_be_bytes()) {
            *b ^= t;
        }
        n
    }
}

/// Security block as carried in a BIB or BCB body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecurityBlock {
    pub context: SecurityContextId,
    pub target: u64,
    pub parameters: SecurityParameters,
    /// MAC for a BIB, AEAD tag for a BCB.
    pub result: Vec<u8>,
}

impl SecurityBlock {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u16(self.context.code()).u64(self.target);
        self.parameters.encode_into(&mut w);
        w.bytes(&self.result);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BpsecError> {
        let mut r = Reader::new(bytes);
        let code = r.u16()?;
        let context = SecurityContextId::from_code(code).ok_or(BpsecError::UnsupportedContext(code))?;
        let target = r.u64()?;
        let parameters = SecurityParameters::decode_from(&mut r)?;
        let result = r.bytes_vec()?;
        r.finish()?;
        Ok(SecurityBlock {
            context,
            target,
            parameters,
            result,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BpsecError {
    #[error("block {0} does not exist")]
    NoSuchBlock(u64),
    #[error("block {0} cannot be a security target")]
    InvalidTarget(u64),
    #[error("block {0} is already protected")]
    AlreadyProtected(u64),
    #[error("bundle carries no {0:?} block")]
    NotProtected(Purpose),
    #[error("AEAD authentication failed")]
    AuthFailure,
    #[error("integrity check failed")]
    BadMac,
    #[error("no keys held for epoch {0}")]
    UnknownEpoch(u64),
    #[error("parameters name epoch {got}, state is at {expected}")]
    EpochMismatch { expected: u64, got: u64 },
    #[error("parameters name a different group")]
    WrongGroup,
    #[error("{0} is not a current member")]
    NoSuchMember(LeafIndex),
    #[error("unsupported security context {0}")]
    UnsupportedContext(u16),
    #[error("security context {0:?} does not match this key source")]
    ContextMismatch(SecurityContextId),
    #[error(transparent)]
    Malformed(#[from] DecodeError),
    #[error(transparent)]
    Cka(#[from] CkaError),
}

/// Where block keys come from: a group state or a static key.
pub trait BlockKeySource {
    fn context(&self, purpose: Purpose) -> SecurityContextId;

    /// Keys for protecting a block now.
    fn sending_keys(&self, params: &SecurityParameters, purpose: Purpose) -> Result<BlockKeys, BpsecError>;

    /// Keys for verifying or decrypting a received block.
    fn receiving_keys(&self, params: &SecurityParameters, purpose: Purpose) -> Result<BlockKeys, BpsecError>;
}

/// Derives block keys from a 32-byte exporter (or pre-shared) secret.
pub fn keys_from_secret(secret: &Secret, params: &SecurityParameters, purpose: Purpose) -> BlockKeys {
    let ctx = params.encode();
    let key = key_schedule::export(secret, purpose.label(), &ctx, AEAD_KEY_LEN).expect("length in range");
    let iv = key_schedule::export(secret, "bpsec/iv", &ctx, IV_EXPORT_LEN).expect("length in range");
    BlockKeys {
        key: key.try_into().expect("32-byte export"),
        iv_base: iv[..AEAD_NONCE_LEN].try_into().expect("16-byte export"),
    }
}

/// Keys for `params` from the current epoch of `state`.
pub fn derive_block_keys(
    state: &GroupState,
    params: &SecurityParameters,
    purpose: Purpose,
) -> Result<BlockKeys, BpsecError> {
    if params.group_id != state.group_id() {
        return Err(BpsecError::WrongGroup);
    }
    if params.epoch != state.epoch() {
        return Err(BpsecError::EpochMismatch {
            expected: state.epoch(),
            got: params.epoch,
        });
    }
    Ok(keys_from_secret(state.exporter_secret(), params, purpose))
}

impl BlockKeySource for GroupState {
    fn context(&self, purpose: Purpose) -> SecurityContextId {
        match purpose {
            Purpose::Bib => SecurityContextId::CkaBib,
            Purpose::Bcb => SecurityContextId::CkaBcb,
        }
    }

    fn sending_keys(&self, params: &SecurityParameters, purpose: Purpose) -> Result<BlockKeys, BpsecError> {
        derive_block_keys(self, params, purpose)
    }

    fn receiving_keys(&self, params: &SecurityParameters, purpose: Purpose) -> Result<BlockKeys, BpsecError> {
        if params.group_id != self.group_id() {
            return Err(BpsecError::WrongGroup);
        }
        let secret = self
            .exporter_for_epoch(params.epoch)
            .map_err(|_| BpsecError::UnknownEpoch(params.epoch))?;
        Ok(keys_from_secret(secret, params, purpose))
    }
}

/// A long-lived shared key with no ratchet, for comparison runs.
#[derive(Clone, PartialEq, Eq)]
pub struct StaticPsk {
    pub key_id: Vec<u8>,
    pub secret: Secret,
}

impl std::fmt::Debug for StaticPsk {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StaticPsk")
            .field("key_id", &self.key_id)
            .finish_non_exhaustive()
    }
}

impl BlockKeySource for StaticPsk {
    fn context(&self, purpose: Purpose) -> SecurityContextId {
        match purpose {
            Purpose::Bib => SecurityContextId::PskBib,
            Purpose::Bcb => SecurityContextId::PskBcb,
        }
    }

    fn sending_keys(&self, params: &SecurityParameters, purpose: Purpose) -> Result<BlockKeys, BpsecError> {
        self.receiving_keys(params, purpose)
    }

    fn receiving_keys(&self, params: &SecurityParameters, purpose: Purpose) -> Result<BlockKeys, BpsecError> {
        if params.group_id != self.key_id {
            return Err(BpsecError::WrongGroup);
        }
        Ok(keys_from_secret(&self.secret, params, purpose))
    }
}

fn target_block(bundle: &Bundle, target: u64) -> Result<&Block, BpsecError> {
    let block = bundle.block(target).ok_or(BpsecError::NoSuchBlock(target))?;
    match block.block_type {
        BlockType::Payload => Ok(block),
        _ => Err(BpsecError::InvalidTarget(target)),
    }
}

fn security_blocks(
    bundle: &Bundle,
    kind: BlockType,
) -> impl Iterator<Item = (u64, Result<SecurityBlock, BpsecError>)> + '_ {
    bundle
        .blocks
        .iter()
        .filter(move |b| b.block_type == kind)
        .map(|b| (b.block_number, SecurityBlock::decode(&b.body)))
}

fn is_targeted(bundle: &Bundle, kind: BlockType, target: u64) -> bool {
    security_blocks(bundle, kind).any(|(_, sb)| sb.is_ok_and(|sb| sb.target == target))
}

fn bcb_aad(bundle: &Bundle, params: &SecurityParameters) -> Vec<u8> {
    let mut w = Writer::new();
    bundle.primary.encode(&mut w);
    params.encode_into(&mut w);
    w.finish()
}

fn bib_input(bundle: &Bundle, params: &SecurityParameters, target: &Block) -> Vec<u8> {
    let mut w = Writer::new();
    bundle.primary.encode(&mut w);
    params.encode_into(&mut w);
    w.u8(target.block_type.code())
        .u64(target.block_number)
        .u8(target.flags)
        .bytes(&target.body);
    w.finish()
}

/// The (key, nonce) pair [`apply_bcb`] would use.
pub fn bcb_key_nonce(
    source: &impl BlockKeySource,
    params: &SecurityParameters,
    target: u64,
) -> Result<([u8; AEAD_KEY_LEN], [u8; AEAD_NONCE_LEN]), BpsecError> {
    let keys = source.sending_keys(params, Purpose::Bcb)?;
    Ok((keys.key, keys.nonce(target)))
}

/// Encrypts block `target` in place and appends a BCB for it.
pub fn apply_bcb(
    mut bundle: Bundle,
    source: &impl BlockKeySource,
    target: u64,
    params: &SecurityParameters,
) -> Result<Bundle, BpsecError> {
    target_block(&bundle, target)?;
    if is_targeted(&bundle, BlockType::Bcb, target) {
        return Err(BpsecError::AlreadyProtected(target));
    }
    let keys = source.sending_keys(params, Purpose::Bcb)?;
    let aad = bcb_aad(&bundle, params);
    let block = bundle.block_mut(target).expect("checked above");
    let tag = crypto::aead_seal_detached(&keys.key, &keys.nonce(target), &aad, &mut block.body);
    let sb = SecurityBlock {
        context: source.context(Purpose::Bcb),
        target,
        parameters: params.clone(),
        result: tag.to_vec(),
    };
    let block_number = bundle.next_block_number();
    bundle.blocks.push(Block {
        block_type: BlockType::Bcb,
        block_number,
        flags: 0,
        body: sb.encode(),
    });
    Ok(bundle)
}

/// Decrypts the target of the first BCB and drops that BCB.
pub fn remove_bcb(mut bundle: Bundle, source: &impl BlockKeySource) -> Result<Bundle, BpsecError> {
    let (number, sb) = security_blocks(&bundle, BlockType::Bcb)
        .next()
        .ok_or(BpsecError::NotProtected(Purpose::Bcb))?;
    let sb = sb?;
    if sb.context != source.context(Purpose::Bcb) {
        return Err(BpsecError::ContextMismatch(sb.context));
    }
    if sb.result.len() != AEAD_TAG_LEN {
        return Err(BpsecError::AuthFailure);
    }
    target_block(&bundle, sb.target)?;
    let keys = source.receiving_keys(&sb.parameters, Purpose::Bcb)?;
    let aad = bcb_aad(&bundle, &sb.parameters);
    let block = bundle.block_mut(sb.target).expect("checked above");
    let mut body = block.body.clone();
    crypto::aead_open_detached(&keys.key, &keys.nonce(sb.target), &aad, &mut body, &sb.result)
        .map_err(|_| BpsecError::AuthFailure)?;
    block.body = body;
    bundle.blocks.retain(|b| b.block_number != number);
    Ok(bundle)
}

/// Appends a BIB carrying a MAC over the primary block and block `target`.
pub fn apply_bib(
    mut bundle: Bundle,
    source: &impl BlockKeySource,
    target: u64,
    params: &SecurityParameters,
) -> Result<Bundle, BpsecError> {
    let block = target_block(&bundle, target)?;
    if is_targeted(&bundle, BlockType::Bib, target) {
        return Err(BpsecError::AlreadyProtected(target));
    }
    let keys = source.sending_keys(params, Purpose::Bib)?;
    let tag = crypto::mac(&keys.key, &bib_input(&bundle, params, block));
    let sb = SecurityBlock {
        context: source.context(Purpose::Bib),
        target,
        parameters: params.clone(),
        result: tag.to_vec(),
    };
    let block_number = bundle.next_block_number();
    bundle.blocks.push(Block {
        block_type: BlockType::Bib,
        block_number,
        flags: 0,
        body: sb.encode(),
    });
    Ok(bundle)
}

/// Checks every BIB in the bundle.
pub fn verify_bib(bundle: &Bundle, source: &impl BlockKeySource) -> Result<(), BpsecError> {
    let mut seen = false;
    for (_, sb) in security_blocks(bundle, BlockType::Bib) {
        let sb = sb?;
        if sb.context != source.context(Purpose::Bib) {
            return Err(BpsecError::ContextMismatch(sb.context));
        }
        let block = target_block(bundle, sb.target)?;
        let keys = source.receiving_keys(&sb.parameters, Purpose::Bib)?;
        if sb.result.len() != MAC_LEN
            || !crypto::verify_mac(&keys.key, &bib_input(bundle, &sb.parameters, block), &sb.result)
        {
            return Err(BpsecError::BadMac);
        }
        seen = true;
    }
    if seen {
        Ok(())
    } else {
        Err(BpsecError::NotProtected(Purpose::Bib))
    }
}

/// Direction-separated keys between the local member and a peer.
#[derive(Clone, PartialEq, Eq)]
pub struct ChannelKeys {
    pub send: BlockKeys,
    pub recv: BlockKeys,
}

impl std::fmt::Debug for ChannelKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ChannelKeys(..)")
    }
}

fn direction_keys(state: &GroupState, from: LeafIndex, to: LeafIndex) -> BlockKeys {
    let mut w = Writer::new();
    w.u32(from.0).u32(to.0);
    let ctx = w.finish();
    let key = state.export_secret("rl", &ctx, AEAD_KEY_LEN).expect("length in range");
    let iv = state
        .export_secret("rl/iv", &ctx, IV_EXPORT_LEN)
        .expect("length in range");
    BlockKeys {
        key: key.try_into().expect("32-byte export"),
        iv_base: iv[..AEAD_NONCE_LEN].try_into().expect("16-byte export"),
    }
}

/// Keys for the record channel `(local, peer)`: `send` protects local→peer
/// traffic, `recv` opens peer→local traffic.
pub fn channel_keys(state: &GroupState, pair: (LeafIndex, LeafIndex)) -> Result<ChannelKeys, BpsecError> {
    let (local, peer) = pair;
    for leaf in [local, peer] {
        if !state.is_member(leaf) {
            return Err(BpsecError::NoSuchMember(leaf));
        }
    }
    Ok(ChannelKeys {
        send: direction_keys(state, local, peer),
        recv: direction_keys(state, peer, local),
    })
}

/// One protected record on a channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub sequence: u64,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; AEAD_TAG_LEN],
}

/// Minimal record layer over [`ChannelKeys`] with per-direction sequence
/// numbers as nonces. Records must arrive in order.
#[derive(Debug, Clone)]
pub struct RecordChannel {
    keys: ChannelKeys,
    send_seq: u64,
    recv_seq: u64,
}

impl RecordChannel {
    pub fn new(keys: ChannelKeys) -> Self {
        RecordChannel {
            keys,
            send_seq: 0,
            recv_seq: 0,
        }
    }

    pub fn seal(&mut self, plaintext: &[u8]) -> Record {
        let sequence = self.send_seq;
        self.send_seq += 1;
        let mut ciphertext = plaintext.to_vec();
        let tag = crypto::aead_seal_detached(
            &self.keys.send.key,
            &self.keys.send.nonce(sequence),
            &sequence.to_be_bytes(),
            &mut ciphertext,
        );
        Record {
            sequence,
            ciphertext,
            tag,
        }
    }

    pub fn open(&mut self, record: &Record) -> Result<Vec<u8>, BpsecError> {
        if record.sequence != self.recv_seq {
            return Err(BpsecError::AuthFailure);
        }
        let mut plaintext = record.ciphertext.clone();
        crypto::aead_open_detached(
            &self.keys.recv.key,
            &self.keys.recv.nonce(record.sequence),
            &record.sequence.to_be_bytes(),
            &mut plaintext,
            &record.tag,
        )
        .map_err(|_| BpsecError::AuthFailure)?;
        self.recv_seq += 1;
        Ok(plaintext)
    }
}
