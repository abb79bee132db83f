//! Wire messages of the group protocol and their binary encodings.

use ed25519_dalek::SigningKey;
use rand::{CryptoRng, RngCore};

use crate::codec::{DecodeError, DecodeErrorKind, Reader, Writer};
use crate::crypto::{self, CipherSuiteProfile, KemCiphertext, KemPrivateKey, KemPublicKey, SIGNATURE_LEN};

use super::tree::RatchetTree;
use super::tree_math::{LeafIndex, NodeIndex};
use super::CkaError;

pub const TAG_GROUP_STATE: u8 = 0x01;
pub const TAG_PROPOSAL: u8 = 0x02;
pub const TAG_COMMIT: u8 = 0x03;
pub const TAG_WELCOME: u8 = 0x04;
pub const TAG_PREKEY_BUNDLE: u8 = 0x05;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Identity {
    pub name: String,
    pub signature_public_key: [u8; 32],
}

impl Identity {
    pub fn encode(&self, w: &mut Writer) {
        w.str(&self.name).bytes(&self.signature_public_key);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.offset();
        let name = r.string()?;
        if name.is_empty() {
            return Err(r.err_at(at, DecodeErrorKind::Invalid("empty identity name")));
        }
        let key_at = r.offset();
        let key = r.bytes()?;
        let signature_public_key = key
            .try_into()
            .map_err(|_| r.err_at(key_at, DecodeErrorKind::Invalid("signature key length")))?;
        Ok(Identity {
            name,
            signature_public_key,
        })
    }
}

/// An identity together with its signing key.
#[derive(Clone)]
pub struct SigningIdentity {
    identity: Identity,
    signing_key: SigningKey,
}

impl std::fmt::Debug for SigningIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SigningIdentity")
            .field("identity", &self.identity)
            .finish_non_exhaustive()
    }
}

impl PartialEq for SigningIdentity {
    fn eq(&self, other: &Self) -> bool {
        self.identity == other.identity && self.signing_key.to_bytes() == other.signing_key.to_bytes()
    }
}

impl Eq for SigningIdentity {}

impl SigningIdentity {
    pub fn generate(name: &str, rng: &mut (impl RngCore + CryptoRng)) -> Result<Self, CkaError> {
        Self::from_signing_key(name, SigningKey::generate(rng))
    }

    pub fn from_signing_key(name: &str, signing_key: SigningKey) -> Result<Self, CkaError> {
        if name.is_empty() {
            return Err(CkaError::EmptyIdentityName);
        }
        Ok(SigningIdentity {
            identity: Identity {
                name: name.to_owned(),
                signature_public_key: signing_key.verifying_key().to_bytes(),
            },
            signing_key,
        })
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn name(&self) -> &str {
        &self.identity.name
    }

    pub(crate) fn sign(&self, label: &str, content: &[u8]) -> [u8; SIGNATURE_LEN] {
        crypto::sign(&self.signing_key, label, content)
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.str(&self.identity.name).raw(&self.signing_key.to_bytes());
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.offset();
        let name = r.string()?;
        let key: [u8; 32] = r.array()?;
        Self::from_signing_key(&name, SigningKey::from_bytes(&key))
            .map_err(|_| r.err_at(at, DecodeErrorKind::Invalid("empty identity name")))
    }
}

/// Signed public keying material published ahead of time so that others can
/// add the owner to a group without the owner being online.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreKeyBundle {
    pub identity: Identity,
    pub init_kem_public_key: KemPublicKey,
    pub suite: CipherSuiteProfile,
    pub signature: [u8; SIGNATURE_LEN],
}

/// Private half of a [`PreKeyBundle`].
#[derive(Clone, Debug)]
pub struct PreKeyPrivate {
    pub init_key: KemPrivateKey,
    pub signer: SigningIdentity,
}

impl PreKeyBundle {
    pub fn generate(
        signer: &SigningIdentity,
        suite: CipherSuiteProfile,
        rng: &mut (impl RngCore + CryptoRng),
    ) -> (PreKeyBundle, PreKeyPrivate) {
        let (init_key, init_kem_public_key) = crypto::kem_generate(rng);
        let mut bundle = PreKeyBundle {
            identity: signer.identity().clone(),
            init_kem_public_key,
            suite,
            signature: [0; SIGNATURE_LEN],
        };
        bundle.signature = signer.sign("prekey", &bundle.to_be_signed());
        (
            bundle,
            PreKeyPrivate {
                init_key,
                signer: signer.clone(),
            },
        )
    }

    fn to_be_signed(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.identity.encode(&mut w);
        w.raw(&self.init_kem_public_key.0);
        self.suite.encode(&mut w);
        w.finish()
    }

    pub fn verify(&self) -> Result<(), CkaError> {
        crypto::verify(
            &self.identity.signature_public_key,
            "prekey",
            &self.to_be_signed(),
            &self.signature,
        )
        .map_err(|_| CkaError::BadSignature)
    }

    pub fn encode_into(&self, w: &mut Writer) {
        self.identity.encode(w);
        w.raw(&self.init_kem_public_key.0);
        self.suite.encode(w);
        w.raw(&self.signature);
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PreKeyBundle {
            identity: Identity::decode(r)?,
            init_kem_public_key: KemPublicKey(r.array()?),
            suite: CipherSuiteProfile::decode(r)?,
            signature: r.array()?,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(TAG_PREKEY_BUNDLE);
        self.encode_into(&mut w);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.tag(TAG_PREKEY_BUNDLE)?;
        let b = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProposalKind {
    Add(PreKeyBundle),
    Remove(LeafIndex),
    Update(KemPublicKey),
}

impl ProposalKind {
    /// Application order within a commit: removes, then updates, then adds.
    pub(crate) fn order(&self) -> u8 {
        match self {
            ProposalKind::Remove(_) => 0,
            ProposalKind::Update(_) => 1,
            ProposalKind::Add(_) => 2,
        }
    }

    fn encode(&self, w: &mut Writer) {
        match self {
            ProposalKind::Add(b) => {
                w.u8(1);
                b.encode_into(w);
            }
            ProposalKind::Remove(l) => {
                w.u8(2).u32(l.0);
            }
            ProposalKind::Update(pk) => {
                w.u8(3).raw(&pk.0);
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let at = r.offset();
        Ok(match r.u8()? {
            1 => ProposalKind::Add(PreKeyBundle::decode_from(r)?),
            2 => ProposalKind::Remove(LeafIndex(r.u32()?)),
            3 => ProposalKind::Update(KemPublicKey(r.array()?)),
            t => return Err(r.err_at(at, DecodeErrorKind::BadTag(t))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub kind: ProposalKind,
    pub proposer: LeafIndex,
    pub signature: [u8; SIGNATURE_LEN],
}

impl Proposal {
    /// Signed content: group id, epoch, proposer and the proposal body.
    pub(crate) fn to_be_signed(group_id: &[u8], epoch: u64, proposer: LeafIndex, kind: &ProposalKind) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(group_id).u64(epoch).u32(proposer.0);
        kind.encode(&mut w);
        w.finish()
    }

    fn encode_into(&self, w: &mut Writer) {
        self.kind.encode(w);
        w.u32(self.proposer.0).raw(&self.signature);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Proposal {
            kind: ProposalKind::decode(r)?,
            proposer: LeafIndex(r.u32()?),
            signature: r.array()?,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(TAG_PROPOSAL);
        self.encode_into(&mut w);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.tag(TAG_PROPOSAL)?;
        let p = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(p)
    }
}

/// Path secret for one direct-path node, sealed to each node in the
/// resolution of the corresponding copath node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathEntry {
    pub copath_node: NodeIndex,
    pub ciphertexts: Vec<(NodeIndex, KemCiphertext)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdatePath {
    pub leaf_public_key: KemPublicKey,
    /// New keys for the committer's direct path, leaf side first.
    pub parent_public_keys: Vec<KemPublicKey>,
    pub entries: Vec<PathEntry>,
}

impl UpdatePath {
    /// Total KEM ciphertexts across all entries.
    pub fn ciphertext_count(&self) -> usize {
        self.entries.iter().map(|e| e.ciphertexts.len()).sum()
    }

    fn encode(&self, w: &mut Writer) {
        w.raw(&self.leaf_public_key.0);
        w.list(&self.parent_public_keys, |w, pk| {
            w.raw(&pk.0);
        });
        w.list(&self.entries, |w, e| {
            w.u32(e.copath_node);
            w.list(&e.ciphertexts, |w, (node, ct)| {
                w.u32(*node);
                ct.encode(w);
            });
        });
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(UpdatePath {
            leaf_public_key: KemPublicKey(r.array()?),
            parent_public_keys: r.list(|r| Ok(KemPublicKey(r.array()?)))?,
            entries: r.list(|r| {
                Ok(PathEntry {
                    copath_node: r.u32()?,
                    ciphertexts: r.list(|r| Ok((r.u32()?, KemCiphertext::decode(r)?)))?,
                })
            })?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommitMessage {
    /// Epoch the commit was created in; receivers must be at this epoch.
    pub epoch: u64,
    pub committer: LeafIndex,
    pub proposals: Vec<Proposal>,
    /// Absent only when the committer removes itself.
    pub path: Option<UpdatePath>,
    pub signature: [u8; SIGNATURE_LEN],
    pub confirmation_tag: [u8; crypto::MAC_LEN],
}

impl CommitMessage {
    pub(crate) fn content(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.epoch).u32(self.committer.0);
        w.list(&self.proposals, |w, p| p.encode_into(w));
        w.optional(self.path.as_ref(), |w, p| p.encode(w));
        w.finish()
    }

    pub(crate) fn to_be_signed(&self, group_id: &[u8]) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(group_id).raw(&self.content());
        w.finish()
    }

    /// Path entries (copath nodes with a non-empty resolution).
    pub fn path_entry_count(&self) -> usize {
        self.path.as_ref().map_or(0, |p| p.entries.len())
    }

    pub fn path_ciphertext_count(&self) -> usize {
        self.path.as_ref().map_or(0, UpdatePath::ciphertext_count)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(TAG_COMMIT)
            .raw(&self.content())
            .raw(&self.signature)
            .raw(&self.confirmation_tag);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.tag(TAG_COMMIT)?;
        let c = CommitMessage {
            epoch: r.u64()?,
            committer: LeafIndex(r.u32()?),
            proposals: r.list(Proposal::decode_from)?,
            path: r.optional(UpdatePath::decode)?,
            signature: r.array()?,
            confirmation_tag: r.array()?,
        };
        r.finish()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupSnapshot {
    pub group_id: Vec<u8>,
    pub suite: CipherSuiteProfile,
    pub epoch: u64,
    pub tree: RatchetTree,
    pub transcript_hash: [u8; 32],
}

/// Joiner secret (and optionally the path secret of the lowest direct-path
/// node shared with the committer) sealed to one new member's init key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedJoinerSecret {
    pub leaf: LeafIndex,
    pub ciphertext: KemCiphertext,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WelcomeMessage {
    pub snapshot: GroupSnapshot,
    pub joiners: Vec<SealedJoinerSecret>,
}

impl WelcomeMessage {
    pub fn encode(&self) -> Vec<u8> {
        let s = &self.snapshot;
        let mut w = Writer::new();
        w.u8(TAG_WELCOME).bytes(&s.group_id);
        s.suite.encode(&mut w);
        w.u64(s.epoch);
        s.tree.encode_public(&mut w);
        w.raw(&s.transcript_hash);
        w.list(&self.joiners, |w, j| {
            w.u32(j.leaf.0);
            j.ciphertext.encode(w);
        });
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.tag(TAG_WELCOME)?;
        let snapshot = GroupSnapshot {
            group_id: r.bytes_vec()?,
            suite: CipherSuiteProfile::decode(&mut r)?,
            epoch: r.u64()?,
            tree: RatchetTree::decode_public(&mut r)?,
            transcript_hash: r.array()?,
        };
        let joiners = r.list(|r| {
            Ok(SealedJoinerSecret {
                leaf: LeafIndex(r.u32()?),
                ciphertext: KemCiphertext::decode(r)?,
            })
        })?;
        r.finish()?;
        Ok(WelcomeMessage { snapshot, joiners })
    }
}
