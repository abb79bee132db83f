//! Continuous group key agreement over a left-balanced ratchet tree.
//!
//! A reduced MLS-style profile: add, update and remove proposals carried
//! inline in commits, welcome-based joins and an exporter for downstream
//! keys. Every commit refreshes the committer's path, so each epoch injects
//! fresh entropy and old secrets are dropped from the state value.

mod group;
pub mod key_schedule;
mod messages;
pub mod tree;
pub mod tree_math;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::DecodeError;
use crate::crypto::{CipherSuiteProfile, CryptoError};

pub use group::{CommitOutput, GroupState};
pub use key_schedule::{derive_epoch, EpochKeys, EpochSecrets};
pub use messages::{
    CommitMessage, GroupSnapshot, Identity, PathEntry, PreKeyBundle, PreKeyPrivate, Proposal, ProposalKind,
    SealedJoinerSecret, SigningIdentity, UpdatePath, WelcomeMessage,
};
pub use tree::{CopathResolution, RatchetTree};
pub use tree_math::{tree_math, LeafIndex, NodeIndex, TreeMath, TreeShape};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CkaError {
    #[error("ciphersuite is not registered")]
    UnsupportedSuite,
    #[error("group id must not be empty")]
    EmptyGroupId,
    #[error("identity name must not be empty")]
    EmptyIdentityName,
    #[error("a tree needs at least one leaf")]
    EmptyTree,
    #[error("leaf {0} is blank")]
    BlankLeaf(u32),
    #[error("secret must be 32 bytes, got {0}")]
    BadSecretLength(usize),
    #[error("export length {0} out of range")]
    BadLength(usize),
    #[error("export label too long")]
    LabelTooLong,
    #[error("invalid proposal: {0}")]
    InvalidProposal(&'static str),
    #[error("invalid commit: {0}")]
    InvalidCommit(&'static str),
    #[error("commit would leave the group empty")]
    WouldEmptyGroup,
    #[error("commit is for epoch {got}, state is at {expected}")]
    EpochMismatch { expected: u64, got: u64 },
    #[error("no secrets held for epoch {0}")]
    UnknownEpoch(u64),
    #[error("confirmation tag mismatch")]
    BadConfirmation,
    #[error("signature verification failed")]
    BadSignature,
    #[error("path public key does not match the decrypted secret")]
    BadPathKey,
    #[error("no path ciphertext addressed to a key this member holds")]
    NoPathSecret,
    #[error("a member cannot process its own commit")]
    OwnCommit,
    #[error("this member was removed from the group")]
    RemovedFromGroup,
    #[error("welcome is not addressed to this pre-key")]
    NotAddressedToMe,
    #[error("welcome is inconsistent")]
    InvalidWelcome,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

pub fn create_group(
    creator: SigningIdentity,
    suite: CipherSuiteProfile,
    group_id: &[u8],
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<GroupState, CkaError> {
    GroupState::create(creator, suite, group_id, rng)
}

pub fn copath_resolution(tree: &RatchetTree, leaf: LeafIndex) -> Result<Vec<CopathResolution>, CkaError> {
    tree.copath_resolution(leaf)
}

pub fn commit(
    state: &GroupState,
    proposals: &[Proposal],
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<CommitOutput, CkaError> {
    state.commit(proposals, rng)
}

pub fn process_commit(state: &GroupState, msg: &CommitMessage) -> Result<GroupState, CkaError> {
    state.process_commit(msg)
}

pub fn join_from_welcome(prekey: &PreKeyPrivate, welcome: &WelcomeMessage) -> Result<GroupState, CkaError> {
    GroupState::join(prekey, welcome)
}

pub fn export_secret(state: &GroupState, label: &str, context: &[u8], length: usize) -> Result<Vec<u8>, CkaError> {
    state.export_secret(label, context, length)
}
