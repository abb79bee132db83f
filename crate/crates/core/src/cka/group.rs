//! Group state and its evolution through commits.

use std::collections::BTreeSet;

use rand::{CryptoRng, RngCore};

use crate::codec::{DecodeError, DecodeErrorKind, Reader, Writer};
use crate::crypto::{self, CipherSuiteProfile, KemPrivateKey, Secret};

use super::key_schedule::{self, EpochKeys, EpochSecrets, ZERO_SECRET};
use super::messages::{
    CommitMessage, GroupSnapshot, Identity, PathEntry, PreKeyBundle, PreKeyPrivate, Proposal, ProposalKind,
    SealedJoinerSecret, SigningIdentity, UpdatePath, WelcomeMessage, TAG_GROUP_STATE,
};
use super::tree::{LeafNode, RatchetTree};
use super::tree_math::{LeafIndex, NodeIndex};
use super::CkaError;

/// A member's view of the group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupState {
    group_id: Vec<u8>,
    suite: CipherSuiteProfile,
    tree: RatchetTree,
    secrets: EpochSecrets,
    own_leaf: LeafIndex,
    transcript_hash: Secret,
    signer: SigningIdentity,
    /// Private keys for this member's own not-yet-committed Update proposals.
    pending_updates: Vec<KemPrivateKey>,
    retention_window: u32,
    /// Exporter secrets of the last `retention_window` epochs, oldest first.
    retained: Vec<(u64, Secret)>,
}

/// Result of [`GroupState::commit`]. `state` is `None` when the committer
/// removed itself.
#[derive(Debug)]
pub struct CommitOutput {
    pub state: Option<GroupState>,
    pub commit: CommitMessage,
    pub welcome: Option<WelcomeMessage>,
}

impl CommitOutput {
    /// The committer's next state. Panics if the commit removed the committer.
    pub fn into_state(self) -> GroupState {
        self.state.expect("committer removed itself")
    }
}

fn group_context_hash(
    group_id: &[u8],
    suite: &CipherSuiteProfile,
    epoch: u64,
    tree_hash: &Secret,
    transcript_hash: &Secret,
) -> Secret {
    let mut w = Writer::new();
    w.bytes(group_id);
    suite.encode(&mut w);
    w.u64(epoch).raw(tree_hash).raw(transcript_hash);
    crypto::hash(&w.finish())
}

fn path_info(group_id: &[u8], epoch: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.str("path").bytes(group_id).u64(epoch);
    w.finish()
}

fn welcome_info(group_id: &[u8], epoch: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.str("welcome").bytes(group_id).u64(epoch);
    w.finish()
}

fn next_path_secret(s: &Secret) -> Secret {
    crypto::derive_secret(s, "path")
}

/// True if `proposals` remove `leaf`. A later Add may reuse the slot, so
/// the tree alone cannot tell.
fn removes(proposals: &[Proposal], leaf: LeafIndex) -> bool {
    proposals
        .iter()
        .any(|p| matches!(p.kind, ProposalKind::Remove(l) if l == leaf))
}

/// Proposals that survived validation, with the leaves added by them.
struct Applied {
    tree: RatchetTree,
    added: Vec<(LeafIndex, PreKeyBundle)>,
}

impl GroupState {
    /// Starts a one-member group at epoch 0.
    pub fn create(
        creator: SigningIdentity,
        suite: CipherSuiteProfile,
        group_id: &[u8],
        rng: &mut (impl RngCore + CryptoRng),
    ) -> Result<GroupState, CkaError> {
        if !suite.is_registered() {
            return Err(CkaError::UnsupportedSuite);
        }
        if group_id.is_empty() {
            return Err(CkaError::EmptyGroupId);
        }
        let (leaf_sk, leaf_pk) = crypto::kem_generate(rng);
        let tree = RatchetTree::with_single_leaf(
            LeafNode {
                identity: creator.identity().clone(),
                public_key: leaf_pk,
            },
            leaf_sk,
        );
        let init = crypto::random_secret(rng);
        let commit_secret = crypto::random_secret(rng);
        let transcript_hash = ZERO_SECRET;
        let gc = group_context_hash(group_id, &suite, 0, &tree.tree_hash(), &transcript_hash);
        let keys = key_schedule::derive_epoch(&init, &commit_secret, &gc)?;
        Ok(GroupState {
            group_id: group_id.to_vec(),
            suite,
            tree,
            secrets: EpochSecrets { epoch: 0, keys },
            own_leaf: LeafIndex(0),
            transcript_hash,
            signer: creator,
            pending_updates: Vec::new(),
            retention_window: 0,
            retained: Vec::new(),
        })
    }

    pub fn group_id(&self) -> &[u8] {
        &self.group_id
    }

    pub fn suite(&self) -> CipherSuiteProfile {
        self.suite
    }

    pub fn epoch(&self) -> u64 {
        self.secrets.epoch
    }

    pub fn secrets(&self) -> &EpochSecrets {
        &self.secrets
    }

    pub fn exporter_secret(&self) -> &Secret {
        &self.secrets.keys.exporter_secret
    }

    pub fn tree(&self) -> &RatchetTree {
        &self.tree
    }

    pub fn own_leaf(&self) -> LeafIndex {
        self.own_leaf
    }

    pub fn own_identity(&self) -> &Identity {
        self.signer.identity()
    }

    pub fn transcript_hash(&self) -> &Secret {
        &self.transcript_hash
    }

    pub fn is_member(&self, leaf: LeafIndex) -> bool {
        self.tree.leaf(leaf).is_some()
    }

    pub fn member_count(&self) -> usize {
        self.tree.member_count()
    }

    pub fn retention_window(&self) -> u32 {
        self.retention_window
    }

    /// Keeps exporter secrets of up to `epochs` previous epochs. Zero (the
    /// default) keeps none.
    pub fn set_retention_window(&mut self, epochs: u32) {
        self.retention_window = epochs;
        let excess = self.retained.len().saturating_sub(epochs as usize);
        self.retained.drain(..excess);
    }

    /// Exporter secret for `epoch`: the current one, or a retained one.
    pub fn exporter_for_epoch(&self, epoch: u64) -> Result<&Secret, CkaError> {
        if epoch == self.epoch() {
            return Ok(self.exporter_secret());
        }
        self.retained
            .iter()
            .find(|(e, _)| *e == epoch)
            .map(|(_, s)| s)
            .ok_or(CkaError::UnknownEpoch(epoch))
    }

    pub fn export_secret(&self, label: &str, context: &[u8], length: usize) -> Result<Vec<u8>, CkaError> {
        key_schedule::export(self.exporter_secret(), label, context, length)
    }

    fn sign_proposal(&self, kind: ProposalKind) -> Proposal {
        let tbs = Proposal::to_be_signed(&self.group_id, self.epoch(), self.own_leaf, &kind);
        Proposal {
            signature: self.signer.sign("proposal", &tbs),
            proposer: self.own_leaf,
            kind,
        }
    }

    pub fn propose_add(&self, bundle: PreKeyBundle) -> Proposal {
        self.sign_proposal(ProposalKind::Add(bundle))
    }

    pub fn propose_remove(&self, leaf: LeafIndex) -> Proposal {
        self.sign_proposal(ProposalKind::Remove(leaf))
    }

    /// Proposes a fresh leaf key. The private key is held until a commit
    /// containing the proposal is processed.
    pub fn propose_update(&mut self, rng: &mut (impl RngCore + CryptoRng)) -> Proposal {
        let (sk, pk) = crypto::kem_generate(rng);
        self.pending_updates.push(sk);
        self.sign_proposal(ProposalKind::Update(pk))
    }

    fn validate_proposals(&self, committer: LeafIndex, proposals: &[Proposal]) -> Result<(), CkaError> {
        let invalid = |why: &'static str| CkaError::InvalidProposal(why);
        let mut removed = BTreeSet::new();
        let mut updated = BTreeSet::new();
        let mut added_names = BTreeSet::new();
        for p in proposals {
            let proposer = self.tree.leaf(p.proposer).ok_or(invalid("proposer is not a member"))?;
            let tbs = Proposal::to_be_signed(&self.group_id, self.epoch(), p.proposer, &p.kind);
            crypto::verify(&proposer.identity.signature_public_key, "proposal", &tbs, &p.signature)
                .map_err(|_| invalid("bad proposal signature"))?;
            match &p.kind {
                ProposalKind::Remove(target) => {
                    if self.tree.leaf(*target).is_none() {
                        return Err(invalid("remove target is blank"));
                    }
                    if !removed.insert(*target) {
                        return Err(invalid("duplicate remove"));
                    }
                }
                ProposalKind::Update(_) => {
                    if p.proposer == committer {
                        return Err(invalid("committer updates through its path"));
                    }
                    if !updated.insert(p.proposer) {
                        return Err(invalid("duplicate update"));
                    }
                }
                ProposalKind::Add(bundle) => {
                    bundle.verify().map_err(|_| invalid("bad pre-key bundle signature"))?;
                    if bundle.suite != self.suite {
                        return Err(invalid("pre-key bundle suite mismatch"));
                    }
                    if !added_names.insert(bundle.identity.name.clone()) {
                        return Err(invalid("duplicate add"));
                    }
                }
            }
        }
        if updated.iter().any(|l| removed.contains(l)) {
            return Err(invalid("update from a removed member"));
        }
        for name in &added_names {
            if let Some(existing) = self.tree.find_leaf_by_name(name) {
                if !removed.contains(&existing) {
                    return Err(invalid("identity already a member"));
                }
            }
        }
        Ok(())
    }

    /// Applies proposals to a copy of the tree: removes, then updates, then
    /// adds, each group in list order.
    fn apply_proposals(&self, proposals: &[Proposal]) -> Applied {
        let mut ordered: Vec<&Proposal> = proposals.iter().collect();
        ordered.sort_by_key(|p| p.kind.order());
        let mut tree = self.tree.clone();
        let mut added = Vec::new();
        for p in ordered {
            match &p.kind {
                ProposalKind::Remove(target) => tree.remove_leaf(*target),
                ProposalKind::Update(pk) => {
                    tree.set_leaf_key(p.proposer, *pk);
                    tree.blank_direct_path(p.proposer);
                }
                ProposalKind::Add(bundle) => {
                    let leaf = tree.add_leaf(LeafNode {
                        identity: bundle.identity.clone(),
                        public_key: bundle.init_kem_public_key,
                    });
                    added.push((leaf, bundle.clone()));
                }
            }
        }
        Applied { tree, added }
    }

    /// Resolutions the committer must encrypt to, excluding leaves added in
    /// this commit (they receive their secrets through the welcome).
    fn path_targets(
        tree: &RatchetTree,
        committer: LeafIndex,
        added: &[(LeafIndex, PreKeyBundle)],
    ) -> Vec<(usize, NodeIndex, Vec<NodeIndex>)> {
        let fresh: BTreeSet<NodeIndex> = added.iter().map(|(l, _)| l.node()).collect();
        tree.shape()
            .copath(committer.node())
            .into_iter()
            .enumerate()
            .filter_map(|(i, c)| {
                let res: Vec<_> = tree.resolution(c).into_iter().filter(|n| !fresh.contains(n)).collect();
                (!res.is_empty()).then_some((i, c, res))
            })
            .collect()
    }

    fn retained_after_advance(&self) -> Vec<(u64, Secret)> {
        let mut retained = self.retained.clone();
        if self.retention_window > 0 {
            retained.push((self.epoch(), *self.exporter_secret()));
            let excess = retained.len().saturating_sub(self.retention_window as usize);
            retained.drain(..excess);
        }
        retained
    }

    /// Applies `proposals`, refreshes the committer's path and moves to the
    /// next epoch.
    pub fn commit(
        &self,
        proposals: &[Proposal],
        rng: &mut (impl RngCore + CryptoRng),
    ) -> Result<CommitOutput, CkaError> {
        self.validate_proposals(self.own_leaf, proposals)?;
        let Applied { mut tree, added } = self.apply_proposals(proposals);
        if tree.member_count() == 0 {
            return Err(CkaError::WouldEmptyGroup);
        }
        let leaving = removes(proposals, self.own_leaf);
        let new_epoch = self.epoch() + 1;

        // Path secrets: chain[0] is the leaf secret, chain[i + 1] belongs to
        // direct-path node i, and the element after the root is the commit
        // secret.
        let mut chain = Vec::new();
        let path = if leaving {
            None
        } else {
            let direct = tree.shape().direct_path(self.own_leaf.node());
            chain.push(crypto::random_secret(rng));
            for _ in 0..=direct.len() {
                let next = next_path_secret(chain.last().expect("chain is non-empty"));
                chain.push(next);
            }
            let (leaf_sk, leaf_pk) = crypto::kem_derive(&chain[0]);
            tree.set_leaf_key(self.own_leaf, leaf_pk);
            tree.set_private_key(self.own_leaf.node(), leaf_sk);
            let mut parent_public_keys = Vec::with_capacity(direct.len());
            for (i, &node) in direct.iter().enumerate() {
                let (sk, pk) = crypto::kem_derive(&chain[i + 1]);
                tree.set_parent_key(node, pk);
                tree.set_private_key(node, sk);
                parent_public_keys.push(pk);
            }
            let info = path_info(&self.group_id, new_epoch);
            let mut entries = Vec::new();
            for (i, copath_node, recipients) in Self::path_targets(&tree, self.own_leaf, &added) {
                let mut ciphertexts = Vec::with_capacity(recipients.len());
                for r in recipients {
                    let pk = tree.node(r).expect("resolution nodes are occupied").public_key();
                    ciphertexts.push((r, crypto::kem_seal(pk, &info, &[], &chain[i + 1], rng)?));
                }
                entries.push(PathEntry {
                    copath_node,
                    ciphertexts,
                });
            }
            Some(UpdatePath {
                leaf_public_key: leaf_pk,
                parent_public_keys,
                entries,
            })
        };
        let commit_secret = chain.last().copied().unwrap_or(ZERO_SECRET);

        let mut commit = CommitMessage {
            epoch: self.epoch(),
            committer: self.own_leaf,
            proposals: proposals.to_vec(),
            path,
            signature: [0; crypto::SIGNATURE_LEN],
            confirmation_tag: [0; crypto::MAC_LEN],
        };
        commit.signature = self.signer.sign("commit", &commit.to_be_signed(&self.group_id));
        let transcript_hash = crypto::hash_all([&self.transcript_hash[..], &commit.content(), &commit.signature]);
        let gc = group_context_hash(
            &self.group_id,
            &self.suite,
            new_epoch,
            &tree.tree_hash(),
            &transcript_hash,
        );
        let joiner = key_schedule::joiner_secret(&self.secrets.keys.init_secret, &commit_secret)?;
        let keys = key_schedule::epoch_from_joiner(&joiner, &gc)?;
        commit.confirmation_tag = crypto::mac(&keys.confirmation_key, &transcript_hash);

        let welcome = if added.is_empty() {
            None
        } else {
            let shape = tree.shape();
            let direct = shape.direct_path(self.own_leaf.node());
            let info = welcome_info(&self.group_id, new_epoch);
            let mut joiners = Vec::with_capacity(added.len());
            for (leaf, bundle) in &added {
                let mut w = Writer::new();
                w.raw(&joiner);
                let shared = (!leaving)
                    .then(|| direct.iter().position(|&p| shape.in_subtree(p, leaf.node())))
                    .flatten();
                w.optional(shared.as_ref(), |w, &i| {
                    w.u32(direct[i]).raw(&chain[i + 1]);
                });
                joiners.push(SealedJoinerSecret {
                    leaf: *leaf,
                    ciphertext: crypto::kem_seal(&bundle.init_kem_public_key, &info, &[], &w.finish(), rng)?,
                });
            }
            let mut public_tree = tree.clone();
            public_tree.strip_private_keys();
            Some(WelcomeMessage {
                snapshot: GroupSnapshot {
                    group_id: self.group_id.clone(),
                    suite: self.suite,
                    epoch: new_epoch,
                    tree: public_tree,
                    transcript_hash,
                },
                joiners,
            })
        };

        let state = (!leaving).then(|| GroupState {
            group_id: self.group_id.clone(),
            suite: self.suite,
            tree,
            secrets: EpochSecrets { epoch: new_epoch, keys },
            own_leaf: self.own_leaf,
            transcript_hash,
            signer: self.signer.clone(),
            pending_updates: Vec::new(),
            retention_window: self.retention_window,
            retained: self.retained_after_advance(),
        });
        Ok(CommitOutput { state, commit, welcome })
    }

    /// Processes another member's commit, returning the next state.
    ///
    /// A member removed by the commit gets [`CkaError::RemovedFromGroup`]
    /// and should drop its state.
    pub fn process_commit(&self, msg: &CommitMessage) -> Result<GroupState, CkaError> {
        if msg.epoch != self.epoch() {
            return Err(CkaError::EpochMismatch {
                expected: self.epoch(),
                got: msg.epoch,
            });
        }
        if msg.committer == self.own_leaf {
            return Err(CkaError::OwnCommit);
        }
        let committer = self
            .tree
            .leaf(msg.committer)
            .ok_or(CkaError::InvalidCommit("committer is not a member"))?;
        crypto::verify(
            &committer.identity.signature_public_key,
            "commit",
            &msg.to_be_signed(&self.group_id),
            &msg.signature,
        )
        .map_err(|_| CkaError::BadSignature)?;
        self.validate_proposals(msg.committer, &msg.proposals)?;
        if removes(&msg.proposals, self.own_leaf) {
            return Err(CkaError::RemovedFromGroup);
        }
        let Applied { mut tree, added } = self.apply_proposals(&msg.proposals);
        let own_node = self.own_leaf.node();
        if let Some(own) = tree.leaf(self.own_leaf) {
            let pk = own.public_key;
            if let Some(sk) = self.pending_updates.iter().find(|sk| sk.public_key() == pk) {
                tree.set_private_key(own_node, sk.clone());
            }
        }
        let new_epoch = self.epoch() + 1;
        let committer_left = removes(&msg.proposals, msg.committer);
        let commit_secret = match (&msg.path, committer_left) {
            (None, true) => ZERO_SECRET,
            (Some(path), false) => self.apply_path(&mut tree, msg.committer, path, &added, new_epoch)?,
            _ => return Err(CkaError::InvalidCommit("path presence does not match committer status")),
        };

        let transcript_hash = crypto::hash_all([&self.transcript_hash[..], &msg.content(), &msg.signature]);
        let gc = group_context_hash(
            &self.group_id,
            &self.suite,
            new_epoch,
            &tree.tree_hash(),
            &transcript_hash,
        );
        let keys = key_schedule::derive_epoch(&self.secrets.keys.init_secret, &commit_secret, &gc)?;
        if !crypto::verify_mac(&keys.confirmation_key, &transcript_hash, &msg.confirmation_tag) {
            return Err(CkaError::BadConfirmation);
        }
        Ok(GroupState {
            group_id: self.group_id.clone(),
            suite: self.suite,
            tree,
            secrets: EpochSecrets { epoch: new_epoch, keys },
            own_leaf: self.own_leaf,
            transcript_hash,
            signer: self.signer.clone(),
            pending_updates: Vec::new(),
            retention_window: self.retention_window,
            retained: self.retained_after_advance(),
        })
    }

    /// Installs the committer's new path keys, decrypts this member's path
    /// secret and returns the commit secret.
    fn apply_path(
        &self,
        tree: &mut RatchetTree,
        committer: LeafIndex,
        path: &UpdatePath,
        added: &[(LeafIndex, PreKeyBundle)],
        new_epoch: u64,
    ) -> Result<Secret, CkaError> {
        let shape = tree.shape();
        let direct = shape.direct_path(committer.node());
        if path.parent_public_keys.len() != direct.len() {
            return Err(CkaError::InvalidCommit("path length"));
        }
        let expected = Self::path_targets(tree, committer, added);
        let shape_ok = expected.len() == path.entries.len()
            && expected.iter().zip(&path.entries).all(|((_, c, res), e)| {
                *c == e.copath_node
                    && res.len() == e.ciphertexts.len()
                    && res.iter().zip(&e.ciphertexts).all(|(r, (n, _))| r == n)
            });
        if !shape_ok {
            return Err(CkaError::InvalidCommit("path entries do not match copath resolution"));
        }
        let own_node = self.own_leaf.node();
        let (pos, entry) = expected
            .iter()
            .zip(&path.entries)
            .find(|((_, c, _), _)| shape.in_subtree(*c, own_node))
            .map(|((i, _, _), e)| (*i, e))
            .ok_or(CkaError::NoPathSecret)?;
        let (node, ct) = entry
            .ciphertexts
            .iter()
            .find(|(n, _)| tree.private_key(*n).is_some())
            .ok_or(CkaError::NoPathSecret)?;
        let sk = tree.private_key(*node).expect("checked above").clone();
        let secret: Secret = crypto::kem_open(&sk, ct, &path_info(&self.group_id, new_epoch), &[])?
            .try_into()
            .map_err(|_| CkaError::InvalidCommit("path secret length"))?;

        tree.set_leaf_key(committer, path.leaf_public_key);
        for (&node, pk) in direct.iter().zip(&path.parent_public_keys) {
            tree.set_parent_key(node, *pk);
        }
        let mut s = secret;
        for (&node, expected_pk) in direct.iter().zip(&path.parent_public_keys).skip(pos) {
            let (sk, pk) = crypto::kem_derive(&s);
            if pk != *expected_pk {
                return Err(CkaError::BadPathKey);
            }
            tree.set_private_key(node, sk);
            s = next_path_secret(&s);
        }
        Ok(s)
    }

    /// Joins a group from a welcome addressed to `prekey`'s init key.
    pub fn join(prekey: &PreKeyPrivate, welcome: &WelcomeMessage) -> Result<GroupState, CkaError> {
        let snap = &welcome.snapshot;
        if !snap.suite.is_registered() {
            return Err(CkaError::UnsupportedSuite);
        }
        let own_pk = prekey.init_key.public_key();
        let info = welcome_info(&snap.group_id, snap.epoch);
        let (own_leaf, plaintext) = welcome
            .joiners
            .iter()
            .filter(|j| snap.tree.leaf(j.leaf).is_some_and(|l| l.public_key == own_pk))
            .find_map(|j| {
                crypto::kem_open(&prekey.init_key, &j.ciphertext, &info, &[])
                    .ok()
                    .map(|pt| (j.leaf, pt))
            })
            .ok_or(CkaError::NotAddressedToMe)?;
        if snap.tree.leaf(own_leaf).map(|l| &l.identity) != Some(prekey.signer.identity()) {
            return Err(CkaError::NotAddressedToMe);
        }

        let mut r = Reader::new(&plaintext);
        let parse = |r: &mut Reader<'_>| -> Result<(Secret, Option<(NodeIndex, Secret)>), DecodeError> {
            let joiner = r.array()?;
            let shared = r.optional(|r| Ok((r.u32()?, r.array()?)))?;
            Ok((joiner, shared))
        };
        let (joiner, shared) = parse(&mut r).map_err(CkaError::Decode)?;
        r.finish().map_err(CkaError::Decode)?;

        let mut tree = snap.tree.clone();
        tree.set_private_key(own_leaf.node(), prekey.init_key.clone());
        if let Some((start, secret)) = shared {
            let direct = tree.shape().direct_path(own_leaf.node());
            let pos = direct
                .iter()
                .position(|&p| p == start)
                .ok_or(CkaError::InvalidWelcome)?;
            let mut s = secret;
            for &node in &direct[pos..] {
                let (sk, pk) = crypto::kem_derive(&s);
                if tree.node(node).map(|n| *n.public_key()) != Some(pk) {
                    return Err(CkaError::BadPathKey);
                }
                tree.set_private_key(node, sk);
                s = next_path_secret(&s);
            }
        }
        let gc = group_context_hash(
            &snap.group_id,
            &snap.suite,
            snap.epoch,
            &tree.tree_hash(),
            &snap.transcript_hash,
        );
        let keys = key_schedule::epoch_from_joiner(&joiner, &gc)?;
        Ok(GroupState {
            group_id: snap.group_id.clone(),
            suite: snap.suite,
            tree,
            secrets: EpochSecrets {
                epoch: snap.epoch,
                keys,
            },
            own_leaf,
            transcript_hash: snap.transcript_hash,
            signer: prekey.signer.clone(),
            pending_updates: Vec::new(),
            retention_window: 0,
            retained: Vec::new(),
        })
    }

    /// Deterministic serialization of the complete state, private keys
    /// included.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(TAG_GROUP_STATE).bytes(&self.group_id);
        self.suite.encode(&mut w);
        w.u32(self.own_leaf.0).u64(self.secrets.epoch);
        for s in self.secrets.keys.as_array() {
            w.raw(s);
        }
        w.raw(&self.transcript_hash);
        self.tree.encode_full(&mut w);
        self.signer.encode(&mut w);
        w.list(&self.pending_updates, |w, k| {
            w.raw(&k.0);
        });
        w.u32(self.retention_window);
        w.list(&self.retained, |w, (e, s)| {
            w.u64(*e).raw(s);
        });
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.tag(TAG_GROUP_STATE)?;
        let group_id = r.bytes_vec()?;
        let suite = CipherSuiteProfile::decode(&mut r)?;
        let leaf_at = r.offset();
        let own_leaf = LeafIndex(r.u32()?);
        let epoch = r.u64()?;
        let keys = EpochKeys {
            init_secret: r.array()?,
            epoch_secret: r.array()?,
            exporter_secret: r.array()?,
            confirmation_key: r.array()?,
        };
        let transcript_hash = r.array()?;
        let tree = RatchetTree::decode_full(&mut r)?;
        if tree.leaf(own_leaf).is_none() {
            return Err(r.err_at(leaf_at, DecodeErrorKind::Invalid("own leaf is blank")));
        }
        let signer = SigningIdentity::decode(&mut r)?;
        let pending_updates = r.list(|r| Ok(KemPrivateKey(r.array()?)))?;
        let retention_window = r.u32()?;
        let retained = r.list(|r| Ok((r.u64()?, r.array()?)))?;
        r.finish()?;
        Ok(GroupState {
            group_id,
            suite,
            tree,
            secrets: EpochSecrets { epoch, keys },
            own_leaf,
            transcript_hash,
            signer,
            pending_updates,
            retention_window,
            retained,
        })
    }
}
