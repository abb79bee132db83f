//! The ratchet tree: public keys for every occupied node plus the private
//! keys the local member knows.

use std::collections::BTreeMap;

use crate::codec::{DecodeError, DecodeErrorKind, Reader, Writer};
use crate::crypto::{self, KemPrivateKey, KemPublicKey, Secret};

use super::messages::Identity;
use super::tree_math::{is_leaf, LeafIndex, NodeIndex, TreeShape};
use super::CkaError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafNode {
    pub identity: Identity,
    pub public_key: KemPublicKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Leaf(LeafNode),
    Parent(KemPublicKey),
}

impl Node {
    pub fn public_key(&self) -> &KemPublicKey {
        match self {
            Node::Leaf(l) => &l.public_key,
            Node::Parent(pk) => pk,
        }
    }
}

/// Resolution of one copath node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopathResolution {
    pub copath_node: NodeIndex,
    pub resolution: Vec<NodeIndex>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatchetTree {
    nodes: Vec<Option<Node>>,
    private_keys: BTreeMap<NodeIndex, KemPrivateKey>,
}

impl RatchetTree {
    pub fn with_single_leaf(leaf: LeafNode, private_key: KemPrivateKey) -> Self {
        RatchetTree {
            nodes: vec![Some(Node::Leaf(leaf))],
            private_keys: BTreeMap::from([(0, private_key)]),
        }
    }

    pub fn shape(&self) -> TreeShape {
        TreeShape::new(self.leaf_count()).expect("tree always has a leaf")
    }

    pub fn leaf_count(&self) -> u32 {
        (self.nodes.len() as u32).div_ceil(2)
    }

    pub fn node_count(&self) -> u32 {
        self.nodes.len() as u32
    }

    pub fn node(&self, x: NodeIndex) -> Option<&Node> {
        self.nodes.get(x as usize).and_then(Option::as_ref)
    }

    pub fn is_blank(&self, x: NodeIndex) -> bool {
        self.node(x).is_none()
    }

    pub fn leaf(&self, leaf: LeafIndex) -> Option<&LeafNode> {
        if leaf.0 >= self.leaf_count() {
            return None;
        }
        match self.node(leaf.node()) {
            Some(Node::Leaf(l)) => Some(l),
            _ => None,
        }
    }

    /// Occupied leaves in index order.
    pub fn members(&self) -> impl Iterator<Item = (LeafIndex, &LeafNode)> {
        (0..self.leaf_count()).filter_map(move |i| self.leaf(LeafIndex(i)).map(|l| (LeafIndex(i), l)))
    }

    pub fn member_count(&self) -> usize {
        self.members().count()
    }

    pub fn find_leaf_by_name(&self, name: &str) -> Option<LeafIndex> {
        self.members().find(|(_, l)| l.identity.name == name).map(|(i, _)| i)
    }

    /// True when no node is blank.
    pub fn is_full(&self) -> bool {
        self.nodes.iter().all(Option::is_some)
    }

    pub fn private_key(&self, x: NodeIndex) -> Option<&KemPrivateKey> {
        self.private_keys.get(&x)
    }

    pub fn private_keys(&self) -> impl Iterator<Item = (NodeIndex, &KemPrivateKey)> {
        self.private_keys.iter().map(|(k, v)| (*k, v))
    }

    pub(crate) fn set_private_key(&mut self, x: NodeIndex, key: KemPrivateKey) {
        self.private_keys.insert(x, key);
    }

    pub(crate) fn strip_private_keys(&mut self) {
        self.private_keys.clear();
    }

    /// Non-blank nodes covering the subtree under `x`.
    pub fn resolution(&self, x: NodeIndex) -> Vec<NodeIndex> {
        if !self.is_blank(x) {
            return vec![x];
        }
        if is_leaf(x) {
            return vec![];
        }
        let shape = self.shape();
        let mut out = self.resolution(shape.left(x).expect("parent has a left child"));
        out.extend(self.resolution(shape.right(x).expect("parent has a right child")));
        out
    }

    /// One entry per copath node of `leaf` whose resolution is non-empty,
    /// ordered from the leaf upwards.
    pub fn copath_resolution(&self, leaf: LeafIndex) -> Result<Vec<CopathResolution>, CkaError> {
        if self.leaf(leaf).is_none() {
            return Err(CkaError::BlankLeaf(leaf.0));
        }
        Ok(self
            .shape()
            .copath(leaf.node())
            .into_iter()
            .map(|c| CopathResolution {
                copath_node: c,
                resolution: self.resolution(c),
            })
            .filter(|e| !e.resolution.is_empty())
            .collect())
    }

    fn blank(&mut self, x: NodeIndex) {
        if let Some(slot) = self.nodes.get_mut(x as usize) {
            *slot = None;
        }
        self.private_keys.remove(&x);
    }

    pub(crate) fn blank_direct_path(&mut self, leaf: LeafIndex) {
        for p in self.shape().direct_path(leaf.node()) {
            self.blank(p);
        }
    }

    /// Places a new member in the leftmost blank leaf, or appends one, and
    /// blanks the new leaf's direct path.
    pub(crate) fn add_leaf(&mut self, leaf: LeafNode) -> LeafIndex {
        let idx = (0..self.leaf_count())
            .map(LeafIndex)
            .find(|&i| self.is_blank(i.node()))
            .unwrap_or_else(|| {
                self.nodes.push(None);
                self.nodes.push(None);
                LeafIndex(self.leaf_count() - 1)
            });
        self.nodes[idx.node() as usize] = Some(Node::Leaf(leaf));
        self.private_keys.remove(&idx.node());
        self.blank_direct_path(idx);
        idx
    }

    /// Blanks the leaf and its direct path, then trims trailing blank leaves.
    pub(crate) fn remove_leaf(&mut self, leaf: LeafIndex) {
        self.blank_direct_path(leaf);
        self.blank(leaf.node());
        while self.leaf_count() > 1 && self.is_blank(self.node_count() - 1) {
            let last = self.node_count() - 1;
            self.private_keys.remove(&last);
            self.private_keys.remove(&(last - 1));
            self.nodes.truncate(self.nodes.len() - 2);
        }
    }

    pub(crate) fn set_leaf_key(&mut self, leaf: LeafIndex, key: KemPublicKey) {
        if let Some(Some(Node::Leaf(l))) = self.nodes.get_mut(leaf.node() as usize) {
            l.public_key = key;
        }
        self.private_keys.remove(&leaf.node());
    }

    pub(crate) fn set_parent_key(&mut self, x: NodeIndex, key: KemPublicKey) {
        self.nodes[x as usize] = Some(Node::Parent(key));
        self.private_keys.remove(&x);
    }

    pub fn encode_public(&self, w: &mut Writer) {
        w.list(&self.nodes, |w, n| match n {
            None => {
                w.u8(0);
            }
            Some(Node::Leaf(l)) => {
                w.u8(1);
                l.identity.encode(w);
                w.raw(&l.public_key.0);
            }
            Some(Node::Parent(pk)) => {
                w.u8(2).raw(&pk.0);
            }
        });
    }

    /// Decodes a public tree. Enforces odd length, leaves at even indices
    /// only, and at least one occupied leaf.
    pub fn decode_public(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let start = r.offset();
        let mut index = 0u32;
        let nodes = r.list(|r| {
            let at = r.offset();
            let node = match r.u8()? {
                0 => None,
                1 if is_leaf(index) => Some(Node::Leaf(LeafNode {
                    identity: Identity::decode(r)?,
                    public_key: KemPublicKey(r.array()?),
                })),
                2 if !is_leaf(index) => Some(Node::Parent(KemPublicKey(r.array()?))),
                t => return Err(r.err_at(at, DecodeErrorKind::BadTag(t))),
            };
            index += 1;
            Ok(node)
        })?;
        if nodes.len() % 2 == 0 {
            return Err(r.err_at(start, DecodeErrorKind::Invalid("tree length must be odd")));
        }
        let tree = RatchetTree {
            nodes,
            private_keys: BTreeMap::new(),
        };
        if tree.member_count() == 0 {
            return Err(r.err_at(start, DecodeErrorKind::Invalid("tree has no members")));
        }
        Ok(tree)
    }

    /// Public tree followed by the private keys held locally.
    pub(crate) fn encode_full(&self, w: &mut Writer) {
        self.encode_public(w);
        let keys: Vec<_> = self.private_keys.iter().collect();
        w.list(&keys, |w, (x, k)| {
            w.u32(**x).raw(&k.0);
        });
    }

    pub(crate) fn decode_full(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let mut tree = Self::decode_public(r)?;
        let at = r.offset();
        let keys = r.list(|r| Ok((r.u32()?, KemPrivateKey(r.array()?))))?;
        for (x, k) in keys {
            if tree.is_blank(x) || tree.private_keys.insert(x, k).is_some() {
                return Err(r.err_at(at, DecodeErrorKind::Invalid("private key for blank or duplicate node")));
            }
        }
        Ok(tree)
    }

    pub fn tree_hash(&self) -> Secret {
        let mut w = Writer::new();
        self.encode_public(&mut w);
        crypto::hash(&w.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::super::tree_math::oracle::BruteTree;
    use super::*;
    use proptest::prelude::*;

    fn leaf(name: &str, b: u8) -> LeafNode {
        LeafNode {
            identity: Identity {
                name: name.into(),
                signature_public_key: [b; 32],
            },
            public_key: KemPublicKey([b; 32]),
        }
    }

    /// A tree with `n` occupied leaves and all parents set.
    pub(crate) fn full_tree(n: u32) -> RatchetTree {
        let mut nodes = Vec::new();
        for x in 0..(2 * n - 1) {
            nodes.push(Some(if is_leaf(x) {
                Node::Leaf(leaf(&format!("m{}", x / 2), x as u8))
            } else {
                Node::Parent(KemPublicKey([x as u8; 32]))
            }));
        }
        RatchetTree {
            nodes,
            private_keys: BTreeMap::new(),
        }
    }

    fn with_blanks(n: u32, mask: u64) -> RatchetTree {
        let mut t = full_tree(n);
        for x in 0..t.node_count() {
            if mask & (1 << x) != 0 {
                t.nodes[x as usize] = None;
            }
        }
        t
    }

    fn as_sets(entries: &[CopathResolution]) -> Vec<Vec<NodeIndex>> {
        entries.iter().map(|e| e.resolution.clone()).collect()
    }

    #[test]
    fn full_four_leaf_copath() {
        let t = full_tree(4);
        assert_eq!(
            as_sets(&t.copath_resolution(LeafIndex(0)).unwrap()),
            vec![vec![2], vec![5]]
        );
    }

    #[test]
    fn single_leaf_has_no_copath() {
        let t = full_tree(1);
        assert!(t.copath_resolution(LeafIndex(0)).unwrap().is_empty());
    }

    #[test]
    fn blank_parent_resolves_to_leaves() {
        // Node 5 (parent of leaves 2 and 3) blank: leaf 0 sees {2}, {4, 6}.
        let t = with_blanks(4, 1 << 5);
        assert_eq!(
            as_sets(&t.copath_resolution(LeafIndex(0)).unwrap()),
            vec![vec![2], vec![4, 6]]
        );
    }

    #[test]
    fn blank_leaf_is_rejected() {
        let t = with_blanks(4, 1 << 2);
        assert_eq!(t.copath_resolution(LeafIndex(1)), Err(CkaError::BlankLeaf(1)));
    }

    #[test]
    fn every_blanking_pattern_of_four_leaves_matches_oracle() {
        let brute = BruteTree::build(4);
        for mask in 0u64..(1 << 7) {
            let t = with_blanks(4, mask);
            let blank = |x: u32| mask & (1 << x) != 0;
            for l in 0..4 {
                let got = t.copath_resolution(LeafIndex(l));
                if blank(2 * l) {
                    assert!(got.is_err());
                } else {
                    assert_eq!(
                        as_sets(&got.unwrap()),
                        brute.copath_resolution(2 * l, &blank),
                        "mask={mask:b} leaf={l}"
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn random_blanking_matches_oracle(n in 1u32..=16, mask in any::<u64>()) {
            let t = with_blanks(n, mask);
            let brute = BruteTree::build(n);
            let blank = |x: u32| mask & (1 << x) != 0;
            for x in 0..t.node_count() {
                prop_assert_eq!(t.resolution(x), brute.resolution(x, &blank));
            }
        }

        #[test]
        fn public_encoding_round_trips(n in 1u32..=12, mask in any::<u64>()) {
            let mut t = with_blanks(n, mask & !1);
            let mut w = Writer::new();
            t.encode_public(&mut w);
            let bytes = w.finish();
            let mut r = Reader::new(&bytes);
            let back = RatchetTree::decode_public(&mut r).unwrap();
            r.finish().unwrap();
            t.private_keys.clear();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn add_fills_leftmost_blank_and_blanks_its_path() {
        let mut t = full_tree(4);
        t.remove_leaf(LeafIndex(1));
        assert!(t.is_blank(2) && t.is_blank(1) && t.is_blank(3));
        let idx = t.add_leaf(leaf("new", 99));
        assert_eq!(idx, LeafIndex(1));
        assert_eq!(t.leaf_count(), 4);
        let idx = t.add_leaf(leaf("newer", 98));
        assert_eq!(idx, LeafIndex(4));
        assert_eq!(t.node_count(), 9);
        assert!(t.shape().direct_path(8).iter().all(|&p| t.is_blank(p)));
    }

    #[test]
    fn remove_trims_trailing_blank_leaves() {
        let mut t = full_tree(5);
        t.remove_leaf(LeafIndex(4));
        assert_eq!(t.leaf_count(), 4);
        t.remove_leaf(LeafIndex(2));
        assert_eq!(t.leaf_count(), 4);
        t.remove_leaf(LeafIndex(3));
        assert_eq!(t.leaf_count(), 2);
    }
}
