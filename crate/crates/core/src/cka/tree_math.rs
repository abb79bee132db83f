//! Array indexing for left-balanced binary trees.
//!
//! Leaves sit at even indices (leaf `i` at node `2i`), parents at odd
//! indices, and the array is the in-order traversal of the tree. For `n`
//! leaves the array has `2n - 1` slots. The left subtree of every parent is
//! the largest complete subtree that fits, so appending leaves never moves an
//! existing node.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::CkaError;

pub type NodeIndex = u32;

/// Ordinal of a leaf (member slot), not its node index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LeafIndex(pub u32);

impl LeafIndex {
    pub fn node(self) -> NodeIndex {
        2 * self.0
    }

    pub fn from_node(node: NodeIndex) -> Option<LeafIndex> {
        node.is_multiple_of(2).then_some(LeafIndex(node / 2))
    }
}

impl fmt::Display for LeafIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "leaf {}", self.0)
    }
}

/// Number of trailing one bits: 0 for leaves, height for parents.
pub fn level(x: NodeIndex) -> u32 {
    x.trailing_ones()
}

pub fn is_leaf(x: NodeIndex) -> bool {
    x.is_multiple_of(2)
}

/// Shape of a tree with a fixed number of leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeShape {
    n_leaves: u32,
}

impl TreeShape {
    pub fn new(n_leaves: u32) -> Result<Self, CkaError> {
        if n_leaves == 0 {
            return Err(CkaError::EmptyTree);
        }
        Ok(TreeShape { n_leaves })
    }

    pub fn leaf_count(&self) -> u32 {
        self.n_leaves
    }

    pub fn node_count(&self) -> u32 {
        2 * self.n_leaves - 1
    }

    pub fn contains(&self, x: NodeIndex) -> bool {
        x < self.node_count()
    }

    pub fn root(&self) -> NodeIndex {
        let w = self.node_count();
        (1 << w.ilog2()) - 1
    }

    pub fn left(&self, x: NodeIndex) -> Option<NodeIndex> {
        let k = level(x);
        (k > 0).then(|| x ^ (1 << (k - 1)))
    }

    pub fn right(&self, x: NodeIndex) -> Option<NodeIndex> {
        let k = level(x);
        if k == 0 {
            return None;
        }
        let mut r = x ^ (3 << (k - 1));
        while !self.contains(r) {
            r = self.left(r)?;
        }
        Some(r)
    }

    fn parent_step(x: NodeIndex) -> NodeIndex {
        let k = level(x);
        let b = (x >> (k + 1)) & 1;
        (x | (1 << k)) ^ (b << (k + 1))
    }

    /// `None` for the root or an out-of-range index.
    pub fn parent(&self, x: NodeIndex) -> Option<NodeIndex> {
        if !self.contains(x) || x == self.root() {
            return None;
        }
        let mut p = Self::parent_step(x);
        while !self.contains(p) {
            p = Self::parent_step(p);
        }
        Some(p)
    }

    pub fn sibling(&self, x: NodeIndex) -> Option<NodeIndex> {
        let p = self.parent(x)?;
        if x < p {
            self.right(p)
        } else {
            self.left(p)
        }
    }

    /// Ancestors of `x` from its parent up to and including the root.
    pub fn direct_path(&self, x: NodeIndex) -> Vec<NodeIndex> {
        let mut out = Vec::new();
        let mut cur = x;
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Siblings of `x` and of each of its ancestors below the root.
    pub fn copath(&self, x: NodeIndex) -> Vec<NodeIndex> {
        let mut out = Vec::new();
        let mut cur = x;
        while let Some(s) = self.sibling(cur) {
            out.push(s);
            cur = self.parent(cur).expect("node with a sibling has a parent");
        }
        out
    }

    /// True if `descendant` lies in the subtree rooted at `ancestor`
    /// (a node is in its own subtree).
    pub fn in_subtree(&self, ancestor: NodeIndex, descendant: NodeIndex) -> bool {
        let span = (1u64 << level(ancestor)) - 1;
        let lo = ancestor as u64 - span;
        let hi = ancestor as u64 + span;
        let d = descendant as u64;
        self.contains(descendant) && lo <= d && d <= hi
    }

    /// Parent and sibling maps over every non-root node.
    pub fn maps(&self) -> (BTreeMap<NodeIndex, NodeIndex>, BTreeMap<NodeIndex, NodeIndex>) {
        let mut parents = BTreeMap::new();
        let mut siblings = BTreeMap::new();
        for x in 0..self.node_count() {
            if let Some(p) = self.parent(x) {
                parents.insert(x, p);
                siblings.insert(x, self.sibling(x).expect("non-root node has a sibling"));
            }
        }
        (parents, siblings)
    }
}

/// Summary returned by [`tree_math`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeMath {
    pub node_count: u32,
    pub root: NodeIndex,
    pub parent: BTreeMap<NodeIndex, NodeIndex>,
    pub sibling: BTreeMap<NodeIndex, NodeIndex>,
}

pub fn tree_math(n_leaves: u32) -> Result<TreeMath, CkaError> {
    let shape = TreeShape::new(n_leaves)?;
    let (parent, sibling) = shape.maps();
    Ok(TreeMath {
        node_count: shape.node_count(),
        root: shape.root(),
        parent,
        sibling,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force tree construction used to check the bit arithmetic above.
    //! Builds the tree recursively: the left child of a subtree over `c`
    //! leaves covers the largest power of two strictly below `c`.

    use std::collections::BTreeMap;

    #[derive(Debug, Default)]
    pub struct BruteTree {
        pub root: u32,
        pub node_count: u32,
        pub parent: BTreeMap<u32, u32>,
        pub children: BTreeMap<u32, (u32, u32)>,
    }

    impl BruteTree {
        pub fn build(n: u32) -> Self {
            let mut t = BruteTree {
                node_count: 2 * n - 1,
                ..Default::default()
            };
            t.root = t.subtree(0, n);
            t
        }

        fn subtree(&mut self, lo: u32, hi: u32) -> u32 {
            let count = hi - lo;
            if count == 1 {
                return 2 * lo;
            }
            let mut left_size = 1;
            while left_size * 2 < count {
                left_size *= 2;
            }
            let split = lo + left_size;
            let l = self.subtree(lo, split);
            let r = self.subtree(split, hi);
            let me = 2 * split - 1;
            self.parent.insert(l, me);
            self.parent.insert(r, me);
            self.children.insert(me, (l, r));
            me
        }

        pub fn sibling(&self, x: u32) -> Option<u32> {
            let p = self.parent.get(&x)?;
            let (l, r) = self.children[p];
            Some(if l == x { r } else { l })
        }

        /// Standard resolution given a blank predicate.
        pub fn resolution(&self, x: u32, blank: &dyn Fn(u32) -> bool) -> Vec<u32> {
            if !blank(x) {
                return vec![x];
            }
            match self.children.get(&x) {
                None => vec![],
                Some(&(l, r)) => {
                    let mut out = self.resolution(l, blank);
                    out.extend(self.resolution(r, blank));
                    out
                }
            }
        }

        pub fn copath_resolution(&self, leaf_node: u32, blank: &dyn Fn(u32) -> bool) -> Vec<Vec<u32>> {
            let mut out = Vec::new();
            let mut cur = leaf_node;
            while let Some(s) = self.sibling(cur) {
                let res = self.resolution(s, blank);
                if !res.is_empty() {
                    out.push(res);
                }
                cur = self.parent[&cur];
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::BruteTree;
    use super::*;

    #[test]
    fn single_leaf_is_its_own_root() {
        let m = tree_math(1).unwrap();
        assert_eq!(m.node_count, 1);
        assert_eq!(m.root, 0);
        assert!(m.parent.is_empty());
    }

    #[test]
    fn zero_leaves_is_an_error() {
        assert_eq!(tree_math(0).unwrap_err(), CkaError::EmptyTree);
    }

    #[test]
    fn four_leaves() {
        let m = tree_math(4).unwrap();
        assert_eq!(m.node_count, 7);
        assert_eq!(m.root, 3);
        assert_eq!(m.parent[&0], 1);
        assert_eq!(m.sibling[&1], 5);
    }

    #[test]
    fn three_leaves() {
        let m = tree_math(3).unwrap();
        assert_eq!(m.node_count, 5);
        assert_eq!(m.root, 3);
        assert_eq!(m.parent[&4], 3);
        assert_eq!(m.sibling[&4], 1);
    }

    #[test]
    fn matches_brute_force_up_to_64_leaves() {
        for n in 1..=64 {
            let shape = TreeShape::new(n).unwrap();
            let brute = BruteTree::build(n);
            assert_eq!(shape.node_count(), brute.node_count, "n={n}");
            assert_eq!(shape.root(), brute.root, "n={n}");
            for x in 0..shape.node_count() {
                assert_eq!(shape.parent(x), brute.parent.get(&x).copied(), "parent n={n} x={x}");
                assert_eq!(shape.sibling(x), brute.sibling(x), "sibling n={n} x={x}");
                if let Some(&(l, r)) = brute.children.get(&x) {
                    assert_eq!(shape.left(x), Some(l));
                    assert_eq!(shape.right(x), Some(r));
                }
            }
        }
    }

    #[test]
    fn subtree_membership_matches_ancestry() {
        for n in 1..=20 {
            let shape = TreeShape::new(n).unwrap();
            for a in 0..shape.node_count() {
                for d in 0..shape.node_count() {
                    let by_walk = d == a || shape.direct_path(d).contains(&a);
                    assert_eq!(shape.in_subtree(a, d), by_walk, "n={n} a={a} d={d}");
                }
            }
        }
    }

    #[test]
    fn direct_path_length_is_log2_for_full_trees() {
        for k in 0..7 {
            let shape = TreeShape::new(1 << k).unwrap();
            for leaf in 0..(1u32 << k) {
                assert_eq!(shape.direct_path(2 * leaf).len(), k as usize);
                assert_eq!(shape.copath(2 * leaf).len(), k as usize);
            }
        }
    }
}
