#![allow(dead_code)]

use std::collections::BTreeMap;

use ckalab_core::cka::{
    create_group, join_from_welcome, GroupState, LeafIndex, PreKeyBundle, PreKeyPrivate, Proposal, SigningIdentity,
};
use ckalab_core::crypto::CipherSuiteProfile;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn signer(name: &str, rng: &mut ChaCha20Rng) -> SigningIdentity {
    SigningIdentity::generate(name, rng).unwrap()
}

pub fn prekey(name: &str, rng: &mut ChaCha20Rng) -> (PreKeyBundle, PreKeyPrivate) {
    let s = signer(name, rng);
    PreKeyBundle::generate(&s, CipherSuiteProfile::default(), rng)
}

/// All current members of one group, keyed by identity name.
pub struct Group {
    pub rng: ChaCha20Rng,
    pub members: BTreeMap<String, GroupState>,
    pub welcomes: usize,
}

impl Group {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng(seed);
        let creator = signer("m0", &mut rng);
        let state = create_group(creator, CipherSuiteProfile::default(), b"test-group", &mut rng).unwrap();
        Group {
            rng,
            members: BTreeMap::from([("m0".to_owned(), state)]),
            welcomes: 0,
        }
    }

    /// `m0` adds `m1..m{n-1}` one commit at a time.
    pub fn with_members(seed: u64, n: usize) -> Self {
        let mut g = Self::new(seed);
        for i in 1..n {
            g.add("m0", &format!("m{i}"));
        }
        g
    }

    /// Every member commits once, leaving no blank parent nodes.
    pub fn with_full_tree(seed: u64, n: usize) -> Self {
        let mut g = Self::with_members(seed, n);
        let names: Vec<_> = g.members.keys().cloned().collect();
        for name in names {
            g.commit(&name, |_| vec![]);
        }
        assert!(g.state("m0").tree().is_full());
        g
    }

    pub fn state(&self, name: &str) -> &GroupState {
        &self.members[name]
    }

    pub fn leaf_of(&self, name: &str) -> LeafIndex {
        self.members[name].own_leaf()
    }

    /// `committer` commits the proposals built by `f`; every other member
    /// processes the commit. Returns the commit's KEM ciphertext count.
    pub fn commit(&mut self, committer: &str, f: impl FnOnce(&mut Self) -> Vec<Proposal>) -> usize {
        let proposals = f(self);
        self.commit_with(committer, &proposals, &[])
    }

    pub fn commit_with(&mut self, committer: &str, proposals: &[Proposal], joiners: &[PreKeyPrivate]) -> usize {
        let out = self.members[committer].commit(proposals, &mut self.rng).unwrap();
        let cts = out.commit.path_ciphertext_count();
        let names: Vec<_> = self.members.keys().cloned().collect();
        let mut next = BTreeMap::new();
        for name in names {
            if name == committer {
                continue;
            }
            match self.members[&name].process_commit(&out.commit) {
                Ok(s) => {
                    next.insert(name, s);
                }
                Err(ckalab_core::cka::CkaError::RemovedFromGroup) => {}
                Err(e) => panic!("{name} failed to process commit from {committer}: {e}"),
            }
        }
        if let Some(s) = out.state {
            next.insert(committer.to_owned(), s);
        }
        if let Some(w) = out.welcome {
            for j in joiners {
                self.welcomes += 1;
                let s = join_from_welcome(j, &w).unwrap();
                next.insert(j.signer.name().to_owned(), s);
            }
        }
        self.members = next;
        cts
    }

    pub fn add(&mut self, committer: &str, name: &str) -> usize {
        let (bundle, private) = prekey(name, &mut self.rng);
        let p = self.members[committer].propose_add(bundle);
        self.commit_with(committer, &[p], &[private])
    }

    pub fn remove(&mut self, committer: &str, name: &str) -> usize {
        let leaf = self.leaf_of(name);
        let p = self.members[committer].propose_remove(leaf);
        self.commit_with(committer, &[p], &[])
    }

    pub fn assert_converged(&self) {
        let mut it = self.members.values();
        let first = it.next().unwrap();
        for s in it {
            assert_eq!(s.epoch(), first.epoch());
            assert_eq!(s.exporter_secret(), first.exporter_secret());
            assert_eq!(s.transcript_hash(), first.transcript_hash());
        }
    }
}

/// Brute-force left-balanced tree, built recursively and independent of the
/// crate's index arithmetic.
pub struct BruteTree {
    pub parent: BTreeMap<u32, u32>,
    pub children: BTreeMap<u32, (u32, u32)>,
}

impl BruteTree {
    pub fn build(n: u32) -> Self {
        let mut t = BruteTree {
            parent: BTreeMap::new(),
            children: BTreeMap::new(),
        };
        t.subtree(0, n);
        t
    }

    fn subtree(&mut self, lo: u32, hi: u32) -> u32 {
        if hi - lo == 1 {
            return 2 * lo;
        }
        let mut left = 1;
        while left * 2 < hi - lo {
            left *= 2;
        }
        let l = self.subtree(lo, lo + left);
        let r = self.subtree(lo + left, hi);
        let me = 2 * (lo + left) - 1;
        self.parent.insert(l, me);
        self.parent.insert(r, me);
        self.children.insert(me, (l, r));
        me
    }

    pub fn resolution(&self, x: u32, blank: &dyn Fn(u32) -> bool) -> Vec<u32> {
        if !blank(x) {
            return vec![x];
        }
        match self.children.get(&x) {
            None => vec![],
            Some(&(l, r)) => {
                let mut v = self.resolution(l, blank);
                v.extend(self.resolution(r, blank));
                v
            }
        }
    }

    /// Sizes of the non-empty copath resolutions of `leaf_node`.
    pub fn copath_resolution_sizes(&self, leaf_node: u32, blank: &dyn Fn(u32) -> bool) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = leaf_node;
        while let Some(&p) = self.parent.get(&cur) {
            let (l, r) = self.children[&p];
            let sib = if l == cur { r } else { l };
            let res = self.resolution(sib, blank);
            if !res.is_empty() {
                out.push(res.len());
            }
            cur = p;
        }
        out
    }
}
